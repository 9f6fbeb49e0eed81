#include "wsss/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wsss/errors.hpp"
#include "wsss/image_io.hpp"

namespace wsss::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor argmax_labels(const Tensor& mask_probs) {
    if (mask_probs.ndim() != 4) throw DimensionError("argmax_labels expects (B,K,H,W), got " + mask_probs.shape_str());
    const int b = mask_probs.dim(0), k = mask_probs.dim(1), h = mask_probs.dim(2), w = mask_probs.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out({b, h, w});
    for (int bi = 0; bi < b; ++bi) {
        const double* src = mask_probs.data() + static_cast<int64_t>(bi) * k * hw;
        double* dst = out.data() + static_cast<int64_t>(bi) * hw;
        for (int64_t p = 0; p < hw; ++p) {
            int best = 0;
            double best_v = src[p];
            for (int ki = 1; ki < k; ++ki) {
                const double v = src[ki * hw + p];
                if (v > best_v) {  // strict: ties keep the lowest index
                    best_v = v;
                    best = ki;
                }
            }
            dst[p] = best;
        }
    }
    return out;
}

std::pair<Tensor, Tensor> predict_mask(models::Segmenter& seg, const core::ImageBatch& images) {
    auto [mask, decomp] = seg.forward_pair(images);
    (void)decomp;
    return {argmax_labels(mask.value()), mask.value()};
}

void accumulate_confusion(std::vector<long long>& confusion, const Tensor& pred, const Tensor& truth,
                          int num_classes) {
    if (!pred.same_shape(truth))
        throw DimensionError("confusion: prediction " + pred.shape_str() + " vs truth " + truth.shape_str());
    if (static_cast<int>(confusion.size()) != num_classes * num_classes)
        confusion.assign(static_cast<size_t>(num_classes) * num_classes, 0);
    for (int64_t i = 0; i < pred.size(); ++i) {
        const double pv = pred[i], tv = truth[i];
        if (pv < 0 || pv >= num_classes || pv != std::floor(pv))
            throw ValueError("predicted label " + std::to_string(pv) + " outside [0," + std::to_string(num_classes) +
                             ")");
        if (tv < 0 || tv >= num_classes || tv != std::floor(tv))
            throw ValueError("truth label " + std::to_string(tv) + " outside [0," + std::to_string(num_classes) + ")");
        ++confusion[static_cast<size_t>(tv) * num_classes + static_cast<size_t>(pv)];
    }
}

SegMetrics metrics_from_confusion(const std::vector<long long>& confusion, int num_classes) {
    SegMetrics m;
    m.num_classes = num_classes;
    m.confusion = confusion;
    m.per_class_iou.assign(num_classes, 0.0);
    m.precision.assign(num_classes, 0.0);
    m.recall.assign(num_classes, 0.0);
    m.class_present.assign(num_classes, false);

    long long total = 0, diag = 0;
    for (int t = 0; t < num_classes; ++t)
        for (int p = 0; p < num_classes; ++p) total += confusion[static_cast<size_t>(t) * num_classes + p];
    double iou_sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        const long long tp = confusion[static_cast<size_t>(c) * num_classes + c];
        long long row = 0, col = 0;
        for (int j = 0; j < num_classes; ++j) {
            row += confusion[static_cast<size_t>(c) * num_classes + j];
            col += confusion[static_cast<size_t>(j) * num_classes + c];
        }
        diag += tp;
        const long long fn = row - tp, fp = col - tp;
        m.class_present[c] = row + col > 0;
        m.per_class_iou[c] = (tp + fp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0;
        m.precision[c] = (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        m.recall[c] = (tp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        if (m.class_present[c]) {
            iou_sum += m.per_class_iou[c];
            ++present;
        }
    }
    m.mean_iou = present ? iou_sum / present : 0.0;
    m.pixel_accuracy = total ? static_cast<double>(diag) / static_cast<double>(total) : 0.0;
    return m;
}

SegMetrics compute_metrics(const Tensor& pred, const Tensor& truth, int num_classes) {
    std::vector<long long> confusion(static_cast<size_t>(num_classes) * num_classes, 0);
    accumulate_confusion(confusion, pred, truth, num_classes);
    return metrics_from_confusion(confusion, num_classes);
}

std::array<double, 3> class_color(int cls) {
    static const std::array<double, 3> palette[6] = {{0.90, 0.10, 0.10}, {0.10, 0.85, 0.10}, {0.15, 0.35, 0.95},
                                                     {0.95, 0.85, 0.10}, {0.85, 0.15, 0.85}, {0.10, 0.85, 0.85}};
    return palette[cls % 6];
}

OverlayGrids render_overlay_grid(const std::vector<Tensor>& images, const std::vector<Tensor>& labels, int n,
                                 int rows, int cols, int num_classes, double alpha) {
    if (n < 1 || images.empty()) throw ValueError("overlay grid: empty selection");
    if (n > static_cast<int>(images.size()) || n > static_cast<int>(labels.size()))
        throw ValueError("overlay grid: asked for " + std::to_string(n) + " samples, have " +
                         std::to_string(images.size()));
    if (rows * cols < n) throw ValueError("overlay grid: layout too small for n");
    const int h = images[0].dim(1), w = images[0].dim(2);

    OverlayGrids g;
    g.inputs = Tensor({3, rows * h, cols * w});
    g.overlay = Tensor({3, rows * h, cols * w});
    const int64_t grid_hw = static_cast<int64_t>(rows) * h * cols * w;
    const int64_t gw = static_cast<int64_t>(cols) * w;

    for (int i = 0; i < n; ++i) {
        const Tensor& img = images[i];
        const Tensor& lab = labels[i];
        if (img.dim(1) != h || img.dim(2) != w) throw DimensionError("overlay grid: inconsistent tile sizes");
        const int r0 = (i / cols) * h, c0 = (i % cols) * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const int cls = static_cast<int>(lab.at({y, x}));
                if (cls < 0 || cls >= num_classes) throw ValueError("overlay grid: label outside [0,K)");
                const bool fg = cls < num_classes - 1;
                const auto col = fg ? class_color(cls) : std::array<double, 3>{0, 0, 0};
                for (int c = 0; c < 3; ++c) {
                    const double v = img.at({c, y, x});
                    const int64_t off = c * grid_hw + static_cast<int64_t>(r0 + y) * gw + (c0 + x);
                    g.inputs[off] = v;
                    g.overlay[off] = fg ? alpha * col[c] + (1.0 - alpha) * v : v;
                }
            }
        }
    }
    return g;
}

namespace {

std::string metrics_text(const EvalReport& r, int kk) {
    std::ostringstream os;
    os << "== evaluation report ==\n";
    if (r.tag_accuracy >= 0.0) os << "classifier tag accuracy: " << r.tag_accuracy << "\n";
    if (r.has_seg_metrics) {
        os << "pixel accuracy: " << r.seg.pixel_accuracy << "\n";
        os << "mean IoU (present classes): " << r.seg.mean_iou << "\n";
        os << "class  present  IoU      precision  recall\n";
        for (int c = 0; c < kk; ++c) {
            os << "  " << c << (c == kk - 1 ? " (bg)" : "     ") << "  " << (r.seg.class_present[c] ? "yes" : "no ")
               << "     " << r.seg.per_class_iou[c] << "  " << r.seg.precision[c] << "  " << r.seg.recall[c] << "\n";
        }
    } else {
        os << "segmentation metrics: unavailable (manifest has no ground-truth masks) -- partial report\n";
    }
    os << "present population: n=" << r.present.count << " mean_fg_area=" << r.present.mean_fg_area << "\n";
    os << "absent population:  n=" << r.absent.count << " mean_fg_area=" << r.absent.mean_fg_area
       << " fp_rate@" << r.absent.area_threshold << "=" << r.absent.fp_rate << "\n";
    return os.str();
}

}  // namespace

EvalReport evaluate_run(const std::string& checkpoint_dir, const data::DatasetManifest& manifest,
                        const std::string& out_dir, int figure_samples, uint64_t seed, int batch_size) {
    fs::create_directories(out_dir);
    models::Segmenter seg = models::load_segmenter(checkpoint_dir);
    const bool have_classifier = fs::exists(checkpoint_dir + "/classifier_manifest.json");
    std::optional<models::ResNetClassifier> g;
    if (have_classifier) {
        g.emplace(models::load_classifier(checkpoint_dir));
        g->set_frozen(true);
        g->set_training(false);
    }
    const int kk = seg.num_classes();
    if (manifest.num_classes != kk)
        throw ConfigError("manifest K=" + std::to_string(manifest.num_classes) + " vs checkpoint K=" +
                          std::to_string(kk));

    data::BatchLoader loader(manifest, batch_size, false, seed);
    EvalReport report;
    report.has_seg_metrics = loader.has_masks();

    std::vector<long long> confusion(static_cast<size_t>(kk) * kk, 0);
    std::vector<Tensor> all_images, all_pred;
    std::vector<int> present_idx, absent_idx;
    long long tag_correct = 0, tag_total = 0;
    double present_area = 0, absent_area = 0;
    long long absent_above = 0;
    const double area_threshold = 0.01;

    loader.start_epoch(0);
    while (auto batch = loader.next()) {
        auto [mask, decomp] = seg.forward_pair(ad::Var::constant(batch->images));
        (void)decomp;
        Tensor pred = argmax_labels(mask.value());
        if (report.has_seg_metrics) accumulate_confusion(confusion, pred, batch->masks, kk);
        if (g) {
            ad::Var z = g->forward(ad::Var::constant(batch->images));
            for (int bi = 0; bi < z.value().dim(0); ++bi)
                for (int j = 0; j < z.value().dim(1); ++j) {
                    const bool pred_tag = z.value().at({bi, j}) >= 0.5;
                    const bool truth = manifest.mode == core::LabelMode::Indicator
                                           ? batch->labels.at({bi, j}) == 1.0
                                           : batch->labels.at({bi, j}) > 0.0;
                    tag_correct += pred_tag == truth;
                    ++tag_total;
                }
        }
        const int b = batch->images.dim(0);
        const int h = batch->images.dim(2), w = batch->images.dim(3);
        const int64_t hw = static_cast<int64_t>(h) * w;
        for (int bi = 0; bi < b; ++bi) {
            Tensor img({3, h, w});
            std::copy(batch->images.data() + static_cast<int64_t>(bi) * 3 * hw,
                      batch->images.data() + static_cast<int64_t>(bi + 1) * 3 * hw, img.data());
            Tensor lab({h, w});
            std::copy(pred.data() + static_cast<int64_t>(bi) * hw, pred.data() + static_cast<int64_t>(bi + 1) * hw,
                      lab.data());
            long long fg = 0;
            for (int64_t p = 0; p < hw; ++p) fg += lab[p] < kk - 1;
            const double frac = static_cast<double>(fg) / static_cast<double>(hw);

            bool has_fg_tag = false;
            for (int c = 0; c + 1 < kk; ++c) has_fg_tag |= batch->labels.at({bi, c}) > 0.0;
            const int idx = static_cast<int>(all_images.size());
            if (has_fg_tag) {
                present_idx.push_back(idx);
                present_area += frac;
            } else {
                absent_idx.push_back(idx);
                absent_area += frac;
                absent_above += frac > area_threshold;
            }
            all_images.push_back(std::move(img));
            all_pred.push_back(std::move(lab));
        }
    }

    if (report.has_seg_metrics) report.seg = metrics_from_confusion(confusion, kk);
    if (g && tag_total) report.tag_accuracy = static_cast<double>(tag_correct) / static_cast<double>(tag_total);
    report.present.count = static_cast<long long>(present_idx.size());
    report.absent.count = static_cast<long long>(absent_idx.size());
    if (!present_idx.empty()) report.present.mean_fg_area = present_area / static_cast<double>(present_idx.size());
    if (!absent_idx.empty()) {
        report.absent.mean_fg_area = absent_area / static_cast<double>(absent_idx.size());
        report.absent.fp_rate = static_cast<double>(absent_above) / static_cast<double>(absent_idx.size());
    }
    report.present.area_threshold = report.absent.area_threshold = area_threshold;

    // qualitative grids, one pair per population
    auto emit_grids = [&](std::vector<int> idx, const std::string& tag, uint64_t stream) {
        if (idx.empty()) return;
        Rng rng(Rng::derive_seed(seed, stream));
        shuffle_indices(idx, rng);
        const int n = std::min<int>(figure_samples, static_cast<int>(idx.size()));
        std::vector<Tensor> imgs, labs;
        for (int i = 0; i < n; ++i) {
            imgs.push_back(all_images[idx[i]]);
            labs.push_back(all_pred[idx[i]]);
        }
        const int cols = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))));
        const int rows = (n + cols - 1) / cols;
        OverlayGrids grids = render_overlay_grid(imgs, labs, n, rows, cols, kk);
        const std::string base = out_dir + "/" + manifest.split + "_" + tag;
        imageio::write_ppm(base + "_inputs.ppm", grids.inputs);
        imageio::write_ppm(base + "_overlay.ppm", grids.overlay);
        report.figure_paths.push_back(base + "_inputs.ppm");
        report.figure_paths.push_back(base + "_overlay.ppm");
    };
    emit_grids(present_idx, "present", 0xf1);
    emit_grids(absent_idx, "absent", 0xf2);

    report.text = metrics_text(report, kk);
    {
        std::ofstream f(out_dir + "/metrics.txt");
        f << report.text;
    }
    {
        json j;
        j["has_seg_metrics"] = report.has_seg_metrics;
        j["tag_accuracy"] = report.tag_accuracy;
        if (report.has_seg_metrics) {
            j["mean_iou"] = report.seg.mean_iou;
            j["pixel_accuracy"] = report.seg.pixel_accuracy;
            j["per_class_iou"] = report.seg.per_class_iou;
            j["precision"] = report.seg.precision;
            j["recall"] = report.seg.recall;
            j["confusion"] = report.seg.confusion;
        }
        j["present"] = {{"count", report.present.count}, {"mean_fg_area", report.present.mean_fg_area}};
        j["absent"] = {{"count", report.absent.count},
                       {"mean_fg_area", report.absent.mean_fg_area},
                       {"fp_rate", report.absent.fp_rate},
                       {"area_threshold", report.absent.area_threshold}};
        j["figures"] = report.figure_paths;
        std::ofstream f(out_dir + "/metrics.json");
        f << j.dump(2) << "\n";
    }
    return report;
}

}  // namespace wsss::evaluation
