#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "testutil.hpp"
#include "wsss/errors.hpp"
#include "wsss/evaluation.hpp"
#include "wsss/training.hpp"

using namespace wsss;
namespace ev = wsss::evaluation;
namespace fs = std::filesystem;

namespace {

// independent per-pixel counting oracle
ev::SegMetrics oracle_metrics(const Tensor& pred, const Tensor& truth, int k) {
    ev::SegMetrics m;
    m.num_classes = k;
    m.per_class_iou.assign(k, 0.0);
    m.precision.assign(k, 0.0);
    m.recall.assign(k, 0.0);
    m.class_present.assign(k, false);
    m.confusion.assign(static_cast<size_t>(k) * k, 0);
    long long correct = 0;
    for (int64_t i = 0; i < pred.size(); ++i) {
        ++m.confusion[static_cast<size_t>(truth[i]) * k + static_cast<size_t>(pred[i])];
        correct += pred[i] == truth[i];
    }
    double iou_sum = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
        long long tp = 0, fp = 0, fn = 0;
        for (int64_t i = 0; i < pred.size(); ++i) {
            const bool p = pred[i] == c, t = truth[i] == c;
            tp += p && t;
            fp += p && !t;
            fn += !p && t;
        }
        m.class_present[c] = tp + fp + fn > 0;
        m.per_class_iou[c] = tp + fp + fn > 0 ? double(tp) / double(tp + fp + fn) : 0.0;
        m.precision[c] = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
        m.recall[c] = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
        if (m.class_present[c]) {
            iou_sum += m.per_class_iou[c];
            ++present;
        }
    }
    m.mean_iou = present ? iou_sum / present : 0.0;
    m.pixel_accuracy = double(correct) / double(pred.size());
    return m;
}

Tensor mask_from_bits(uint32_t bits, int pixels) {
    Tensor t({1, pixels});
    for (int i = 0; i < pixels; ++i) t[i] = (bits >> i) & 1u;
    return t.reshaped({4, pixels / 4});
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("argmax labeling: basics, tie rule, loop oracle, monotone invariance") {
    Tensor m({1, 2, 2, 2}, {0.9, 0.9, 0.9, 0.9, 0.1, 0.1, 0.1, 0.1});
    Tensor lab = ev::argmax_labels(m);
    for (int64_t i = 0; i < 4; ++i) CHECK(lab[i] == 0.0);

    Tensor tie({1, 2, 1, 1}, {0.5, 0.5});
    CHECK(ev::argmax_labels(tie)[0] == 0.0);  // exact tie goes to the lower index

    Rng rng(31);
    Tensor probs = test::random_mask_stack(rng, 2, 4, 5, 5);
    Tensor got = ev::argmax_labels(probs);
    const int64_t hw = 25;
    for (int b = 0; b < 2; ++b)
        for (int64_t p = 0; p < hw; ++p) {
            int best = 0;
            for (int k = 1; k < 4; ++k)
                if (probs[(b * 4 + k) * hw + p] > probs[(b * 4 + best) * hw + p]) best = k;
            CHECK(got[b * hw + p] == best);
        }

    // strictly monotone transforms preserve the argmax
    Tensor squashed(probs.shape());
    for (int64_t i = 0; i < probs.size(); ++i) squashed[i] = std::tanh(3.0 * probs[i]) + 2.0;
    CHECK(test::max_abs_diff(ev::argmax_labels(squashed), got) == 0.0);
}

TEST_CASE("predict_mask returns hard labels plus the probability stack") {
    models::Segmenter seg(models::desk_segmenter_spec(3, 32), 77);
    Rng rng(77);
    core::ImageBatch img = core::ImageBatch::checked(rand_uniform(rng, {2, 3, 32, 32}, 0.0, 1.0));
    auto [labels, probs] = ev::predict_mask(seg, img);
    CHECK(labels.shape() == std::vector<int>{2, 32, 32});
    CHECK(probs.shape() == std::vector<int>{2, 3, 32, 32});
    CHECK_NOTHROW(core::MaskStack::checked(probs));
    CHECK(test::max_abs_diff(labels, ev::argmax_labels(probs)) == 0.0);
    for (int64_t i = 0; i < labels.size(); ++i) CHECK(labels[i] < 3.0);
}

TEST_CASE("metrics: perfect, complementary and hand-counted cases") {
    Tensor truth({4, 4});
    for (int i = 0; i < 16; ++i) truth[i] = i < 6 ? 1.0 : 0.0;
    ev::SegMetrics perfect = ev::compute_metrics(truth, truth, 2);
    CHECK(perfect.mean_iou == 1.0);
    CHECK(perfect.pixel_accuracy == 1.0);
    CHECK(perfect.per_class_iou[0] == 1.0);
    CHECK(perfect.per_class_iou[1] == 1.0);

    Tensor complement(truth.shape());
    for (int i = 0; i < 16; ++i) complement[i] = 1.0 - truth[i];
    ev::SegMetrics worst = ev::compute_metrics(complement, truth, 2);
    CHECK(worst.mean_iou == 0.0);
    CHECK(worst.pixel_accuracy == 0.0);

    // class 1: TP=4, FP=2, FN=2 -> IoU = 0.5
    Tensor t2({4, 4}, 0.0), p2({4, 4}, 0.0);
    for (int i = 0; i < 6; ++i) t2[i] = 1.0;
    for (int i = 2; i < 8; ++i) p2[i] = 1.0;
    ev::SegMetrics hand = ev::compute_metrics(p2, t2, 2);
    CHECK(hand.per_class_iou[1] == doctest::Approx(0.5));
    CHECK(hand.confusion[1 * 2 + 1] == 4);

    CHECK_THROWS_AS(ev::compute_metrics(Tensor({2, 2}, 5.0), Tensor({2, 2}, 0.0), 2), ValueError);
    CHECK_THROWS_AS(ev::compute_metrics(Tensor({2, 2}, 0.0), Tensor({2, 3}, 0.0), 2), DimensionError);
}

TEST_CASE("metrics match the counting oracle on exhaustive binary 4x4 pairs") {
    // all 2^16 truth masks, each against a derived pseudo-random partner that
    // also sweeps the full value range
    for (uint32_t i = 0; i < (1u << 16); ++i) {
        const uint32_t j = (i * 2654435761u + 0x9e37u) & 0xffffu;
        Tensor truth = mask_from_bits(i, 16);
        Tensor pred = mask_from_bits(j, 16);
        ev::SegMetrics got = ev::compute_metrics(pred, truth, 2);
        ev::SegMetrics want = oracle_metrics(pred, truth, 2);
        REQUIRE(got.confusion == want.confusion);  // integer-exact
        REQUIRE(got.mean_iou == want.mean_iou);
        REQUIRE(got.pixel_accuracy == want.pixel_accuracy);
        REQUIRE(got.per_class_iou == want.per_class_iou);
        REQUIRE(got.precision == want.precision);
        REQUIRE(got.recall == want.recall);
    }
    // and every pair of 2x2 binary masks, fully exhaustively
    for (uint32_t a = 0; a < 16; ++a)
        for (uint32_t b = 0; b < 16; ++b) {
            Tensor truth = mask_from_bits(a, 4).reshaped({2, 2});
            Tensor pred = mask_from_bits(b, 4).reshaped({2, 2});
            ev::SegMetrics got = ev::compute_metrics(pred, truth, 2);
            ev::SegMetrics want = oracle_metrics(pred, truth, 2);
            REQUIRE(got.confusion == want.confusion);
            REQUIRE(got.mean_iou == want.mean_iou);
        }
}

TEST_CASE("overlay grids: blend formula, untouched inputs, bounds") {
    Rng rng(41);
    Tensor img = rand_uniform(rng, {3, 2, 2}, 0.0, 1.0);
    Tensor lab({2, 2}, {0.0, 1.0, 1.0, 0.0});  // class 0 fg, class 1 bg (K=2)
    ev::OverlayGrids g = ev::render_overlay_grid({img}, {lab}, 1, 1, 1, 2, 0.5);

    CHECK(test::max_abs_diff(g.inputs, img) == 0.0);  // inputs grid bit-identical
    const auto col = ev::class_color(0);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) {
                const double v = img.at({c, y, x});
                const double want = lab.at({y, x}) == 0.0 ? 0.5 * col[c] + 0.5 * v : v;
                CHECK(g.overlay.at({c, y, x}) == doctest::Approx(want).epsilon(1e-12));
            }

    CHECK_THROWS_WITH_AS(ev::render_overlay_grid({}, {}, 1, 1, 1, 2), doctest::Contains("empty"), ValueError);
    CHECK_THROWS_AS(ev::render_overlay_grid({img}, {lab}, 1, 0, 0, 2), ValueError);
}

TEST_CASE("evaluate_run produces a full report, figures, and deterministic output") {
    const std::string dir = (fs::temp_directory_path() / "wsss_evalrun").string();
    fs::remove_all(dir);
    data::SyntheticSceneParams p;
    p.height = p.width = 32;
    data::DatasetManifest all = data::generate_synthetic(p, 24, 51, dir + "/data");
    auto [train, val] = data::split_manifest(all, 0.7, 51);
    val.save(dir + "/data/val.manifest");

    models::ResNetClassifier g(2, 8, 51);
    models::Segmenter seg(models::desk_segmenter_spec(2, 32), 51);
    training::TrainConfig cfg;
    cfg.stage = "joint";
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.seed = 51;
    cfg.checkpoint_dir = dir + "/run";
    training::train_joint(seg, g, train, &val, cfg);

    ev::EvalReport r1 = ev::evaluate_run(dir + "/run/checkpoints/final", val, dir + "/eval1", 8, 7);
    CHECK(r1.has_seg_metrics);
    CHECK(static_cast<int>(r1.seg.per_class_iou.size()) == 2);
    CHECK(r1.tag_accuracy >= 0.0);
    CHECK(r1.present.count + r1.absent.count == static_cast<long long>(val.entries.size()));
    CHECK(fs::exists(dir + "/eval1/metrics.txt"));
    CHECK(fs::exists(dir + "/eval1/metrics.json"));
    for (const auto& f : r1.figure_paths) CHECK(fs::exists(f));

    // same seed twice: byte-identical figures
    ev::EvalReport r2 = ev::evaluate_run(dir + "/run/checkpoints/final", val, dir + "/eval2", 8, 7);
    REQUIRE(r1.figure_paths.size() == r2.figure_paths.size());
    for (size_t i = 0; i < r1.figure_paths.size(); ++i) {
        std::ifstream a(r1.figure_paths[i], std::ios::binary), b(r2.figure_paths[i], std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }

    // manifest without masks: explicit partial report, no silent omission
    data::DatasetManifest nomask = val;
    for (auto& e : nomask.entries) e.mask_path.clear();
    ev::EvalReport r3 = ev::evaluate_run(dir + "/run/checkpoints/final", nomask, dir + "/eval3", 8, 7);
    CHECK_FALSE(r3.has_seg_metrics);
    CHECK(r3.text.find("partial report") != std::string::npos);
    CHECK(r3.tag_accuracy >= 0.0);
    fs::remove_all(dir);
}

}  // TEST_SUITE
