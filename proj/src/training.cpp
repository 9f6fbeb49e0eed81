#include "wsss/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wsss/errors.hpp"
#include "wsss/evaluation.hpp"

namespace wsss::training {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    if (stage != "classifier" && stage != "joint") throw ConfigError("stage must be classifier or joint");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("betas must lie in [0,1)");
    if (lambda_m < 0.0 || lambda_c < 0.0) throw ConfigError("loss weights must be nonnegative");
}

std::string RunRecord::to_json() const {
    json j{{"step", step},       {"stage", stage},         {"epoch", epoch},
           {"kind", kind},       {"recon", recon},         {"mask", mask},
           {"cls", cls},         {"total", total},         {"lambda_m", lambda_m},
           {"lambda_c", lambda_c}, {"wall_ms", wall_ms}};
    if (!y_hat_mean.empty()) j["y_hat_mean"] = y_hat_mean;
    if (tag_accuracy >= 0.0) j["tag_accuracy"] = tag_accuracy;
    if (foreground_iou >= 0.0) j["foreground_iou"] = foreground_iou;
    if (!note.empty()) j["note"] = note;
    return j.dump();
}

RunLog::RunLog(const std::string& jsonl_path) : path_(jsonl_path) {
    if (!path_.empty()) {
        fs::create_directories(fs::path(path_).parent_path());
        out_ = std::make_unique<std::ofstream>(path_, std::ios::app);
        if (!*out_) throw IoError("cannot open run log " + path_);
    }
}

void RunLog::append(RunRecord r) {
    if (out_) {
        (*out_) << r.to_json() << "\n";
        out_->flush();
    }
    records_.push_back(std::move(r));
}

Adam::Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const ad::Var& p : params_) {
        m_.emplace_back(Tensor::zeros(p.value().shape()));
        v_.emplace_back(Tensor::zeros(p.value().shape()));
    }
}

void Adam::zero_grad() {
    for (ad::Var& p : params_) p.zero_grad();
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        ad::Var& p = params_[i];
        if (!p.grad().defined()) continue;  // no gradient reached this tensor
        Tensor& value = p.value();
        const Tensor& g = p.grad();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < value.size(); ++j) {
            m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
            v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::save(const std::string& path) const {
    std::vector<std::pair<std::string, const Tensor*>> tensors;
    for (size_t i = 0; i < params_.size(); ++i) {
        tensors.emplace_back("m." + std::to_string(i), &m_[i]);
        tensors.emplace_back("v." + std::to_string(i), &v_[i]);
    }
    Tensor t_tensor({1}, static_cast<double>(t_));
    tensors.emplace_back("t", &t_tensor);
    models::save_tensor_file(path, tensors);
}

void Adam::load(const std::string& path) {
    auto tensors = models::load_tensor_file(path);
    for (size_t i = 0; i < params_.size(); ++i) {
        auto mi = tensors.find("m." + std::to_string(i));
        auto vi = tensors.find("v." + std::to_string(i));
        if (mi == tensors.end() || vi == tensors.end())
            throw IoError("optimizer state " + path + " does not cover parameter " + std::to_string(i));
        if (!mi->second.same_shape(m_[i]))
            throw IoError("optimizer moment " + std::to_string(i) + " has shape " + mi->second.shape_str() +
                          ", expected " + m_[i].shape_str());
        m_[i] = mi->second;
        v_[i] = vi->second;
    }
    t_ = static_cast<long long>(tensors.at("t")[0]);
}

namespace {

double now_ms() {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string indices_str(const std::vector<int>& idx) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < idx.size(); ++i) os << (i ? "," : "") << idx[i];
    os << "]";
    return os.str();
}

std::vector<double> batch_mean_scores(const Tensor& scores) {
    const int b = scores.dim(0), k = scores.dim(1);
    std::vector<double> out(k, 0.0);
    for (int bi = 0; bi < b; ++bi)
        for (int ki = 0; ki < k; ++ki) out[ki] += scores.at({bi, ki}) / b;
    return out;
}

void write_trainstate(const std::string& dir, const TrainConfig& cfg, int epoch_completed, long long step,
                      double best_val_total) {
    json j{{"stage", cfg.stage},
           {"epoch_completed", epoch_completed},
           {"step", step},
           {"epochs", cfg.epochs},
           {"batch_size", cfg.batch_size},
           {"learning_rate", cfg.learning_rate},
           {"beta1", cfg.beta1},
           {"beta2", cfg.beta2},
           {"lambda_m", cfg.lambda_m},
           {"lambda_c", cfg.lambda_c},
           {"seed", cfg.seed},
           {"best_val_total", best_val_total}};
    std::ofstream f(dir + "/trainstate.json");
    if (!f) throw IoError("cannot write " + dir + "/trainstate.json");
    f << j.dump(2) << "\n";
}

double classifier_tag_accuracy(models::ResNetClassifier& g, data::BatchLoader& loader, core::LabelMode mode) {
    const bool was_training = g.training();
    g.set_training(false);
    loader.start_epoch(0);
    long long correct = 0, total = 0;
    while (auto batch = loader.next()) {
        ad::Var z = g.forward(ad::Var::constant(batch->images));
        const int b = z.value().dim(0), fg = z.value().dim(1);
        for (int bi = 0; bi < b; ++bi)
            for (int j = 0; j < fg; ++j) {
                const bool pred = z.value().at({bi, j}) >= 0.5;
                const bool truth = mode == core::LabelMode::Indicator ? batch->labels.at({bi, j}) == 1.0
                                                                      : batch->labels.at({bi, j}) > 0.0;
                correct += pred == truth;
                ++total;
            }
    }
    g.set_training(was_training);
    return total ? static_cast<double>(correct) / static_cast<double>(total) : -1.0;
}

}  // namespace

RunLog train_classifier(models::ResNetClassifier& g, const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest* val_manifest, const TrainConfig& cfg) {
    cfg.validate();
    if (cfg.stage != "classifier") throw ConfigError("train_classifier requires stage=classifier");
    if (g.num_classes() != train_manifest.num_classes)
        throw ConfigError("classifier K=" + std::to_string(g.num_classes()) + " vs manifest K=" +
                          std::to_string(train_manifest.num_classes));

    const bool persist = !cfg.checkpoint_dir.empty();
    RunLog log(persist ? cfg.checkpoint_dir + "/runlog.jsonl" : "");
    g.set_frozen(false);
    g.set_training(true);
    Adam opt(g.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    data::BatchLoader loader(train_manifest, cfg.batch_size, true, cfg.seed);
    std::optional<data::BatchLoader> val_loader;
    if (val_manifest) val_loader.emplace(*val_manifest, cfg.batch_size, false, cfg.seed);

    long long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        loader.start_epoch(epoch);
        g.set_training(true);
        while (auto batch = loader.next()) {
            const double t0 = now_ms();
            auto y = batch->tag_batch(train_manifest.mode);
            opt.zero_grad();
            ad::Var z = g.forward(ad::Var::constant(batch->images));
            ad::Var loss = losses::loss_classifier(z, y, cfg.eps);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv))
                throw TrainAbort("non-finite classifier loss at step " + std::to_string(step + 1) + ", batch " +
                                 indices_str(batch->indices));
            ad::backward(loss);
            opt.step();
            ++step;
            RunRecord r;
            r.step = step;
            r.stage = "classifier";
            r.epoch = epoch;
            r.total = lv;
            r.y_hat_mean = batch_mean_scores(z.value());
            r.wall_ms = now_ms() - t0;
            log.append(std::move(r));
        }
        if (val_loader) {
            RunRecord r;
            r.step = step;
            r.stage = "classifier";
            r.epoch = epoch;
            r.kind = "val";
            r.tag_accuracy = classifier_tag_accuracy(g, *val_loader, val_manifest->mode);
            // validation loss under the same objective
            val_loader->start_epoch(0);
            g.set_training(false);
            double sum = 0.0;
            long long batches = 0;
            while (auto batch = val_loader->next()) {
                ad::Var z = g.forward(ad::Var::constant(batch->images));
                sum += losses::loss_classifier(z, batch->tag_batch(val_manifest->mode), cfg.eps).value()[0];
                ++batches;
            }
            g.set_training(true);
            r.total = batches ? sum / static_cast<double>(batches) : 0.0;
            log.append(std::move(r));
        }
        if (persist) {
            char dirname[32];
            std::snprintf(dirname, sizeof(dirname), "/checkpoints/epoch_%04d", epoch + 1);
            const std::string dir = cfg.checkpoint_dir + dirname;
            models::save_classifier(g, dir);
            opt.save(dir + "/optimizer.bin");
            write_trainstate(dir, cfg, epoch + 1, step, -1.0);
        }
    }
    if (persist) {
        const std::string dir = cfg.checkpoint_dir + "/checkpoints/final";
        models::save_classifier(g, dir);
        opt.save(dir + "/optimizer.bin");
        write_trainstate(dir, cfg, cfg.epochs, step, -1.0);
    }
    return log;
}

namespace {

struct ValSummary {
    double recon = 0, mask = 0, cls = 0, total = 0;
    double fg_iou = -1.0;
};

ValSummary validate_joint(models::Segmenter& seg, models::ResNetClassifier& g, data::BatchLoader& loader,
                          const core::LossWeights& w, core::LabelMode mode) {
    ValSummary s;
    loader.start_epoch(0);
    long long batches = 0;
    std::vector<long long> confusion;
    const int kk = seg.num_classes();
    if (loader.has_masks()) confusion.assign(static_cast<size_t>(kk) * kk, 0);
    while (auto batch = loader.next()) {
        auto [mask, decomp] = seg.forward_pair(ad::Var::constant(batch->images));
        auto tl = losses::loss_total(mask, decomp, ad::Var::constant(batch->images), batch->tag_batch(mode), g, w);
        s.recon += tl.report.recon;
        s.mask += tl.report.mask;
        s.cls += tl.report.cls;
        s.total += tl.report.total;
        ++batches;
        if (loader.has_masks()) {
            Tensor pred = evaluation::argmax_labels(mask.value());
            evaluation::accumulate_confusion(confusion, pred, batch->masks, kk);
        }
    }
    if (batches) {
        s.recon /= batches;
        s.mask /= batches;
        s.cls /= batches;
        s.total /= batches;
    }
    if (loader.has_masks()) {
        evaluation::SegMetrics m = evaluation::metrics_from_confusion(confusion, kk);
        double sum = 0.0;
        int present = 0;
        for (int c = 0; c + 1 < kk; ++c)
            if (m.class_present[c]) {
                sum += m.per_class_iou[c];
                ++present;
            }
        s.fg_iou = present ? sum / present : -1.0;
    }
    return s;
}

void save_joint_checkpoint(const std::string& dir, const models::Segmenter& seg, const models::ResNetClassifier& g,
                           const Adam& opt, const TrainConfig& cfg, int epoch_completed, long long step,
                           double best_val_total) {
    models::save_segmenter(seg, dir);
    models::save_classifier(g, dir);
    opt.save(dir + "/optimizer.bin");
    write_trainstate(dir, cfg, epoch_completed, step, best_val_total);
}

}  // namespace

RunLog train_joint(models::Segmenter& seg, models::ResNetClassifier& g, const data::DatasetManifest& train_manifest,
                   const data::DatasetManifest* val_manifest, const TrainConfig& cfg, const JointResume* resume) {
    cfg.validate();
    if (cfg.stage != "joint") throw ConfigError("train_joint requires stage=joint");
    if (seg.num_classes() != train_manifest.num_classes)
        throw ConfigError("segmenter K=" + std::to_string(seg.num_classes()) + " vs manifest K=" +
                          std::to_string(train_manifest.num_classes));
    if (g.num_outputs() != seg.num_classes() - 1)
        throw ConfigError("classifier emits " + std::to_string(g.num_outputs()) + " scores, expected " +
                          std::to_string(seg.num_classes() - 1));

    g.set_frozen(true);
    g.set_training(false);
    const uint64_t g_checksum = g.checksum();

    const bool persist = !cfg.checkpoint_dir.empty();
    RunLog log(persist ? cfg.checkpoint_dir + "/runlog.jsonl" : "");
    Adam opt(seg.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2);
    long long step = 0;
    int start_epoch = 0;
    if (resume) {
        if (!resume->optimizer_path.empty()) opt.load(resume->optimizer_path);
        step = resume->step;
        start_epoch = resume->next_epoch;
        if (!resume->note.empty()) {
            RunRecord r;
            r.step = step;
            r.stage = "joint";
            r.epoch = start_epoch;
            r.kind = "config";
            r.note = resume->note;
            log.append(std::move(r));
        }
    }

    core::LossWeights w;
    w.lambda_m = cfg.lambda_m;
    w.lambda_c = cfg.lambda_c;
    w.eps = cfg.eps;

    data::BatchLoader loader(train_manifest, cfg.batch_size, true, cfg.seed);
    std::optional<data::BatchLoader> val_loader;
    if (val_manifest) val_loader.emplace(*val_manifest, cfg.batch_size, false, cfg.seed);

    double best_val = std::numeric_limits<double>::infinity();
    auto run_validation = [&](int epoch) {
        if (!val_loader) return;
        ValSummary s = validate_joint(seg, g, *val_loader, w, val_manifest->mode);
        RunRecord r;
        r.step = step;
        r.stage = "joint";
        r.epoch = epoch;
        r.kind = "val";
        r.recon = s.recon;
        r.mask = s.mask;
        r.cls = s.cls;
        r.total = s.total;
        r.lambda_m = cfg.lambda_m;
        r.lambda_c = cfg.lambda_c;
        r.foreground_iou = s.fg_iou;
        log.append(std::move(r));
        if (persist && s.total < best_val) {
            best_val = s.total;
            save_joint_checkpoint(cfg.checkpoint_dir + "/checkpoints/best", seg, g, opt, cfg, epoch, step, best_val);
        }
    };

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        loader.start_epoch(epoch);
        while (auto batch = loader.next()) {
            const double t0 = now_ms();
            auto y = batch->tag_batch(train_manifest.mode);
            opt.zero_grad();
            losses::TotalLoss tl;
            ad::Var mask;
            try {
                auto [mask_probs, decomp] = seg.forward_pair(ad::Var::constant(batch->images));
                mask = mask_probs;
                tl = losses::loss_total(mask, decomp, ad::Var::constant(batch->images), y, g, w);
            } catch (const NumericError& e) {
                throw TrainAbort(std::string(e.what()) + " at step " + std::to_string(step + 1) + ", batch " +
                                 indices_str(batch->indices));
            }
            if (!std::isfinite(tl.report.total) || !std::isfinite(tl.report.recon) ||
                !std::isfinite(tl.report.mask) || !std::isfinite(tl.report.cls))
                throw TrainAbort("non-finite loss at step " + std::to_string(step + 1) + ", batch " +
                                 indices_str(batch->indices));
            ad::backward(tl.total);
            opt.step();
            ++step;
            RunRecord r;
            r.step = step;
            r.stage = "joint";
            r.epoch = epoch;
            r.recon = tl.report.recon;
            r.mask = tl.report.mask;
            r.cls = tl.report.cls;
            r.total = tl.report.total;
            r.lambda_m = cfg.lambda_m;
            r.lambda_c = cfg.lambda_c;
            r.y_hat_mean = batch_mean_scores(core::average_mask_score(mask.value()));
            r.wall_ms = now_ms() - t0;
            log.append(std::move(r));
            if (cfg.eval_every > 0 && step % cfg.eval_every == 0) run_validation(epoch);
        }
        run_validation(epoch);
        if (persist) {
            char dirname[32];
            std::snprintf(dirname, sizeof(dirname), "/checkpoints/epoch_%04d", epoch + 1);
            save_joint_checkpoint(cfg.checkpoint_dir + dirname, seg, g, opt, cfg, epoch + 1, step, best_val);
        }
    }
    if (persist) save_joint_checkpoint(cfg.checkpoint_dir + "/checkpoints/final", seg, g, opt, cfg, cfg.epochs, step, best_val);

    if (g.checksum() != g_checksum)
        throw TrainAbort("frozen classifier parameters changed during joint training");
    return log;
}

JointState resume(const std::string& checkpoint_dir, const models::ModelSpec& expected_spec, const TrainConfig& cfg) {
    models::ModelSpec saved = models::load_segmenter_spec(checkpoint_dir);
    const std::string diff = models::describe_spec_diff(expected_spec, saved);
    if (!diff.empty()) throw ConfigError("checkpoint model spec does not match the requested one:\n" + diff);

    std::ifstream f(checkpoint_dir + "/trainstate.json");
    if (!f) throw IoError("cannot read " + checkpoint_dir + "/trainstate.json");
    json state = json::parse(f);

    JointState st{models::load_segmenter(checkpoint_dir), models::load_classifier(checkpoint_dir), {}};
    st.info.next_epoch = state.at("epoch_completed").get<int>();
    st.info.step = state.at("step").get<long long>();
    st.info.optimizer_path = checkpoint_dir + "/optimizer.bin";

    std::ostringstream note;
    if (state.at("lambda_m").get<double>() != cfg.lambda_m)
        note << "lambda_m " << state.at("lambda_m").get<double>() << " -> " << cfg.lambda_m << "; ";
    if (state.at("lambda_c").get<double>() != cfg.lambda_c)
        note << "lambda_c " << state.at("lambda_c").get<double>() << " -> " << cfg.lambda_c << "; ";
    if (state.at("learning_rate").get<double>() != cfg.learning_rate)
        note << "learning_rate " << state.at("learning_rate").get<double>() << " -> " << cfg.learning_rate << "; ";
    st.info.note = note.str();
    return st;
}

}  // namespace wsss::training
