#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "wsss/data.hpp"
#include "wsss/losses.hpp"
#include "wsss/models.hpp"

namespace wsss::training {

struct TrainConfig {
    std::string stage = "joint";  // classifier | joint
    int epochs = 10;
    int batch_size = 4;
    double learning_rate = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double lambda_m = 1e-3, lambda_c = 1e-3;
    double eps = 1e-7;
    uint64_t seed = 0;
    std::string checkpoint_dir;  // empty disables checkpoints and the jsonl log
    int eval_every = 0;          // extra validation every N steps; 0 = per epoch only
    std::string device = "cpu";

    void validate() const;
};

struct RunRecord {
    long long step = 0;
    std::string stage;
    int epoch = 0;
    std::string kind = "train";  // train | val | config
    double recon = 0, mask = 0, cls = 0, total = 0;
    double lambda_m = 0, lambda_c = 0;
    std::vector<double> y_hat_mean;  // per-class batch mean of the average mask score
    double tag_accuracy = -1.0;      // val records, when computable
    double foreground_iou = -1.0;    // val records, when ground-truth masks exist
    double wall_ms = 0;
    std::string note;  // config records only

    std::string to_json() const;
};

class RunLog {
public:
    explicit RunLog(const std::string& jsonl_path = "");
    RunLog(RunLog&&) = default;
    RunLog& operator=(RunLog&&) = default;

    void append(RunRecord r);
    const std::vector<RunRecord>& records() const { return records_; }
    const std::string& path() const { return path_; }

private:
    std::vector<RunRecord> records_;
    std::string path_;
    std::unique_ptr<std::ofstream> out_;
};

class Adam {
public:
    Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps = 1e-8);

    void zero_grad();
    void step();
    long long steps_taken() const { return t_; }

    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    std::vector<ad::Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, b1_, b2_, eps_;
    long long t_ = 0;
};

// Stage 1: optimize g under the multi-label classification loss.
RunLog train_classifier(models::ResNetClassifier& g, const data::DatasetManifest& train_manifest,
                        const data::DatasetManifest* val_manifest, const TrainConfig& cfg);

struct JointResume {
    int next_epoch = 0;
    long long step = 0;
    std::string optimizer_path;
    std::string note;  // nonempty when the resumed config differs in tunables
};

// Stage 2: g is frozen, the shared encoder and both decoders train jointly.
RunLog train_joint(models::Segmenter& seg, models::ResNetClassifier& g, const data::DatasetManifest& train_manifest,
                   const data::DatasetManifest* val_manifest, const TrainConfig& cfg,
                   const JointResume* resume = nullptr);

struct JointState {
    models::Segmenter seg;
    models::ResNetClassifier g;
    JointResume info;
};

// Restores models, optimizer state and counters from a joint checkpoint.
// Refuses checkpoints whose model spec disagrees with expected_spec.
JointState resume(const std::string& checkpoint_dir, const models::ModelSpec& expected_spec, const TrainConfig& cfg);

}  // namespace wsss::training
