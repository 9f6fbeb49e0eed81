#pragma once

#include <cstdint>
#include <string>

#include "wsss/data.hpp"
#include "wsss/models.hpp"
#include "wsss/training.hpp"

namespace wsss::config {

// Fully-resolved run configuration: defaults <- config file <- flags.
// A serialized copy lands in every run directory so a run can be
// reproduced from its own artifacts.
struct RunConfig {
    std::string scale = "desk";  // desk | paper
    int classes = 2;
    int image_size = 0;        // 0 = scale default (desk 64, paper 224)
    int classifier_width = 0;  // 0 = scale default (desk 8, paper 64)
    uint64_t seed = 0;
    std::string out_dir;
    training::TrainConfig train;
    data::SyntheticSceneParams synth;

    // fills scale-dependent defaults; afterwards nothing is deferred
    void resolve();
    models::ModelSpec segmenter_spec() const;

    void merge_json_file(const std::string& path);
    std::string to_json_text() const;
    void save(const std::string& path) const;
};

// $WSSS_OUT_ROOT, or "runs" when unset.
std::string default_out_root();

}  // namespace wsss::config
