#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wsss/core.hpp"
#include "wsss/rng.hpp"
#include "wsss/tensor.hpp"

namespace wsss::data {

struct ManifestEntry {
    std::string image_path;       // relative to the manifest's directory
    std::vector<double> label;    // length K, background last
    std::string mask_path;        // empty when no ground truth exists
};

struct DatasetManifest {
    std::string split = "train";  // train | val
    int num_classes = 2;
    int height = 0, width = 0;
    uint64_t seed = 0;
    core::LabelMode mode = core::LabelMode::Indicator;
    std::string base_dir;  // directory the manifest file lives in
    std::vector<ManifestEntry> entries;

    bool has_masks() const;
    std::string resolve(const std::string& rel) const;
    void validate(bool check_paths) const;

    void save(const std::string& path) const;
    static DatasetManifest load(const std::string& path);
};

enum class ShapeKind { Ellipse, Rectangle, Triangle };

struct SyntheticSceneParams {
    int height = 64, width = 64;
    int num_foreground_classes = 1;
    int min_shapes_per_class = 1, max_shapes_per_class = 2;
    std::vector<ShapeKind> kinds = {ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Triangle};
    double min_size_frac = 0.42, max_size_frac = 0.75;  // shape extent over min(H,W)
    double foreground_presence_probability = 0.5;
    double noise_level = 0.02;
    bool correlated_nuisance = false;  // paint a distractor blob on foreground-present scenes
    bool soft_labels = false;          // labels become normalized ground-truth areas

    void validate() const;
};

// Renders n scenes with pixel-exact label maps into out_dir (images/ and
// masks/) and returns the manifest. Tags derive from painted mask areas,
// so fully occluded shapes do not set their class bit.
DatasetManifest generate_synthetic(const SyntheticSceneParams& params, int n, uint64_t seed,
                                   const std::string& out_dir);

// Deterministic disjoint split; sizes round to the ratio.
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& all, double train_ratio,
                                                           uint64_t seed);

// Tag-labels a positive/negative folder pair: positives get y=(1,1),
// negatives y=(0,1); images are resized and re-encoded under out_dir.
std::pair<DatasetManifest, DatasetManifest> derive_tagged_dataset(const std::string& positive_dir,
                                                                  const std::string& negative_dir, int n_pos,
                                                                  int n_neg, int height, int width,
                                                                  double split_ratio, uint64_t seed,
                                                                  const std::string& out_dir);

struct Batch {
    Tensor images;             // (B,3,H,W), values in [0,1]
    Tensor labels;             // (B,K)
    Tensor masks;              // (B,H,W) hard labels; undefined when absent
    std::vector<int> indices;  // manifest positions

    core::TagLabelBatch tag_batch(core::LabelMode mode) const;
};

// Deterministic batched loading with per-epoch shuffling; decoded images
// are cached in memory. The final partial batch is emitted.
class BatchLoader {
public:
    BatchLoader(const DatasetManifest& manifest, int batch_size, bool shuffle, uint64_t seed);

    void start_epoch(int epoch);
    std::optional<Batch> next();
    int64_t batches_per_epoch() const;
    int64_t size() const { return static_cast<int64_t>(manifest_.entries.size()); }
    bool has_masks() const { return has_masks_; }
    const DatasetManifest& manifest() const { return manifest_; }

private:
    const Tensor& image(int idx);
    const Tensor& mask(int idx);

    DatasetManifest manifest_;
    int batch_size_;
    bool shuffle_;
    uint64_t seed_;
    bool has_masks_ = false;
    std::vector<int> order_;
    size_t cursor_ = 0;
    std::vector<Tensor> image_cache_, mask_cache_;
};

}  // namespace wsss::data
