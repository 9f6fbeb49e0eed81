#pragma once

#include <array>
#include <string>
#include <vector>

#include "wsss/core.hpp"
#include "wsss/data.hpp"
#include "wsss/models.hpp"

namespace wsss::evaluation {

struct SegMetrics {
    int num_classes = 0;
    std::vector<long long> confusion;  // K*K, [truth*K + pred]
    std::vector<double> per_class_iou, precision, recall;
    std::vector<bool> class_present;  // class occurs in prediction or truth
    double mean_iou = 0.0;            // over present classes
    double pixel_accuracy = 0.0;
};

// Per-pixel argmax over the class axis; ties break to the lowest index.
Tensor argmax_labels(const Tensor& mask_probs);  // (B,K,H,W) -> (B,H,W)

// Hard label map and the underlying mask probabilities for a batch.
std::pair<Tensor, Tensor> predict_mask(models::Segmenter& seg, const core::ImageBatch& images);

void accumulate_confusion(std::vector<long long>& confusion, const Tensor& pred, const Tensor& truth,
                          int num_classes);
SegMetrics metrics_from_confusion(const std::vector<long long>& confusion, int num_classes);
SegMetrics compute_metrics(const Tensor& pred, const Tensor& truth, int num_classes);

std::array<double, 3> class_color(int cls);

struct OverlayGrids {
    Tensor inputs;   // (3, rows*H, cols*W)
    Tensor overlay;  // same, with per-class tint at fixed alpha on foreground
};

// images: (3,H,W) tensors; labels: matching (H,W) hard maps with
// background = num_classes-1. Renders the first n in the order given;
// background pixels keep the raw image, foreground blends its class color
// at the given alpha.
OverlayGrids render_overlay_grid(const std::vector<Tensor>& images, const std::vector<Tensor>& labels, int n,
                                 int rows, int cols, int num_classes, double alpha = 0.5);

struct PopulationStats {
    long long count = 0;
    double mean_fg_area = 0.0;     // mean predicted foreground pixel fraction
    double fp_rate = 0.0;          // fraction of images above area_threshold
    double area_threshold = 0.01;  // of total pixels
};

struct EvalReport {
    bool has_seg_metrics = false;  // stays false when the manifest lacks ground truth
    SegMetrics seg;
    double tag_accuracy = -1.0;  // classifier tag accuracy when a classifier is present
    PopulationStats present, absent;
    std::vector<std::string> figure_paths;
    std::string text;
};

// Runs the checkpointed segmenter over the manifest, writes metrics
// (metrics.txt / metrics.json) and the present/absent overlay grids into
// out_dir, and returns the report.
EvalReport evaluate_run(const std::string& checkpoint_dir, const data::DatasetManifest& manifest,
                        const std::string& out_dir, int figure_samples, uint64_t seed, int batch_size = 8);

}  // namespace wsss::evaluation
