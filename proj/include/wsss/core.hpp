#pragma once

#include "wsss/autodiff.hpp"
#include "wsss/tensor.hpp"

namespace wsss::core {

// Batch of RGB images, values normalized to [0, 1].
struct ImageBatch {
    Tensor data;  // (B, 3, H, W)

    int batch() const { return data.dim(0); }
    int channels() const { return data.dim(1); }
    int height() const { return data.dim(2); }
    int width() const { return data.dim(3); }
    void validate() const;
    static ImageBatch checked(Tensor t);
};

enum class LabelMode { Indicator, SoftArea };

// Per-image class-presence vector(s); the background class is always the
// last component. Indicator mode holds {0,1} bits with background fixed
// to 1; soft-area mode holds normalized expected areas summing to 1.
struct TagLabelBatch {
    Tensor y;  // (B, K)
    LabelMode mode = LabelMode::Indicator;

    int batch() const { return y.dim(0); }
    int num_classes() const { return y.dim(1); }
    int background_index() const { return num_classes() - 1; }
    void validate() const;
    static TagLabelBatch checked(Tensor t, LabelMode mode);
};

// Per-pixel categorical distribution over K classes (the mask-lets).
struct MaskStack {
    Tensor m;  // (B, K, H, W)

    int batch() const { return m.dim(0); }
    int num_classes() const { return m.dim(1); }
    int height() const { return m.dim(2); }
    int width() const { return m.dim(3); }
    void validate() const;
    static MaskStack checked(Tensor t);
};

// K per-class image-lets; values live in all of R by construction.
struct Decomposition {
    Tensor x;  // (B, K, 3, H, W)

    int batch() const { return x.dim(0); }
    int num_classes() const { return x.dim(1); }
    void validate() const;
    static Decomposition checked(Tensor t);
};

struct LossWeights {
    double lambda_m = 1e-3;
    double lambda_c = 1e-3;
    double eps = 1e-7;  // log clamp
    void validate() const;
};

// recomposition: out[b,c,h,w] = sum_k m[b,k,h,w] * x[b,k,c,h,w]
Tensor recompose(const Tensor& m, const Tensor& x);
// per-class contributions: out[b,k,c,h,w] = m[b,k,h,w] * x[b,k,c,h,w]
Tensor component_images(const Tensor& m, const Tensor& x);
// per-class mean mask probability: out[b,k] = mean_hw m[b,k,h,w]
Tensor average_mask_score(const Tensor& m);

constexpr double kMaskSimplexTol = 1e-5;

}  // namespace wsss::core
