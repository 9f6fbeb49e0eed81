#pragma once

#include "wsss/autodiff.hpp"
#include "wsss/core.hpp"

namespace wsss::losses {

// Image classifier interface used for guidance: maps (B,3,H,W) to
// per-class presence probabilities (B, K-1) in (0,1). The background
// class has no output. Tests plug stub implementations in here.
struct ClassifierModel {
    virtual ~ClassifierModel() = default;
    virtual ad::Var forward(const ad::Var& images) = 0;
    virtual int num_outputs() const = 0;
};

struct LossReport {
    double recon = 0.0;
    double mask = 0.0;
    double cls = 0.0;
    double total = 0.0;
    double lambda_m = 0.0;
    double lambda_c = 0.0;

    double weighted_mask() const { return lambda_m * mask; }
    double weighted_cls() const { return lambda_c * cls; }
};

// Mean squared error over all pixels and channels, averaged over the batch.
ad::Var loss_recon(const ad::Var& recon, const ad::Var& image);

// Cross-entropy between average mask scores and the (possibly soft) labels,
// averaged over classes and batch. Logs are clamped at eps.
ad::Var loss_mask(const ad::Var& y_hat, const core::TagLabelBatch& y, double eps);

// Classifier guidance on the per-class component images: each present
// foreground class must be recognizable in its own component, and no
// foreground class may be recognizable in any other component (including
// the background's, which is how background ambiguity is resolved).
ad::Var loss_cls(const ad::Var& m, const ad::Var& x, const core::TagLabelBatch& y, ClassifierModel& g, double eps);

// Multi-label binary cross-entropy for classifier pretraining: summed over
// the K-1 foreground classes, averaged over the batch.
ad::Var loss_classifier(const ad::Var& z_hat, const core::TagLabelBatch& y, double eps);

struct TotalLoss {
    ad::Var total;
    ad::Var recon;
    ad::Var mask;
    ad::Var cls;
    LossReport report;
};

// total = recon + lambda_m * mask + lambda_c * cls, with the recomposition
// computed internally from (m, x).
TotalLoss loss_total(const ad::Var& m, const ad::Var& x, const ad::Var& image, const core::TagLabelBatch& y,
                     ClassifierModel& g, const core::LossWeights& w);

}  // namespace wsss::losses
