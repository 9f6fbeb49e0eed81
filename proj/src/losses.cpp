#include "wsss/losses.hpp"

#include <cmath>

#include "wsss/errors.hpp"

namespace wsss::losses {

using ad::Var;

Var loss_recon(const Var& recon, const Var& image) {
    if (!recon.value().same_shape(image.value()))
        throw DimensionError("loss_recon: " + recon.value().shape_str() + " vs " + image.value().shape_str());
    Var d = ad::sub(recon, image);
    Var sq = ad::mul(d, d);
    return ad::scale_add(ad::sum(sq), 1.0 / static_cast<double>(sq.value().size()), 0.0);
}

Var loss_mask(const Var& y_hat, const core::TagLabelBatch& y, double eps) {
    const Tensor& yh = y_hat.value();
    if (yh.ndim() != 2) throw DimensionError("loss_mask: scores must be (B,K), got " + yh.shape_str());
    if (!yh.same_shape(y.y))
        throw DimensionError("loss_mask: label length " + std::to_string(y.y.dim(1)) + " vs K=" +
                             std::to_string(yh.dim(1)) + " (axis 1)");
    const int b = yh.dim(0), kk = yh.dim(1);
    Tensor one_minus_y(y.y.shape());
    for (int64_t i = 0; i < y.y.size(); ++i) one_minus_y[i] = 1.0 - y.y[i];

    Var log_p = ad::log(ad::clamp_min(y_hat, eps));
    Var log_q = ad::log(ad::clamp_min(ad::scale_add(y_hat, -1.0, 1.0), eps));
    Var terms = ad::add(ad::mul(Var::constant(y.y), log_p), ad::mul(Var::constant(one_minus_y), log_q));
    return ad::scale_add(ad::sum(terms), -1.0 / static_cast<double>(kk) / static_cast<double>(b), 0.0);
}

Var loss_cls(const Var& m, const Var& x, const core::TagLabelBatch& y, ClassifierModel& g, double eps) {
    const int b = m.value().dim(0);
    const int kk = m.value().dim(1);
    if (y.y.dim(0) != b || y.y.dim(1) != kk)
        throw DimensionError("loss_cls: labels " + y.y.shape_str() + " vs mask classes " +
                             std::to_string(kk));
    const int fg = kk - 1;
    if (g.num_outputs() != fg)
        throw ConfigError("classifier emits " + std::to_string(g.num_outputs()) + " scores, expected K-1=" +
                          std::to_string(fg));

    Var comps = ad::component_images(m, x);
    Var acc;
    for (int ki = 0; ki < kk; ++ki) {
        Var probs = g.forward(ad::select_class(comps, ki));
        if (probs.value().ndim() != 2 || probs.value().dim(0) != b || probs.value().dim(1) != fg)
            throw ConfigError("classifier output shape " + probs.value().shape_str() + ", expected (" +
                              std::to_string(b) + "," + std::to_string(fg) + ")");
        if (!probs.value().all_finite()) throw NumericError("classifier produced a non-finite score");

        // presence term: only for present foreground classes, on their own component
        Tensor pos({b, fg}, 0.0);
        if (ki < fg) {
            for (int bi = 0; bi < b; ++bi)
                if (y.y.at({bi, ki}) == 1.0) pos.at({bi, ki}) = 1.0;
        }
        // exclusion term: every other foreground class must be absent from this component
        Tensor neg({b, fg}, 0.0);
        for (int bi = 0; bi < b; ++bi)
            for (int j = 0; j < fg; ++j)
                if (j != ki) neg.at({bi, j}) = 1.0;

        Var log_p = ad::log(ad::clamp_min(probs, eps));
        Var log_q = ad::log(ad::clamp_min(ad::scale_add(probs, -1.0, 1.0), eps));
        Var term = ad::add(ad::sum(ad::mul(Var::constant(pos), log_p)),
                           ad::sum(ad::mul(Var::constant(neg), log_q)));
        acc = acc.defined() ? ad::add(acc, term) : term;
    }
    return ad::scale_add(acc, -1.0 / static_cast<double>(kk) / static_cast<double>(b), 0.0);
}

Var loss_classifier(const Var& z_hat, const core::TagLabelBatch& y, double eps) {
    const Tensor& z = z_hat.value();
    if (z.ndim() != 2) throw DimensionError("loss_classifier: scores must be (B,K-1), got " + z.shape_str());
    const int b = z.dim(0), fg = z.dim(1);
    if (y.y.dim(0) != b || y.y.dim(1) != fg + 1)
        throw DimensionError("loss_classifier: scores " + z.shape_str() + " vs labels " + y.y.shape_str() +
                             " (expect K-1 foreground columns)");
    Tensor yfg({b, fg});
    Tensor yfg_inv({b, fg});
    for (int bi = 0; bi < b; ++bi) {
        for (int j = 0; j < fg; ++j) {
            yfg.at({bi, j}) = y.y.at({bi, j});
            yfg_inv.at({bi, j}) = 1.0 - y.y.at({bi, j});
        }
    }
    Var log_p = ad::log(ad::clamp_min(z_hat, eps));
    Var log_q = ad::log(ad::clamp_min(ad::scale_add(z_hat, -1.0, 1.0), eps));
    Var terms = ad::add(ad::mul(Var::constant(yfg), log_p), ad::mul(Var::constant(yfg_inv), log_q));
    return ad::scale_add(ad::sum(terms), -1.0 / static_cast<double>(b), 0.0);
}

TotalLoss loss_total(const Var& m, const Var& x, const Var& image, const core::TagLabelBatch& y, ClassifierModel& g,
                     const core::LossWeights& w) {
    w.validate();
    TotalLoss out;
    out.recon = loss_recon(ad::recompose(m, x), image);
    out.mask = loss_mask(ad::average_mask_score(m), y, w.eps);
    out.cls = loss_cls(m, x, y, g, w.eps);
    out.total = ad::add(ad::add(out.recon, ad::scale_add(out.mask, w.lambda_m, 0.0)),
                        ad::scale_add(out.cls, w.lambda_c, 0.0));
    out.report.recon = out.recon.value()[0];
    out.report.mask = out.mask.value()[0];
    out.report.cls = out.cls.value()[0];
    out.report.total = out.total.value()[0];
    out.report.lambda_m = w.lambda_m;
    out.report.lambda_c = w.lambda_c;
    return out;
}

}  // namespace wsss::losses
