#include "wsss/core.hpp"

#include <cmath>

#include "wsss/errors.hpp"

namespace wsss::core {

void ImageBatch::validate() const {
    if (data.ndim() != 4) throw DimensionError("ImageBatch must be (B,C,H,W), got " + data.shape_str());
    if (data.dim(1) != 3) throw ValueError("ImageBatch requires C=3, got C=" + std::to_string(data.dim(1)));
    if (data.dim(0) < 1) throw ValueError("ImageBatch requires B >= 1");
    for (int64_t i = 0; i < data.size(); ++i) {
        const double v = data[i];
        if (!std::isfinite(v)) throw ValueError("ImageBatch contains a non-finite pixel");
        if (v < 0.0 || v > 1.0) throw ValueError("ImageBatch pixel " + std::to_string(v) + " outside [0,1]");
    }
}

ImageBatch ImageBatch::checked(Tensor t) {
    ImageBatch b{std::move(t)};
    b.validate();
    return b;
}

void TagLabelBatch::validate() const {
    if (y.ndim() != 2) throw DimensionError("TagLabelBatch must be (B,K), got " + y.shape_str());
    const int k = num_classes();
    if (k < 2) throw ValueError("TagLabelBatch requires K >= 2, got K=" + std::to_string(k));
    for (int b = 0; b < batch(); ++b) {
        double row_sum = 0.0;
        for (int j = 0; j < k; ++j) {
            const double v = y.at({b, j});
            if (!std::isfinite(v)) throw ValueError("label contains a non-finite entry");
            if (mode == LabelMode::Indicator) {
                if (v != 0.0 && v != 1.0)
                    throw ValueError("indicator label entry " + std::to_string(v) + " not in {0,1}");
            } else {
                if (v < 0.0 || v > 1.0) throw ValueError("soft-area label entry outside [0,1]");
            }
            row_sum += v;
        }
        if (mode == LabelMode::Indicator) {
            if (y.at({b, k - 1}) != 1.0) throw ValueError("background bit (last component) must be 1");
        } else if (std::abs(row_sum - 1.0) > 1e-6) {
            throw ValueError("soft-area label row must sum to 1, got " + std::to_string(row_sum));
        }
    }
}

TagLabelBatch TagLabelBatch::checked(Tensor t, LabelMode mode) {
    TagLabelBatch b{std::move(t), mode};
    b.validate();
    return b;
}

void MaskStack::validate() const {
    if (m.ndim() != 4) throw DimensionError("MaskStack must be (B,K,H,W), got " + m.shape_str());
    const int b = batch(), k = num_classes();
    const int64_t hw = static_cast<int64_t>(height()) * width();
    for (int64_t i = 0; i < m.size(); ++i) {
        const double v = m[i];
        if (!std::isfinite(v)) throw ValueError("MaskStack contains a non-finite value");
        if (v < 0.0 || v > 1.0) throw ValueError("MaskStack value " + std::to_string(v) + " outside [0,1]");
    }
    for (int bi = 0; bi < b; ++bi) {
        for (int64_t p = 0; p < hw; ++p) {
            double s = 0.0;
            for (int ki = 0; ki < k; ++ki) s += m[(static_cast<int64_t>(bi) * k + ki) * hw + p];
            if (std::abs(s - 1.0) > kMaskSimplexTol)
                throw ValueError("MaskStack pixel distribution sums to " + std::to_string(s));
        }
    }
}

MaskStack MaskStack::checked(Tensor t) {
    MaskStack s{std::move(t)};
    s.validate();
    return s;
}

void Decomposition::validate() const {
    if (x.ndim() != 5) throw DimensionError("Decomposition must be (B,K,C,H,W), got " + x.shape_str());
    if (x.dim(2) != 3) throw ValueError("Decomposition requires C=3, got C=" + std::to_string(x.dim(2)));
    if (!x.all_finite()) throw ValueError("Decomposition contains a non-finite value");
}

Decomposition Decomposition::checked(Tensor t) {
    Decomposition d{std::move(t)};
    d.validate();
    return d;
}

void LossWeights::validate() const {
    if (lambda_m < 0.0 || lambda_c < 0.0) throw ValueError("loss weights must be nonnegative");
    if (!(eps > 0.0 && eps < 1e-3)) throw ValueError("eps must lie in (0, 1e-3)");
}

Tensor recompose(const Tensor& m, const Tensor& x) {
    return ad::recompose(ad::Var::constant(m), ad::Var::constant(x)).value();
}

Tensor component_images(const Tensor& m, const Tensor& x) {
    return ad::component_images(ad::Var::constant(m), ad::Var::constant(x)).value();
}

Tensor average_mask_score(const Tensor& m) { return ad::average_mask_score(ad::Var::constant(m)).value(); }

}  // namespace wsss::core
