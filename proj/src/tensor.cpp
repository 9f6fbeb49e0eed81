#include "wsss/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "wsss/errors.hpp"

namespace wsss {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimensionError("nonpositive dimension in shape " + Tensor::shape_str(shape));
        n *= d;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
        throw DimensionError("value count " + std::to_string(data_.size()) + " does not fill shape " + shape_str());
}

int Tensor::dim(int i) const {
    if (i < 0 || i >= ndim()) throw DimensionError("axis " + std::to_string(i) + " out of range for " + shape_str());
    return shape_[i];
}

int64_t Tensor::offset(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != ndim())
        throw DimensionError("index rank " + std::to_string(idx.size()) + " vs tensor rank " + std::to_string(ndim()));
    int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_numel(new_shape) != size())
        throw DimensionError("reshape " + shape_str() + " -> " + shape_str(new_shape) + " changes element count");
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

void Tensor::fill(double v) {
    for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::min() const {
    double m = std::numeric_limits<double>::infinity();
    for (double x : data_) m = x < m ? x : m;
    return m;
}

double Tensor::max() const {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : data_) m = x > m ? x : m;
    return m;
}

std::string Tensor::shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

std::string Tensor::shape_str() const { return shape_str(shape_); }

}  // namespace wsss
