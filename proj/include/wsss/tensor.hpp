#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace wsss {

// Dense row-major tensor of doubles. Plain value semantics; all heavy
// math goes through the kernels layer, this class only owns storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape);
    Tensor(std::vector<int> shape, double fill);
    Tensor(std::vector<int> shape, std::vector<double> values);

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<int> shape, double v) { return Tensor(std::move(shape), v); }

    bool defined() const { return !shape_.empty(); }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const;
    const std::vector<int>& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](int64_t i) { return data_[i]; }
    double operator[](int64_t i) const { return data_[i]; }

    // Multi-index access, mostly for tests and small setup code.
    double& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
    double at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }
    int64_t offset(std::initializer_list<int> idx) const;

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
    Tensor reshaped(std::vector<int> new_shape) const;  // size-preserving

    void fill(double v);
    bool all_finite() const;
    double min() const;
    double max() const;

    std::string shape_str() const;
    static std::string shape_str(const std::vector<int>& shape);

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int>& shape);

}  // namespace wsss
