#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "wsss/tensor.hpp"

namespace wsss::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

// Reverse-mode autodiff over Tensors. Ops build the graph eagerly; the
// graph is a DAG of shared_ptr-linked nodes that lives as long as some
// Var references its root. backward() walks the DAG once in reverse
// topological order and accumulates gradients into every node that
// requires them. Single-threaded by design: one training thread owns
// the graph, kernels parallelize internally.
class Node {
public:
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : node_(std::move(n)) {}

    static Var input(Tensor value, bool requires_grad = false);
    static Var param(Tensor value) { return input(std::move(value), true); }
    static Var constant(Tensor value) { return input(std::move(value), false); }

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    Tensor& grad() { return node_->grad; }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }
    void zero_grad();
    const NodePtr& node() const { return node_; }

private:
    NodePtr node_;
};

// Propagates d(root)/d(node) into every reachable node with
// requires_grad; root must be scalar.
void backward(const Var& root);

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale_add(const Var& a, double mul, double add);  // mul*a + add
Var log(const Var& a);                                // caller keeps values positive (see clamp_min)
Var clamp_min(const Var& a, double lo);
Var sigmoid(const Var& a);
Var leaky_relu(const Var& a, double slope);

// reductions / shape
Var sum(const Var& a);  // -> shape {1}
Var reshape(const Var& a, std::vector<int> shape);
Var concat_channels(const Var& a, const Var& b);  // along axis 1 of (B,C,H,W)
Var select_class(const Var& t, int k);            // (B,K,C,H,W) -> (B,C,H,W)

// nn layers
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var maxpool2d(const Var& x, int ksize, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var softmax_channels(const Var& x);  // per-pixel over axis 1
Var linear(const Var& x, const Var& w, const Var& b);
Var global_avg_pool(const Var& x);
Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                bool training, double momentum, double eps);

// decomposition math
Var recompose(const Var& m, const Var& x);
Var component_images(const Var& m, const Var& x);
Var average_mask_score(const Var& m);

}  // namespace wsss::ad
