#include "wsss/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "wsss/errors.hpp"
#include "wsss/kernels.hpp"

namespace wsss::ad {

namespace k = wsss::kernels;

Tensor& Node::ensure_grad() {
    if (!grad.defined()) grad = Tensor::zeros(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    k::vec_add(grad.data(), g.data(), grad.data(), grad.size());
}

Var Var::input(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

void Var::zero_grad() {
    if (node_ && node_->grad.defined()) node_->grad.fill(0.0);
}

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->op = op;
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

// Gradient contribution helpers -- every backward_fn below accumulates
// into parents that require grad and leaves the rest untouched.
bool wants(const NodePtr& p) { return p->requires_grad; }

}  // namespace

void backward(const Var& root) {
    Node* r = root.node().get();
    if (!r) throw ValueError("backward on an undefined Var");
    if (r->value.size() != 1) throw ValueError("backward requires a scalar, got shape " + r->value.shape_str());
    if (!r->requires_grad) return;

    // reverse post-order over the requires_grad subgraph
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(r, 0);
    seen.insert(r);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    r->ensure_grad();
    r->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.defined()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "add: " + a.value().shape_str() + " vs " + b.value().shape_str());
    Tensor out(a.value().shape());
    k::vec_add(a.value().data(), b.value().data(), out.data(), out.size());
    auto n = make_node(std::move(out), {a.node(), b.node()}, "add");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            for (int i = 0; i < 2; ++i)
                if (wants(self.parents[i])) self.parents[i]->accumulate(self.grad);
        };
    return Var(n);
}

Var sub(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "sub: " + a.value().shape_str() + " vs " + b.value().shape_str());
    Tensor out(a.value().shape());
    k::vec_sub(a.value().data(), b.value().data(), out.data(), out.size());
    auto n = make_node(std::move(out), {a.node(), b.node()}, "sub");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            if (wants(self.parents[0])) self.parents[0]->accumulate(self.grad);
            if (wants(self.parents[1])) {
                Tensor& g = self.parents[1]->ensure_grad();
                k::vec_axpy(-1.0, self.grad.data(), g.data(), g.size());
            }
        };
    return Var(n);
}

Var mul(const Var& a, const Var& b) {
    require(a.value().same_shape(b.value()), "mul: " + a.value().shape_str() + " vs " + b.value().shape_str());
    Tensor out(a.value().shape());
    k::vec_mul(a.value().data(), b.value().data(), out.data(), out.size());
    auto n = make_node(std::move(out), {a.node(), b.node()}, "mul");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            const Tensor& av = self.parents[0]->value;
            const Tensor& bv = self.parents[1]->value;
            if (wants(self.parents[0])) {
                Tensor tmp(av.shape());
                k::vec_mul(self.grad.data(), bv.data(), tmp.data(), tmp.size());
                self.parents[0]->accumulate(tmp);
            }
            if (wants(self.parents[1])) {
                Tensor tmp(bv.shape());
                k::vec_mul(self.grad.data(), av.data(), tmp.data(), tmp.size());
                self.parents[1]->accumulate(tmp);
            }
        };
    return Var(n);
}

Var scale_add(const Var& a, double mul, double add) {
    Tensor out(a.value().shape());
    k::vec_scale_add(a.value().data(), mul, add, out.data(), out.size());
    auto n = make_node(std::move(out), {a.node()}, "scale_add");
    if (n->requires_grad)
        n->backward_fn = [mul](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::vec_axpy(mul, self.grad.data(), g.data(), g.size());
        };
    return Var(n);
}

Var log(const Var& a) {
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(a.value()[i]);
    auto n = make_node(std::move(out), {a.node()}, "log");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            const Tensor& x = self.parents[0]->value;
            Tensor& g = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / x[i];
        };
    return Var(n);
}

Var clamp_min(const Var& a, double lo) {
    Tensor out(a.value().shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > lo ? a.value()[i] : lo;
    auto n = make_node(std::move(out), {a.node()}, "clamp_min");
    if (n->requires_grad)
        n->backward_fn = [lo](Node& self) {
            const Tensor& x = self.parents[0]->value;
            Tensor& g = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < g.size(); ++i)
                if (x[i] > lo) g[i] += self.grad[i];
        };
    return Var(n);
}

Var sigmoid(const Var& a) {
    Tensor out(a.value().shape());
    k::sigmoid_fwd(a.value().data(), out.data(), out.size());
    auto n = make_node(std::move(out), {a.node()}, "sigmoid");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::sigmoid_bwd(self.value.data(), self.grad.data(), g.data(), g.size());
        };
    return Var(n);
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out(a.value().shape());
    k::leaky_relu_fwd(a.value().data(), out.data(), out.size(), slope);
    auto n = make_node(std::move(out), {a.node()}, "leaky_relu");
    if (n->requires_grad)
        n->backward_fn = [slope](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::leaky_relu_bwd(self.parents[0]->value.data(), self.grad.data(), g.data(), g.size(), slope);
        };
    return Var(n);
}

// ---------------------------------------------------------------------------
// reductions / shape

Var sum(const Var& a) {
    Tensor out({1});
    out[0] = k::reduce_sum(a.value().data(), a.value().size());
    auto n = make_node(std::move(out), {a.node()}, "sum");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            const double g0 = self.grad[0];
            for (int64_t i = 0; i < g.size(); ++i) g[i] += g0;
        };
    return Var(n);
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    auto n = make_node(std::move(out), {a.node()}, "reshape");
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::vec_add(g.data(), self.grad.data(), g.data(), g.size());
        };
    return Var(n);
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require(av.ndim() == 4 && bv.ndim() == 4, "concat_channels expects rank-4 inputs");
    require(av.dim(0) == bv.dim(0), "concat_channels: batch mismatch (axis 0)");
    require(av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3), "concat_channels: spatial mismatch (axes 2,3)");
    const int bsz = av.dim(0), ca = av.dim(1), cb = bv.dim(1);
    const int64_t hw = static_cast<int64_t>(av.dim(2)) * av.dim(3);
    Tensor out({bsz, ca + cb, av.dim(2), av.dim(3)});
    for (int bi = 0; bi < bsz; ++bi) {
        std::memcpy(out.data() + static_cast<int64_t>(bi) * (ca + cb) * hw, av.data() + static_cast<int64_t>(bi) * ca * hw,
                    sizeof(double) * ca * hw);
        std::memcpy(out.data() + (static_cast<int64_t>(bi) * (ca + cb) + ca) * hw,
                    bv.data() + static_cast<int64_t>(bi) * cb * hw, sizeof(double) * cb * hw);
    }
    auto n = make_node(std::move(out), {a.node(), b.node()}, "concat_channels");
    if (n->requires_grad)
        n->backward_fn = [bsz, ca, cb, hw](Node& self) {
            for (int bi = 0; bi < bsz; ++bi) {
                const double* g0 = self.grad.data() + static_cast<int64_t>(bi) * (ca + cb) * hw;
                if (wants(self.parents[0])) {
                    Tensor& g = self.parents[0]->ensure_grad();
                    k::vec_add(g.data() + static_cast<int64_t>(bi) * ca * hw, g0,
                               g.data() + static_cast<int64_t>(bi) * ca * hw, ca * hw);
                }
                if (wants(self.parents[1])) {
                    Tensor& g = self.parents[1]->ensure_grad();
                    k::vec_add(g.data() + static_cast<int64_t>(bi) * cb * hw, g0 + ca * hw,
                               g.data() + static_cast<int64_t>(bi) * cb * hw, cb * hw);
                }
            }
        };
    return Var(n);
}

Var select_class(const Var& t, int kidx) {
    const Tensor& tv = t.value();
    require(tv.ndim() == 5, "select_class expects (B,K,C,H,W)");
    const int bsz = tv.dim(0), kk = tv.dim(1), c = tv.dim(2), h = tv.dim(3), w = tv.dim(4);
    require(kidx >= 0 && kidx < kk, "select_class: class index out of range (axis 1)");
    const int64_t block = static_cast<int64_t>(c) * h * w;
    Tensor out({bsz, c, h, w});
    for (int bi = 0; bi < bsz; ++bi)
        std::memcpy(out.data() + bi * block, tv.data() + (static_cast<int64_t>(bi) * kk + kidx) * block,
                    sizeof(double) * block);
    auto n = make_node(std::move(out), {t.node()}, "select_class");
    if (n->requires_grad)
        n->backward_fn = [bsz, kk, kidx, block](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (int bi = 0; bi < bsz; ++bi) {
                double* dst = g.data() + (static_cast<int64_t>(bi) * kk + kidx) * block;
                k::vec_add(dst, self.grad.data() + bi * block, dst, block);
            }
        };
    return Var(n);
}

// ---------------------------------------------------------------------------
// nn layers

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require(xv.ndim() == 4, "conv2d input must be (B,C,H,W), got " + xv.shape_str());
    require(wv.ndim() == 4, "conv2d weight must be (Cout,Cin,k,k), got " + wv.shape_str());
    require(xv.dim(1) == wv.dim(1),
            "conv2d: input channels " + std::to_string(xv.dim(1)) + " vs weight " + std::to_string(wv.dim(1)) +
                " (axis 1)");
    require(wv.dim(2) == wv.dim(3), "conv2d: non-square kernel");
    const int bsz = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), win = xv.dim(3);
    const int cout = wv.dim(0), ks = wv.dim(2);
    require(b.value().size() == cout, "conv2d: bias length vs out channels (axis 0)");
    const int ho = k::conv_out_size(h, ks, stride, pad);
    const int wo = k::conv_out_size(win, ks, stride, pad);
    require(ho > 0 && wo > 0, "conv2d: output collapsed to zero size");
    const int ck2 = cin * ks * ks;
    const int64_t owo = static_cast<int64_t>(ho) * wo;

    Tensor out({bsz, cout, ho, wo});
    std::vector<double> col(static_cast<size_t>(ck2) * owo);
    for (int bi = 0; bi < bsz; ++bi) {
        k::im2col(xv.data() + static_cast<int64_t>(bi) * cin * h * win, cin, h, win, ks, stride, pad, col.data());
        double* out_i = out.data() + static_cast<int64_t>(bi) * cout * owo;
        k::gemm_nn(wv.data(), col.data(), out_i, cout, ck2, static_cast<int>(owo), false);
        k::add_bias_rows(out_i, b.value().data(), cout, static_cast<int>(owo));
    }

    auto n = make_node(std::move(out), {x.node(), w.node(), b.node()}, "conv2d");
    if (n->requires_grad)
        n->backward_fn = [bsz, cin, h, win, cout, ks, stride, pad, ck2, owo](Node& self) {
            const Tensor& xv2 = self.parents[0]->value;
            const Tensor& wv2 = self.parents[1]->value;
            const bool need_x = wants(self.parents[0]);
            const bool need_w = wants(self.parents[1]);
            const bool need_b = wants(self.parents[2]);
            std::vector<double> col(static_cast<size_t>(ck2) * owo);
            std::vector<double> dcol(need_x ? static_cast<size_t>(ck2) * owo : 0);
            for (int bi = 0; bi < bsz; ++bi) {
                const double* gy = self.grad.data() + static_cast<int64_t>(bi) * cout * owo;
                if (need_w || need_x) {
                    if (need_w) {
                        k::im2col(xv2.data() + static_cast<int64_t>(bi) * cin * h * win, cin, h, win, ks, stride, pad,
                                  col.data());
                        k::gemm_nt(gy, col.data(), self.parents[1]->ensure_grad().data(), cout,
                                   static_cast<int>(owo), ck2, true);
                    }
                    if (need_x) {
                        k::gemm_tn(wv2.data(), gy, dcol.data(), ck2, cout, static_cast<int>(owo), false);
                        k::col2im(dcol.data(), cin, h, win, ks, stride, pad,
                                  self.parents[0]->ensure_grad().data() + static_cast<int64_t>(bi) * cin * h * win);
                    }
                }
                if (need_b)
                    k::row_sums(gy, self.parents[2]->ensure_grad().data(), cout, static_cast<int>(owo));
            }
        };
    return Var(n);
}

Var maxpool2d(const Var& x, int ksize, int stride, int pad) {
    const Tensor& xv = x.value();
    require(xv.ndim() == 4, "maxpool2d input must be (B,C,H,W)");
    const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    const int ho = k::conv_out_size(h, ksize, stride, pad);
    const int wo = k::conv_out_size(w, ksize, stride, pad);
    require(ho > 0 && wo > 0, "maxpool2d: output collapsed to zero size (axes 2,3)");
    Tensor out({xv.dim(0), xv.dim(1), ho, wo});
    auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(planes) * ho * wo);
    k::maxpool_fwd(xv.data(), out.data(), argmax->data(), planes, h, w, ksize, stride, pad);
    auto n = make_node(std::move(out), {x.node()}, "maxpool2d");
    if (n->requires_grad)
        n->backward_fn = [argmax, planes, h, w, ksize, stride, pad](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::maxpool_bwd(self.grad.data(), argmax->data(), g.data(), planes, h, w, ksize, stride, pad);
        };
    return Var(n);
}

Var upsample_nearest2(const Var& x) {
    const Tensor& xv = x.value();
    require(xv.ndim() == 4, "upsample_nearest2 input must be (B,C,H,W)");
    const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
    k::upsample2_fwd(xv.data(), out.data(), planes, h, w);
    auto n = make_node(std::move(out), {x.node()}, "upsample_nearest2");
    if (n->requires_grad)
        n->backward_fn = [planes, h, w](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::upsample2_bwd(self.grad.data(), g.data(), planes, h, w);
        };
    return Var(n);
}

Var softmax_channels(const Var& x) {
    const Tensor& xv = x.value();
    require(xv.ndim() == 4, "softmax_channels input must be (B,K,H,W)");
    const int bsz = xv.dim(0), kk = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor out(xv.shape());
    k::softmax_ch_fwd(xv.data(), out.data(), bsz, kk, hw);
    auto n = make_node(std::move(out), {x.node()}, "softmax_channels");
    if (n->requires_grad)
        n->backward_fn = [bsz, kk, hw](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::softmax_ch_bwd(self.value.data(), self.grad.data(), g.data(), bsz, kk, hw);
        };
    return Var(n);
}

Var linear(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    require(xv.ndim() == 2 && wv.ndim() == 2, "linear expects (B,F) and (Out,F)");
    require(xv.dim(1) == wv.dim(1), "linear: feature size mismatch (axis 1)");
    const int bsz = xv.dim(0), f = xv.dim(1), outd = wv.dim(0);
    require(b.value().size() == outd, "linear: bias length vs out features");
    Tensor out({bsz, outd});
    k::gemm_nt(xv.data(), wv.data(), out.data(), bsz, f, outd, false);
    k::add_bias_cols(out.data(), b.value().data(), bsz, outd);
    auto n = make_node(std::move(out), {x.node(), w.node(), b.node()}, "linear");
    if (n->requires_grad)
        n->backward_fn = [bsz, f, outd](Node& self) {
            const double* gy = self.grad.data();
            if (wants(self.parents[0]))
                k::gemm_nn(gy, self.parents[1]->value.data(), self.parents[0]->ensure_grad().data(), bsz, outd, f,
                           true);
            if (wants(self.parents[1]))
                k::gemm_tn(gy, self.parents[0]->value.data(), self.parents[1]->ensure_grad().data(), outd, bsz, f,
                           true);
            if (wants(self.parents[2])) k::col_sums(gy, self.parents[2]->ensure_grad().data(), bsz, outd);
        };
    return Var(n);
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x.value();
    require(xv.ndim() == 4, "global_avg_pool input must be (B,C,H,W)");
    const int bsz = xv.dim(0), c = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    Tensor out({bsz, c});
    k::global_avgpool_fwd(xv.data(), out.data(), bsz, c, hw);
    auto n = make_node(std::move(out), {x.node()}, "global_avg_pool");
    if (n->requires_grad)
        n->backward_fn = [bsz, c, hw](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::global_avgpool_bwd(self.grad.data(), g.data(), bsz, c, hw);
        };
    return Var(n);
}

Var batchnorm2d(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean, Tensor& running_var,
                bool training, double momentum, double eps) {
    const Tensor& xv = x.value();
    require(xv.ndim() == 4, "batchnorm2d input must be (B,C,H,W)");
    const int bsz = xv.dim(0), c = xv.dim(1);
    const int64_t hw = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
    require(gamma.value().size() == c && beta.value().size() == c, "batchnorm2d: affine size vs channels (axis 1)");
    require(running_mean.size() == c && running_var.size() == c, "batchnorm2d: running stats size vs channels");

    auto mean = std::make_shared<Tensor>(std::vector<int>{c});
    auto invstd = std::make_shared<Tensor>(std::vector<int>{c});
    if (training) {
        Tensor var({c});
        k::bn_stats(xv.data(), bsz, c, hw, mean->data(), var.data());
        const double n_elems = static_cast<double>(bsz) * static_cast<double>(hw);
        for (int ci = 0; ci < c; ++ci) {
            (*invstd)[ci] = 1.0 / std::sqrt(var[ci] + eps);
            running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * (*mean)[ci];
            const double unbiased = n_elems > 1.0 ? var[ci] * n_elems / (n_elems - 1.0) : var[ci];
            running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased;
        }
    } else {
        for (int ci = 0; ci < c; ++ci) {
            (*mean)[ci] = running_mean[ci];
            (*invstd)[ci] = 1.0 / std::sqrt(running_var[ci] + eps);
        }
    }
    Tensor out(xv.shape());
    k::bn_fwd(xv.data(), mean->data(), invstd->data(), gamma.value().data(), beta.value().data(), out.data(), bsz, c,
              hw);
    auto n = make_node(std::move(out), {x.node(), gamma.node(), beta.node()}, "batchnorm2d");
    if (n->requires_grad)
        n->backward_fn = [mean, invstd, bsz, c, hw, training](Node& self) {
            double* gx = wants(self.parents[0]) ? self.parents[0]->ensure_grad().data() : nullptr;
            double* dgamma = wants(self.parents[1]) ? self.parents[1]->ensure_grad().data() : nullptr;
            double* dbeta = wants(self.parents[2]) ? self.parents[2]->ensure_grad().data() : nullptr;
            k::bn_bwd(self.parents[0]->value.data(), mean->data(), invstd->data(), self.parents[1]->value.data(),
                      self.grad.data(), gx, dgamma, dbeta, bsz, c, hw, training);
        };
    return Var(n);
}

// ---------------------------------------------------------------------------
// decomposition math

namespace {

void check_mask_decomp(const Tensor& m, const Tensor& x) {
    require(m.ndim() == 4, "mask must be (B,K,H,W), got " + m.shape_str());
    require(x.ndim() == 5, "decomposition must be (B,K,C,H,W), got " + x.shape_str());
    require(m.dim(0) == x.dim(0), "batch mismatch (axis 0): " + m.shape_str() + " vs " + x.shape_str());
    require(m.dim(1) == x.dim(1), "class mismatch (axis 1): " + m.shape_str() + " vs " + x.shape_str());
    require(m.dim(2) == x.dim(3) && m.dim(3) == x.dim(4),
            "spatial mismatch (axes 2,3 vs 3,4): " + m.shape_str() + " vs " + x.shape_str());
}

}  // namespace

Var recompose(const Var& m, const Var& x) {
    check_mask_decomp(m.value(), x.value());
    const int bsz = m.value().dim(0), kk = m.value().dim(1), c = x.value().dim(2);
    const int64_t hw = static_cast<int64_t>(m.value().dim(2)) * m.value().dim(3);
    Tensor out({bsz, c, m.value().dim(2), m.value().dim(3)});
    k::recompose_fwd(m.value().data(), x.value().data(), out.data(), bsz, kk, c, hw);
    auto n = make_node(std::move(out), {m.node(), x.node()}, "recompose");
    if (n->requires_grad)
        n->backward_fn = [bsz, kk, c, hw](Node& self) {
            double* gm = wants(self.parents[0]) ? self.parents[0]->ensure_grad().data() : nullptr;
            double* gx = wants(self.parents[1]) ? self.parents[1]->ensure_grad().data() : nullptr;
            k::recompose_bwd(self.parents[0]->value.data(), self.parents[1]->value.data(), self.grad.data(), gm, gx,
                             bsz, kk, c, hw);
        };
    return Var(n);
}

Var component_images(const Var& m, const Var& x) {
    check_mask_decomp(m.value(), x.value());
    const int bsz = m.value().dim(0), kk = m.value().dim(1), c = x.value().dim(2);
    const int64_t hw = static_cast<int64_t>(m.value().dim(2)) * m.value().dim(3);
    Tensor out(x.value().shape());
    k::component_fwd(m.value().data(), x.value().data(), out.data(), bsz, kk, c, hw);
    auto n = make_node(std::move(out), {m.node(), x.node()}, "component_images");
    if (n->requires_grad)
        n->backward_fn = [bsz, kk, c, hw](Node& self) {
            double* gm = wants(self.parents[0]) ? self.parents[0]->ensure_grad().data() : nullptr;
            double* gx = wants(self.parents[1]) ? self.parents[1]->ensure_grad().data() : nullptr;
            k::component_bwd(self.parents[0]->value.data(), self.parents[1]->value.data(), self.grad.data(), gm, gx,
                             bsz, kk, c, hw);
        };
    return Var(n);
}

Var average_mask_score(const Var& m) {
    const Tensor& mv = m.value();
    require(mv.ndim() == 4, "average_mask_score input must be (B,K,H,W), got " + mv.shape_str());
    const int bsz = mv.dim(0), kk = mv.dim(1);
    const int64_t hw = static_cast<int64_t>(mv.dim(2)) * mv.dim(3);
    Tensor out({bsz, kk});
    k::avgscore_fwd(mv.data(), out.data(), bsz, kk, hw);
    auto n = make_node(std::move(out), {m.node()}, "average_mask_score");
    if (n->requires_grad)
        n->backward_fn = [bsz, kk, hw](Node& self) {
            Tensor& g = self.parents[0]->ensure_grad();
            k::avgscore_bwd(self.grad.data(), g.data(), bsz, kk, hw);
        };
    return Var(n);
}

}  // namespace wsss::ad
