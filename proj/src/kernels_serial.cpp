#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "wsss/kernels.hpp"

// Reference implementations: plainest possible loops, no pragmas.
// The OpenMP backend must match these within floating-point reordering
// noise; the unit tests compare the two on random inputs.

namespace wsss::kernels::serial {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<int64_t>(i) * k + p];
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<int64_t>(i) * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<int64_t>(p) * m + i];
            const double* brow = b + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<int64_t>(i) * k;
        double* crow = c + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<int64_t>(j) * k;
            double sum = 0.0;
            for (int p = 0; p < k; ++p) sum += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + sum : sum;
        }
    }
}

void im2col(const double* img, int c, int h, int w, int ksize, int stride, int pad, double* col) {
    const int ho = conv_out_size(h, ksize, stride, pad);
    const int wo = conv_out_size(w, ksize, stride, pad);
    const int64_t owo = static_cast<int64_t>(ho) * wo;
    for (int ch = 0; ch < c; ++ch) {
        for (int kh = 0; kh < ksize; ++kh) {
            for (int kw = 0; kw < ksize; ++kw) {
                double* dst = col + ((static_cast<int64_t>(ch) * ksize + kh) * ksize + kw) * owo;
                const double* src = img + static_cast<int64_t>(ch) * h * w;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + kw - pad;
                        dst[static_cast<int64_t>(oh) * wo + ow] =
                            (ih >= 0 && ih < h && iw >= 0 && iw < w) ? src[static_cast<int64_t>(ih) * w + iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, int c, int h, int w, int ksize, int stride, int pad, double* img) {
    const int ho = conv_out_size(h, ksize, stride, pad);
    const int wo = conv_out_size(w, ksize, stride, pad);
    const int64_t owo = static_cast<int64_t>(ho) * wo;
    for (int ch = 0; ch < c; ++ch) {
        double* dst = img + static_cast<int64_t>(ch) * h * w;
        for (int kh = 0; kh < ksize; ++kh) {
            for (int kw = 0; kw < ksize; ++kw) {
                const double* src = col + ((static_cast<int64_t>(ch) * ksize + kh) * ksize + kw) * owo;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= h) continue;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride + kw - pad;
                        if (iw < 0 || iw >= w) continue;
                        dst[static_cast<int64_t>(ih) * w + iw] += src[static_cast<int64_t>(oh) * wo + ow];
                    }
                }
            }
        }
    }
}

void add_bias_rows(double* out, const double* bias, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        double* row = out + static_cast<int64_t>(r) * cols;
        for (int j = 0; j < cols; ++j) row[j] += bias[r];
    }
}

void add_bias_cols(double* out, const double* bias, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        double* row = out + static_cast<int64_t>(r) * cols;
        for (int j = 0; j < cols; ++j) row[j] += bias[j];
    }
}

void row_sums(const double* a, double* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* row = a + static_cast<int64_t>(r) * cols;
        double s = 0.0;
        for (int j = 0; j < cols; ++j) s += row[j];
        out[r] += s;
    }
}

void col_sums(const double* a, double* out, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* row = a + static_cast<int64_t>(r) * cols;
        for (int j = 0; j < cols; ++j) out[j] += row[j];
    }
}

void maxpool_fwd(const double* x, double* y, int32_t* argmax, int planes, int h, int w, int ksize, int stride,
                 int pad) {
    const int ho = conv_out_size(h, ksize, stride, pad);
    const int wo = conv_out_size(w, ksize, stride, pad);
    for (int p = 0; p < planes; ++p) {
        const double* src = x + static_cast<int64_t>(p) * h * w;
        double* dst = y + static_cast<int64_t>(p) * ho * wo;
        int32_t* arg = argmax + static_cast<int64_t>(p) * ho * wo;
        for (int oh = 0; oh < ho; ++oh) {
            for (int ow = 0; ow < wo; ++ow) {
                double best = -std::numeric_limits<double>::infinity();
                int32_t best_idx = -1;
                for (int kh = 0; kh < ksize; ++kh) {
                    const int ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= h) continue;
                    for (int kw = 0; kw < ksize; ++kw) {
                        const int iw = ow * stride + kw - pad;
                        if (iw < 0 || iw >= w) continue;
                        const double v = src[static_cast<int64_t>(ih) * w + iw];
                        if (v > best) {
                            best = v;
                            best_idx = static_cast<int32_t>(ih * w + iw);
                        }
                    }
                }
                dst[static_cast<int64_t>(oh) * wo + ow] = best;
                arg[static_cast<int64_t>(oh) * wo + ow] = best_idx;
            }
        }
    }
}

void maxpool_bwd(const double* gy, const int32_t* argmax, double* gx, int planes, int h, int w, int ksize, int stride,
                 int pad) {
    const int ho = conv_out_size(h, ksize, stride, pad);
    const int wo = conv_out_size(w, ksize, stride, pad);
    const int64_t out_plane = static_cast<int64_t>(ho) * wo;
    for (int p = 0; p < planes; ++p) {
        const double* g = gy + p * out_plane;
        const int32_t* arg = argmax + p * out_plane;
        double* dst = gx + static_cast<int64_t>(p) * h * w;
        for (int64_t i = 0; i < out_plane; ++i)
            if (arg[i] >= 0) dst[arg[i]] += g[i];
    }
}

void upsample2_fwd(const double* x, double* y, int planes, int h, int w) {
    for (int p = 0; p < planes; ++p) {
        const double* src = x + static_cast<int64_t>(p) * h * w;
        double* dst = y + static_cast<int64_t>(p) * h * w * 4;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const double v = src[static_cast<int64_t>(i) * w + j];
                double* d = dst + (static_cast<int64_t>(2 * i) * 2 * w + 2 * j);
                d[0] = v;
                d[1] = v;
                d[2 * w] = v;
                d[2 * w + 1] = v;
            }
        }
    }
}

void upsample2_bwd(const double* gy, double* gx, int planes, int h, int w) {
    for (int p = 0; p < planes; ++p) {
        const double* g = gy + static_cast<int64_t>(p) * h * w * 4;
        double* dst = gx + static_cast<int64_t>(p) * h * w;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) {
                const double* s = g + (static_cast<int64_t>(2 * i) * 2 * w + 2 * j);
                dst[static_cast<int64_t>(i) * w + j] += s[0] + s[1] + s[2 * w] + s[2 * w + 1];
            }
        }
    }
}

void leaky_relu_fwd(const double* x, double* y, int64_t n, double slope) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_bwd(const double* x, const double* gy, double* gx, int64_t n, double slope) {
    for (int64_t i = 0; i < n; ++i) gx[i] += x[i] > 0.0 ? gy[i] : slope * gy[i];
}

void sigmoid_fwd(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_bwd(const double* y, const double* gy, double* gx, int64_t n) {
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * y[i] * (1.0 - y[i]);
}

void softmax_ch_fwd(const double* x, double* y, int b, int k, int64_t hw) {
    for (int bi = 0; bi < b; ++bi) {
        const double* xb = x + bi * k * hw;
        double* yb = y + bi * k * hw;
        for (int64_t p = 0; p < hw; ++p) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int ki = 0; ki < k; ++ki) mx = std::max(mx, xb[ki * hw + p]);
            double z = 0.0;
            for (int ki = 0; ki < k; ++ki) {
                const double e = std::exp(xb[ki * hw + p] - mx);
                yb[ki * hw + p] = e;
                z += e;
            }
            const double inv = 1.0 / z;
            for (int ki = 0; ki < k; ++ki) yb[ki * hw + p] *= inv;
        }
    }
}

void softmax_ch_bwd(const double* y, const double* gy, double* gx, int b, int k, int64_t hw) {
    for (int bi = 0; bi < b; ++bi) {
        const double* yb = y + bi * k * hw;
        const double* gb = gy + bi * k * hw;
        double* xb = gx + bi * k * hw;
        for (int64_t p = 0; p < hw; ++p) {
            double dot = 0.0;
            for (int ki = 0; ki < k; ++ki) dot += gb[ki * hw + p] * yb[ki * hw + p];
            for (int ki = 0; ki < k; ++ki) xb[ki * hw + p] += yb[ki * hw + p] * (gb[ki * hw + p] - dot);
        }
    }
}

void recompose_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw) {
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            double* dst = y + (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
                double s = 0.0;
                for (int ki = 0; ki < k; ++ki) {
                    const double mv = m[(static_cast<int64_t>(bi) * k + ki) * hw + p];
                    const double xv = x[((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw + p];
                    s += mv * xv;
                }
                dst[p] = s;
            }
        }
    }
}

void recompose_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k, int c,
                   int64_t hw) {
    if (gm) {
        for (int bi = 0; bi < b; ++bi) {
            for (int ki = 0; ki < k; ++ki) {
                double* dst = gm + (static_cast<int64_t>(bi) * k + ki) * hw;
                for (int64_t p = 0; p < hw; ++p) {
                    double s = 0.0;
                    for (int ci = 0; ci < c; ++ci)
                        s += gy[(static_cast<int64_t>(bi) * c + ci) * hw + p] *
                             x[((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw + p];
                    dst[p] += s;
                }
            }
        }
    }
    if (gx) {
        for (int bi = 0; bi < b; ++bi) {
            for (int ki = 0; ki < k; ++ki) {
                for (int ci = 0; ci < c; ++ci) {
                    double* dst = gx + ((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw;
                    const double* mv = m + (static_cast<int64_t>(bi) * k + ki) * hw;
                    const double* g = gy + (static_cast<int64_t>(bi) * c + ci) * hw;
                    for (int64_t p = 0; p < hw; ++p) dst[p] += mv[p] * g[p];
                }
            }
        }
    }
}

void component_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw) {
    for (int bi = 0; bi < b; ++bi) {
        for (int ki = 0; ki < k; ++ki) {
            const double* mv = m + (static_cast<int64_t>(bi) * k + ki) * hw;
            for (int ci = 0; ci < c; ++ci) {
                const int64_t off = ((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw;
                for (int64_t p = 0; p < hw; ++p) y[off + p] = mv[p] * x[off + p];
            }
        }
    }
}

void component_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k, int c,
                   int64_t hw) {
    if (gm) {
        for (int bi = 0; bi < b; ++bi) {
            for (int ki = 0; ki < k; ++ki) {
                double* dst = gm + (static_cast<int64_t>(bi) * k + ki) * hw;
                for (int64_t p = 0; p < hw; ++p) {
                    double s = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        const int64_t off = ((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw;
                        s += gy[off + p] * x[off + p];
                    }
                    dst[p] += s;
                }
            }
        }
    }
    if (gx) {
        for (int bi = 0; bi < b; ++bi) {
            for (int ki = 0; ki < k; ++ki) {
                const double* mv = m + (static_cast<int64_t>(bi) * k + ki) * hw;
                for (int ci = 0; ci < c; ++ci) {
                    const int64_t off = ((static_cast<int64_t>(bi) * k + ki) * c + ci) * hw;
                    for (int64_t p = 0; p < hw; ++p) gx[off + p] += mv[p] * gy[off + p];
                }
            }
        }
    }
}

void avgscore_fwd(const double* m, double* y, int b, int k, int64_t hw) {
    const double inv = 1.0 / static_cast<double>(hw);
    for (int bi = 0; bi < b; ++bi) {
        for (int ki = 0; ki < k; ++ki) {
            const double* src = m + (static_cast<int64_t>(bi) * k + ki) * hw;
            double s = 0.0;
            for (int64_t p = 0; p < hw; ++p) s += src[p];
            y[static_cast<int64_t>(bi) * k + ki] = s * inv;
        }
    }
}

void avgscore_bwd(const double* gy, double* gm, int b, int k, int64_t hw) {
    const double inv = 1.0 / static_cast<double>(hw);
    for (int bi = 0; bi < b; ++bi) {
        for (int ki = 0; ki < k; ++ki) {
            const double g = gy[static_cast<int64_t>(bi) * k + ki] * inv;
            double* dst = gm + (static_cast<int64_t>(bi) * k + ki) * hw;
            for (int64_t p = 0; p < hw; ++p) dst[p] += g;
        }
    }
}

void global_avgpool_fwd(const double* x, double* y, int b, int c, int64_t hw) { avgscore_fwd(x, y, b, c, hw); }

void global_avgpool_bwd(const double* gy, double* gx, int b, int c, int64_t hw) { avgscore_bwd(gy, gx, b, c, hw); }

void bn_stats(const double* x, int b, int c, int64_t hw, double* mean, double* var) {
    const int64_t n = static_cast<int64_t>(b) * hw;
    for (int ci = 0; ci < c; ++ci) {
        double s = 0.0;
        for (int bi = 0; bi < b; ++bi) {
            const double* src = x + (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) s += src[p];
        }
        const double mu = s / static_cast<double>(n);
        double v = 0.0;
        for (int bi = 0; bi < b; ++bi) {
            const double* src = x + (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
                const double d = src[p] - mu;
                v += d * d;
            }
        }
        mean[ci] = mu;
        var[ci] = v / static_cast<double>(n);
    }
}

void bn_fwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* beta,
            double* y, int b, int c, int64_t hw) {
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            const int64_t off = (static_cast<int64_t>(bi) * c + ci) * hw;
            const double a = gamma[ci] * invstd[ci];
            const double sh = beta[ci] - a * mean[ci];
            for (int64_t p = 0; p < hw; ++p) y[off + p] = a * x[off + p] + sh;
        }
    }
}

void bn_bwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* gy,
            double* gx, double* dgamma, double* dbeta, int b, int c, int64_t hw, bool batch_stats) {
    const double n = static_cast<double>(static_cast<int64_t>(b) * hw);
    for (int ci = 0; ci < c; ++ci) {
        double s1 = 0.0, s2 = 0.0;
        for (int bi = 0; bi < b; ++bi) {
            const int64_t off = (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
                const double g = gy[off + p];
                s1 += g;
                s2 += g * (x[off + p] - mean[ci]) * invstd[ci];
            }
        }
        if (dgamma) dgamma[ci] += s2;
        if (dbeta) dbeta[ci] += s1;
        if (!gx) continue;
        const double a = gamma[ci] * invstd[ci];
        for (int bi = 0; bi < b; ++bi) {
            const int64_t off = (static_cast<int64_t>(bi) * c + ci) * hw;
            for (int64_t p = 0; p < hw; ++p) {
                if (batch_stats) {
                    const double xhat = (x[off + p] - mean[ci]) * invstd[ci];
                    gx[off + p] += a * (gy[off + p] - s1 / n - xhat * s2 / n);
                } else {
                    gx[off + p] += a * gy[off + p];
                }
            }
        }
    }
}

void vec_add(const double* a, const double* b, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void vec_sub(const double* a, const double* b, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] - b[i];
}

void vec_mul(const double* a, const double* b, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

void vec_axpy(double alpha, const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void vec_scale_add(const double* x, double mul, double add, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = mul * x[i] + add;
}

// Fixed-size chunks summed independently, partials combined in index
// order. The OpenMP version distributes the same chunks over threads,
// so both backends produce bit-identical sums.
double reduce_sum(const double* x, int64_t n) {
    constexpr int64_t kChunk = 4096;
    const int64_t nchunks = (n + kChunk - 1) / kChunk;
    double total = 0.0;
    for (int64_t ch = 0; ch < nchunks; ++ch) {
        const int64_t lo = ch * kChunk;
        const int64_t hi = std::min(n, lo + kChunk);
        double s = 0.0;
        for (int64_t i = lo; i < hi; ++i) s += x[i];
        total += s;
    }
    return total;
}

}  // namespace wsss::kernels::serial
