#pragma once

#include <cstdint>

namespace wsss::kernels {

// Two implementations of every kernel: a plain serial reference and an
// OpenMP version. The top-level functions dispatch on a process-wide
// backend switch (default OpenMP when compiled in, overridable via the
// WSSS_BACKEND environment variable or set_backend). Both backends are
// deterministic for a fixed build: parallel loops write disjoint outputs
// and reductions combine fixed-size chunk partials in index order.
enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);
bool openmp_compiled();
int thread_count();

// Backward kernels accumulate into their gradient outputs; callers zero
// the buffers on first use. Matrix arguments are row-major.

#define WSSS_KERNEL_DECLS                                                                                              \
    /* C[i,j] (+)= sum_p A[i,p] B[p,j];  A: m x k, B: k x n, C: m x n */                                               \
    void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);                   \
    /* C[i,j] (+)= sum_p A[p,i] B[p,j];  A: k x m */                                                                   \
    void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);                   \
    /* C[i,j] (+)= sum_p A[i,p] B[j,p];  B: n x k */                                                                   \
    void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);                   \
    /* col: (c*k*k) x (ho*wo) patch matrix for one image */                                                            \
    void im2col(const double* img, int c, int h, int w, int ksize, int stride, int pad, double* col);                  \
    /* scatter-add of a patch matrix back onto the image */                                                            \
    void col2im(const double* col, int c, int h, int w, int ksize, int stride, int pad, double* img);                  \
    void add_bias_rows(double* out, const double* bias, int rows, int cols);                                           \
    void add_bias_cols(double* out, const double* bias, int rows, int cols);                                           \
    void row_sums(const double* a, double* out, int rows, int cols);                                                   \
    void col_sums(const double* a, double* out, int rows, int cols);                                                   \
    void maxpool_fwd(const double* x, double* y, int32_t* argmax, int planes, int h, int w, int ksize, int stride,     \
                     int pad);                                                                                         \
    void maxpool_bwd(const double* gy, const int32_t* argmax, double* gx, int planes, int h, int w, int ksize,         \
                     int stride, int pad);                                                                             \
    void upsample2_fwd(const double* x, double* y, int planes, int h, int w);                                          \
    void upsample2_bwd(const double* gy, double* gx, int planes, int h, int w);                                        \
    void leaky_relu_fwd(const double* x, double* y, int64_t n, double slope);                                          \
    void leaky_relu_bwd(const double* x, const double* gy, double* gx, int64_t n, double slope);                       \
    void sigmoid_fwd(const double* x, double* y, int64_t n);                                                           \
    void sigmoid_bwd(const double* y, const double* gy, double* gx, int64_t n);                                        \
    void softmax_ch_fwd(const double* x, double* y, int b, int k, int64_t hw);                                         \
    void softmax_ch_bwd(const double* y, const double* gy, double* gx, int b, int k, int64_t hw);                      \
    void recompose_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw);                  \
    void recompose_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k,       \
                       int c, int64_t hw);  /* gm/gx may be null */                                                    \
    void component_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw);                  \
    void component_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k,       \
                       int c, int64_t hw);                                                                             \
    void avgscore_fwd(const double* m, double* y, int b, int k, int64_t hw);                                           \
    void avgscore_bwd(const double* gy, double* gm, int b, int k, int64_t hw);                                         \
    void global_avgpool_fwd(const double* x, double* y, int b, int c, int64_t hw);                                     \
    void global_avgpool_bwd(const double* gy, double* gx, int b, int c, int64_t hw);                                   \
    void bn_stats(const double* x, int b, int c, int64_t hw, double* mean, double* var);                               \
    void bn_fwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* beta,    \
                double* y, int b, int c, int64_t hw);                                                                  \
    void bn_bwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* gy,      \
                double* gx, double* dgamma, double* dbeta, int b, int c, int64_t hw, bool batch_stats);                \
    void vec_add(const double* a, const double* b, double* y, int64_t n);                                              \
    void vec_sub(const double* a, const double* b, double* y, int64_t n);                                              \
    void vec_mul(const double* a, const double* b, double* y, int64_t n);                                              \
    void vec_axpy(double alpha, const double* x, double* y, int64_t n);                                                \
    void vec_scale_add(const double* x, double mul, double add, double* y, int64_t n);                                 \
    double reduce_sum(const double* x, int64_t n);

namespace serial {
WSSS_KERNEL_DECLS
}
namespace omp {
WSSS_KERNEL_DECLS
}

WSSS_KERNEL_DECLS

#undef WSSS_KERNEL_DECLS

inline int conv_out_size(int in, int ksize, int stride, int pad) { return (in + 2 * pad - ksize) / stride + 1; }

}  // namespace wsss::kernels
