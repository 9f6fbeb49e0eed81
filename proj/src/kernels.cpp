#include "wsss/kernels.hpp"

#include <cstdlib>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wsss::kernels {

namespace {

Backend initial_backend() {
#ifndef _OPENMP
    return Backend::Serial;
#else
    const char* env = std::getenv("WSSS_BACKEND");
    if (env && std::strcmp(env, "serial") == 0) return Backend::Serial;
    return Backend::OpenMP;
#endif
}

Backend g_backend = initial_backend();

}  // namespace

Backend backend() { return g_backend; }

void set_backend(Backend b) { g_backend = b; }

bool openmp_compiled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int thread_count() {
#ifdef _OPENMP
    return g_backend == Backend::OpenMP ? omp_get_max_threads() : 1;
#else
    return 1;
#endif
}

#define WSSS_DISPATCH(fn, ...) \
    return g_backend == Backend::OpenMP ? omp::fn(__VA_ARGS__) : serial::fn(__VA_ARGS__)

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    WSSS_DISPATCH(gemm_nn, a, b, c, m, k, n, accumulate);
}
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    WSSS_DISPATCH(gemm_tn, a, b, c, m, k, n, accumulate);
}
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate) {
    WSSS_DISPATCH(gemm_nt, a, b, c, m, k, n, accumulate);
}
void im2col(const double* img, int c, int h, int w, int ksize, int stride, int pad, double* col) {
    WSSS_DISPATCH(im2col, img, c, h, w, ksize, stride, pad, col);
}
void col2im(const double* col, int c, int h, int w, int ksize, int stride, int pad, double* img) {
    WSSS_DISPATCH(col2im, col, c, h, w, ksize, stride, pad, img);
}
void add_bias_rows(double* out, const double* bias, int rows, int cols) {
    WSSS_DISPATCH(add_bias_rows, out, bias, rows, cols);
}
void add_bias_cols(double* out, const double* bias, int rows, int cols) {
    WSSS_DISPATCH(add_bias_cols, out, bias, rows, cols);
}
void row_sums(const double* a, double* out, int rows, int cols) { WSSS_DISPATCH(row_sums, a, out, rows, cols); }
void col_sums(const double* a, double* out, int rows, int cols) { WSSS_DISPATCH(col_sums, a, out, rows, cols); }
void maxpool_fwd(const double* x, double* y, int32_t* argmax, int planes, int h, int w, int ksize, int stride,
                 int pad) {
    WSSS_DISPATCH(maxpool_fwd, x, y, argmax, planes, h, w, ksize, stride, pad);
}
void maxpool_bwd(const double* gy, const int32_t* argmax, double* gx, int planes, int h, int w, int ksize, int stride,
                 int pad) {
    WSSS_DISPATCH(maxpool_bwd, gy, argmax, gx, planes, h, w, ksize, stride, pad);
}
void upsample2_fwd(const double* x, double* y, int planes, int h, int w) {
    WSSS_DISPATCH(upsample2_fwd, x, y, planes, h, w);
}
void upsample2_bwd(const double* gy, double* gx, int planes, int h, int w) {
    WSSS_DISPATCH(upsample2_bwd, gy, gx, planes, h, w);
}
void leaky_relu_fwd(const double* x, double* y, int64_t n, double slope) {
    WSSS_DISPATCH(leaky_relu_fwd, x, y, n, slope);
}
void leaky_relu_bwd(const double* x, const double* gy, double* gx, int64_t n, double slope) {
    WSSS_DISPATCH(leaky_relu_bwd, x, gy, gx, n, slope);
}
void sigmoid_fwd(const double* x, double* y, int64_t n) { WSSS_DISPATCH(sigmoid_fwd, x, y, n); }
void sigmoid_bwd(const double* y, const double* gy, double* gx, int64_t n) { WSSS_DISPATCH(sigmoid_bwd, y, gy, gx, n); }
void softmax_ch_fwd(const double* x, double* y, int b, int k, int64_t hw) {
    WSSS_DISPATCH(softmax_ch_fwd, x, y, b, k, hw);
}
void softmax_ch_bwd(const double* y, const double* gy, double* gx, int b, int k, int64_t hw) {
    WSSS_DISPATCH(softmax_ch_bwd, y, gy, gx, b, k, hw);
}
void recompose_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw) {
    WSSS_DISPATCH(recompose_fwd, m, x, y, b, k, c, hw);
}
void recompose_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k, int c,
                   int64_t hw) {
    WSSS_DISPATCH(recompose_bwd, m, x, gy, gm, gx, b, k, c, hw);
}
void component_fwd(const double* m, const double* x, double* y, int b, int k, int c, int64_t hw) {
    WSSS_DISPATCH(component_fwd, m, x, y, b, k, c, hw);
}
void component_bwd(const double* m, const double* x, const double* gy, double* gm, double* gx, int b, int k, int c,
                   int64_t hw) {
    WSSS_DISPATCH(component_bwd, m, x, gy, gm, gx, b, k, c, hw);
}
void avgscore_fwd(const double* m, double* y, int b, int k, int64_t hw) { WSSS_DISPATCH(avgscore_fwd, m, y, b, k, hw); }
void avgscore_bwd(const double* gy, double* gm, int b, int k, int64_t hw) {
    WSSS_DISPATCH(avgscore_bwd, gy, gm, b, k, hw);
}
void global_avgpool_fwd(const double* x, double* y, int b, int c, int64_t hw) {
    WSSS_DISPATCH(global_avgpool_fwd, x, y, b, c, hw);
}
void global_avgpool_bwd(const double* gy, double* gx, int b, int c, int64_t hw) {
    WSSS_DISPATCH(global_avgpool_bwd, gy, gx, b, c, hw);
}
void bn_stats(const double* x, int b, int c, int64_t hw, double* mean, double* var) {
    WSSS_DISPATCH(bn_stats, x, b, c, hw, mean, var);
}
void bn_fwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* beta,
            double* y, int b, int c, int64_t hw) {
    WSSS_DISPATCH(bn_fwd, x, mean, invstd, gamma, beta, y, b, c, hw);
}
void bn_bwd(const double* x, const double* mean, const double* invstd, const double* gamma, const double* gy,
            double* gx, double* dgamma, double* dbeta, int b, int c, int64_t hw, bool batch_stats) {
    WSSS_DISPATCH(bn_bwd, x, mean, invstd, gamma, gy, gx, dgamma, dbeta, b, c, hw, batch_stats);
}
void vec_add(const double* a, const double* b, double* y, int64_t n) { WSSS_DISPATCH(vec_add, a, b, y, n); }
void vec_sub(const double* a, const double* b, double* y, int64_t n) { WSSS_DISPATCH(vec_sub, a, b, y, n); }
void vec_mul(const double* a, const double* b, double* y, int64_t n) { WSSS_DISPATCH(vec_mul, a, b, y, n); }
void vec_axpy(double alpha, const double* x, double* y, int64_t n) { WSSS_DISPATCH(vec_axpy, alpha, x, y, n); }
void vec_scale_add(const double* x, double mul, double add, double* y, int64_t n) {
    WSSS_DISPATCH(vec_scale_add, x, mul, add, y, n);
}
double reduce_sum(const double* x, int64_t n) { WSSS_DISPATCH(reduce_sum, x, n); }

#undef WSSS_DISPATCH

}  // namespace wsss::kernels
