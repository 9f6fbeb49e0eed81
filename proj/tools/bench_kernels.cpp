// Compares the serial reference kernels against the OpenMP versions on
// training-shaped workloads: wall time, effective GFLOP/s and the largest
// elementwise deviation between the two backends.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "wsss/kernels.hpp"
#include "wsss/rng.hpp"
#include "wsss/tensor.hpp"

using namespace wsss;
namespace kn = wsss::kernels;

namespace {

double time_ms(const std::function<void()>& fn, int iters) {
    fn();  // warm up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / iters;
}

double max_diff(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

void report(const char* name, double serial_ms, double omp_ms, double gflop, double diff) {
    std::printf("%-28s serial %8.2f ms (%5.2f GF/s)   openmp %8.2f ms (%5.2f GF/s)   speedup %4.2fx   maxdiff %.2e\n",
                name, serial_ms, gflop / serial_ms, omp_ms, gflop / omp_ms, serial_ms / omp_ms, diff);
}

}  // namespace

int main() {
    std::printf("kernel benchmark, %d OpenMP threads compiled=%d\n", kn::thread_count(), kn::openmp_compiled());
    Rng rng(1234);

    {
        // conv-shaped gemm: 64 filters over 72-dim patches at 64x64
        const int m = 64, k = 72 * 9, n = 64 * 64;
        Tensor a = rand_uniform(rng, {m, k}, -1, 1), b = rand_uniform(rng, {k, n}, -1, 1);
        Tensor cs({m, n}), co({m, n});
        const double gflop = 2.0 * m * k * n / 1e6;  // per-ms scale
        double ts = time_ms([&] { kn::serial::gemm_nn(a.data(), b.data(), cs.data(), m, k, n, false); }, 5);
        double to = time_ms([&] { kn::omp::gemm_nn(a.data(), b.data(), co.data(), m, k, n, false); }, 5);
        report("gemm_nn 64x648x4096", ts, to, gflop, max_diff(cs, co));
    }
    {
        const int c = 64, h = 64, w = 64;
        Tensor img = rand_uniform(rng, {c, h, w}, -1, 1);
        Tensor cols({c * 9, h * w}), colo({c * 9, h * w});
        double ts = time_ms([&] { kn::serial::im2col(img.data(), c, h, w, 3, 1, 1, cols.data()); }, 10);
        double to = time_ms([&] { kn::omp::im2col(img.data(), c, h, w, 3, 1, 1, colo.data()); }, 10);
        report("im2col 64ch 64x64", ts, to, img.size() * 9 * 2.0 / 1e6, max_diff(cols, colo));
    }
    {
        const int b = 4, k = 2, c = 3, h = 64, w = 64;
        const int64_t hw = static_cast<int64_t>(h) * w;
        Tensor m = rand_uniform(rng, {b, k, h, w}, 0, 1);
        Tensor x = rand_uniform(rng, {b, k, c, h, w}, -1, 1);
        Tensor ys({b, c, h, w}), yo({b, c, h, w});
        double ts = time_ms([&] { kn::serial::recompose_fwd(m.data(), x.data(), ys.data(), b, k, c, hw); }, 50);
        double to = time_ms([&] { kn::omp::recompose_fwd(m.data(), x.data(), yo.data(), b, k, c, hw); }, 50);
        report("recompose 4x2x3x64x64", ts, to, 2.0 * b * k * c * hw / 1e6, max_diff(ys, yo));
    }
    {
        const int b = 4, k = 8, h = 64, w = 64;
        const int64_t hw = static_cast<int64_t>(h) * w;
        Tensor logits = rand_uniform(rng, {b, k, h, w}, -2, 2);
        Tensor ys({b, k, h, w}), yo({b, k, h, w});
        double ts = time_ms([&] { kn::serial::softmax_ch_fwd(logits.data(), ys.data(), b, k, hw); }, 20);
        double to = time_ms([&] { kn::omp::softmax_ch_fwd(logits.data(), yo.data(), b, k, hw); }, 20);
        report("softmax 4x8x64x64", ts, to, 4.0 * b * k * hw / 1e6, max_diff(ys, yo));
    }
    {
        Tensor x = rand_uniform(rng, {8 * 1024 * 1024}, -1, 1);
        double vs = 0, vo = 0;
        double ts = time_ms([&] { vs = kn::serial::reduce_sum(x.data(), x.size()); }, 10);
        double to = time_ms([&] { vo = kn::omp::reduce_sum(x.data(), x.size()); }, 10);
        report("reduce_sum 8M", ts, to, x.size() / 1e6, std::abs(vs - vo));
    }
    return 0;
}
