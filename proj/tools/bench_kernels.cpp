// Compares the OpenMP kernels against the serial reference implementations:
// verifies bitwise-identical outputs, then reports throughput for both.

#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include <omp.h>

#include "popgrowth/common.hpp"
#include "popgrowth/kernels.hpp"

using namespace popgrowth;
using namespace popgrowth::nn;

namespace {

void fill(std::vector<double>& v, Rng& rng) {
    for (auto& x : v) x = rng.normal();
}

double time_loop(int iters, const std::function<void()>& fn) {
    fn();  // warm up
    const double t0 = monotonic_seconds();
    for (int i = 0; i < iters; ++i) fn();
    return (monotonic_seconds() - t0) / iters;
}

struct ConvCase {
    const char* name;
    std::int64_t n, ci, h, co, k, stride;
    int iters;
};

}  // namespace

int main() {
    std::printf("threads: %d\n", omp_get_max_threads());
    Rng rng(7);

    const ConvCase cases[] = {
        {"conv 16x(4->16) 10x10 k3 s1", 16, 4, 10, 16, 3, 1, 200},
        {"conv 16x(64->64) 10x10 k3 s1", 16, 64, 10, 64, 3, 1, 20},
        {"conv 16x(128->128) 5x5 k3 s2", 16, 128, 5, 128, 3, 2, 20},
        {"conv 64x(32->32) 10x10 k3 s1", 64, 32, 10, 32, 3, 1, 20},
    };

    for (const auto& c : cases) {
        const std::int64_t pad = 1;
        const std::int64_t oh = (c.h + 2 * pad - c.k) / c.stride + 1;
        std::vector<double> x(static_cast<std::size_t>(c.n * c.ci * c.h * c.h));
        std::vector<double> w(static_cast<std::size_t>(c.co * c.ci * c.k * c.k));
        std::vector<double> y_par(static_cast<std::size_t>(c.n * c.co * oh * oh));
        std::vector<double> y_ser(y_par.size());
        fill(x, rng);
        fill(w, rng);

        const double t_par = time_loop(c.iters, [&] {
            kernels::conv2d_forward(x.data(), c.n, c.ci, c.h, c.h, w.data(), c.co, c.k, c.stride,
                                    pad, y_par.data(), oh, oh, ExecPolicy::Parallel);
        });
        const double t_ser = time_loop(std::max(1, c.iters / 4), [&] {
            ref::conv2d_forward(x.data(), c.n, c.ci, c.h, c.h, w.data(), c.co, c.k, c.stride, pad,
                                y_ser.data(), oh, oh);
        });
        const bool identical =
            std::memcmp(y_par.data(), y_ser.data(), y_par.size() * sizeof(double)) == 0;
        const double macs = static_cast<double>(c.n * c.co * oh * oh * c.ci * c.k * c.k);
        std::printf("%-32s  omp %8.3f ms (%6.2f GFLOP/s)   serial %8.3f ms   speedup %5.2fx   %s\n",
                    c.name, 1e3 * t_par, 2.0 * macs / t_par / 1e9, 1e3 * t_ser, t_ser / t_par,
                    identical ? "bitwise-identical" : "MISMATCH");
    }

    // Batch-norm statistics at a training-typical shape.
    {
        const std::int64_t n = 16, ch = 64, hw = 100;
        std::vector<double> x(static_cast<std::size_t>(n * ch * hw));
        fill(x, rng);
        std::vector<double> mean_p(static_cast<std::size_t>(ch)), var_p(mean_p.size());
        std::vector<double> mean_s(mean_p.size()), var_s(mean_p.size());
        const double t_par = time_loop(500, [&] {
            kernels::channel_mean_var(x.data(), n, ch, hw, mean_p.data(), var_p.data(),
                                      ExecPolicy::Parallel);
        });
        const double t_ser = time_loop(500, [&] {
            ref::channel_mean_var(x.data(), n, ch, hw, mean_s.data(), var_s.data());
        });
        const bool identical =
            std::memcmp(mean_p.data(), mean_s.data(), mean_p.size() * sizeof(double)) == 0 &&
            std::memcmp(var_p.data(), var_s.data(), var_p.size() * sizeof(double)) == 0;
        std::printf("%-32s  omp %8.3f ms                     serial %8.3f ms   speedup %5.2fx   %s\n",
                    "batchnorm stats 16x64x100", 1e3 * t_par, 1e3 * t_ser, t_ser / t_par,
                    identical ? "bitwise-identical" : "MISMATCH");
    }
    return 0;
}
