#include <doctest.h>

#include <cstring>

#include "popgrowth/common.hpp"
#include "popgrowth/kernels.hpp"

using namespace popgrowth;
using namespace popgrowth::nn;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("conv kernels match the serial reference bitwise across shapes") {
    Rng rng(11);
    struct Shape {
        std::int64_t n, ci, h, co, k, stride, pad;
    };
    const Shape shapes[] = {
        {2, 4, 10, 8, 3, 1, 1}, {3, 8, 10, 16, 3, 2, 1}, {1, 5, 8, 7, 1, 1, 0},
        {2, 16, 5, 16, 3, 2, 1}, {4, 3, 9, 6, 3, 1, 1},  {2, 6, 3, 12, 3, 2, 1},
    };
    for (const auto& s : shapes) {
        CAPTURE(s.ci);
        CAPTURE(s.h);
        CAPTURE(s.stride);
        const std::int64_t oh = (s.h + 2 * s.pad - s.k) / s.stride + 1;
        const auto x = randn(static_cast<std::size_t>(s.n * s.ci * s.h * s.h), rng);
        const auto w = randn(static_cast<std::size_t>(s.co * s.ci * s.k * s.k), rng);
        std::vector<double> y_omp(static_cast<std::size_t>(s.n * s.co * oh * oh));
        std::vector<double> y_ref(y_omp.size());
        kernels::conv2d_forward(x.data(), s.n, s.ci, s.h, s.h, w.data(), s.co, s.k, s.stride,
                                s.pad, y_omp.data(), oh, oh, ExecPolicy::Parallel);
        ref::conv2d_forward(x.data(), s.n, s.ci, s.h, s.h, w.data(), s.co, s.k, s.stride, s.pad,
                            y_ref.data(), oh, oh);
        CHECK(bitwise_equal(y_omp, y_ref));

        const auto gy = randn(y_omp.size(), rng);
        std::vector<double> gx_omp(x.size()), gx_ref(x.size());
        kernels::conv2d_backward_input(gy.data(), s.n, s.co, oh, oh, w.data(), s.ci, s.k,
                                       s.stride, s.pad, gx_omp.data(), s.h, s.h,
                                       ExecPolicy::Parallel);
        ref::conv2d_backward_input(gy.data(), s.n, s.co, oh, oh, w.data(), s.ci, s.k, s.stride,
                                   s.pad, gx_ref.data(), s.h, s.h);
        CHECK(bitwise_equal(gx_omp, gx_ref));

        std::vector<double> gw_omp(w.size(), 0.25), gw_ref(w.size(), 0.25);
        kernels::conv2d_backward_weight(x.data(), gy.data(), s.n, s.ci, s.h, s.h, s.co, s.k,
                                        s.stride, s.pad, oh, oh, gw_omp.data(),
                                        ExecPolicy::Parallel);
        ref::conv2d_backward_weight(x.data(), gy.data(), s.n, s.ci, s.h, s.h, s.co, s.k, s.stride,
                                    s.pad, oh, oh, gw_ref.data());
        CHECK(bitwise_equal(gw_omp, gw_ref));
    }
}

TEST_CASE("serial policy and parallel policy give bitwise-identical conv outputs") {
    Rng rng(5);
    const std::int64_t n = 3, ci = 8, h = 10, co = 12, k = 3, stride = 1, pad = 1;
    const auto x = randn(static_cast<std::size_t>(n * ci * h * h), rng);
    const auto w = randn(static_cast<std::size_t>(co * ci * k * k), rng);
    std::vector<double> y_par(static_cast<std::size_t>(n * co * h * h)), y_ser(y_par.size());
    kernels::conv2d_forward(x.data(), n, ci, h, h, w.data(), co, k, stride, pad, y_par.data(), h,
                            h, ExecPolicy::Parallel);
    kernels::conv2d_forward(x.data(), n, ci, h, h, w.data(), co, k, stride, pad, y_ser.data(), h,
                            h, ExecPolicy::Serial);
    CHECK(bitwise_equal(y_par, y_ser));
}

TEST_CASE("batchnorm, linear and pooling kernels match the reference bitwise") {
    Rng rng(23);
    const std::int64_t n = 4, c = 6, hw = 25;
    const auto x = randn(static_cast<std::size_t>(n * c * hw), rng);

    std::vector<double> mean_a(static_cast<std::size_t>(c)), var_a(mean_a.size());
    std::vector<double> mean_b(mean_a.size()), var_b(mean_a.size());
    kernels::channel_mean_var(x.data(), n, c, hw, mean_a.data(), var_a.data(),
                              ExecPolicy::Parallel);
    ref::channel_mean_var(x.data(), n, c, hw, mean_b.data(), var_b.data());
    CHECK(bitwise_equal(mean_a, mean_b));
    CHECK(bitwise_equal(var_a, var_b));

    std::vector<double> invstd(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < invstd.size(); ++i) invstd[i] = 1.0 / std::sqrt(var_a[i] + 1e-5);
    const auto gamma = randn(static_cast<std::size_t>(c), rng);
    const auto beta = randn(static_cast<std::size_t>(c), rng);
    std::vector<double> y_a(x.size()), y_b(x.size()), xh_a(x.size()), xh_b(x.size());
    kernels::batchnorm_apply(x.data(), n, c, hw, mean_a.data(), invstd.data(), gamma.data(),
                             beta.data(), y_a.data(), xh_a.data(), ExecPolicy::Parallel);
    ref::batchnorm_apply(x.data(), n, c, hw, mean_a.data(), invstd.data(), gamma.data(),
                         beta.data(), y_b.data(), xh_b.data());
    CHECK(bitwise_equal(y_a, y_b));
    CHECK(bitwise_equal(xh_a, xh_b));

    const auto gy = randn(x.size(), rng);
    std::vector<double> gx_a(x.size()), gx_b(x.size());
    std::vector<double> dg_a(static_cast<std::size_t>(c), 0.5), db_a(dg_a), dg_b(dg_a), db_b(dg_a);
    kernels::batchnorm_backward(gy.data(), xh_a.data(), n, c, hw, invstd.data(), gamma.data(),
                                gx_a.data(), dg_a.data(), db_a.data(), ExecPolicy::Parallel);
    ref::batchnorm_backward(gy.data(), xh_b.data(), n, c, hw, invstd.data(), gamma.data(),
                            gx_b.data(), dg_b.data(), db_b.data());
    CHECK(bitwise_equal(gx_a, gx_b));
    CHECK(bitwise_equal(dg_a, dg_b));
    CHECK(bitwise_equal(db_a, db_b));

    const std::int64_t in = 17, out = 9;
    const auto lx = randn(static_cast<std::size_t>(n * in), rng);
    const auto lw = randn(static_cast<std::size_t>(out * in), rng);
    const auto lb = randn(static_cast<std::size_t>(out), rng);
    std::vector<double> ly_a(static_cast<std::size_t>(n * out)), ly_b(ly_a.size());
    kernels::linear_forward(lx.data(), n, in, lw.data(), out, lb.data(), ly_a.data(),
                            ExecPolicy::Parallel);
    ref::linear_forward(lx.data(), n, in, lw.data(), out, lb.data(), ly_b.data());
    CHECK(bitwise_equal(ly_a, ly_b));

    std::vector<double> f_a(static_cast<std::size_t>(n * c)), f_b(f_a.size());
    kernels::global_avg_pool_forward(x.data(), n, c, hw, f_a.data(), ExecPolicy::Parallel);
    ref::global_avg_pool_forward(x.data(), n, c, hw, f_b.data());
    CHECK(bitwise_equal(f_a, f_b));
}
