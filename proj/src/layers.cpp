#include "popgrowth/layers.hpp"

#include <cmath>

namespace popgrowth::nn {

void Conv2d::configure(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                       std::int64_t stride_, std::int64_t pad_, std::string name) {
    in_c = in_channels;
    out_c = out_channels;
    k = kernel;
    stride = stride_;
    pad = pad_;
    weight.name = std::move(name);
    weight.value.resize({out_c, in_c, k, k});
    weight.ensure_grad();
}

void Conv2d::init(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_c * k * k));
    for (auto& v : weight.value.data) v = rng.normal(0.0, std_dev);
}

void Conv2d::forward(const Tensor& x, Tensor& y, ExecPolicy policy) const {
    const auto n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const auto oh = out_size(h), ow = out_size(w);
    ensure(y, {n, out_c, oh, ow});
    kernels::conv2d_forward(x.ptr(), n, in_c, h, w, weight.value.ptr(), out_c, k, stride, pad,
                            y.ptr(), oh, ow, policy);
}

void Conv2d::backward(const Tensor& x, const Tensor& gy, Tensor* gx, ExecPolicy policy) {
    const auto n = x.shape[0], h = x.shape[2], w = x.shape[3];
    const auto oh = gy.shape[2], ow = gy.shape[3];
    kernels::conv2d_backward_weight(x.ptr(), gy.ptr(), n, in_c, h, w, out_c, k, stride, pad, oh, ow,
                                    weight.grad.ptr(), policy);
    if (gx) {
        ensure(*gx, {n, in_c, h, w});
        kernels::conv2d_backward_input(gy.ptr(), n, out_c, oh, ow, weight.value.ptr(), in_c, k,
                                       stride, pad, gx->ptr(), h, w, policy);
    }
}

void BatchNorm2d::configure(std::int64_t c, std::string name) {
    channels = c;
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.value.resize({c});
    beta.value.resize({c});
    gamma.ensure_grad();
    beta.ensure_grad();
    running_mean.resize({c});
    running_var.resize({c});
}

void BatchNorm2d::init() {
    std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0);
    beta.value.zero();
    running_mean.zero();
    std::fill(running_var.data.begin(), running_var.data.end(), 1.0);
}

void BatchNorm2d::forward(const Tensor& x, Tensor& y, bool train, Cache& cache,
                          ExecPolicy policy) const {
    const auto n = x.shape[0], c = x.shape[1];
    const auto hw = x.shape[2] * x.shape[3];
    ensure(y, x.shape);
    cache.mean.resize(static_cast<std::size_t>(c));
    cache.invstd.resize(static_cast<std::size_t>(c));
    if (train) {
        std::vector<double> var(static_cast<std::size_t>(c));
        kernels::channel_mean_var(x.ptr(), n, c, hw, cache.mean.data(), var.data(), policy);
        for (std::int64_t i = 0; i < c; ++i)
            cache.invstd[static_cast<std::size_t>(i)] =
                1.0 / std::sqrt(var[static_cast<std::size_t>(i)] + eps);
        ensure(cache.xhat, x.shape);
        kernels::batchnorm_apply(x.ptr(), n, c, hw, cache.mean.data(), cache.invstd.data(),
                                 gamma.value.ptr(), beta.value.ptr(), y.ptr(), cache.xhat.ptr(),
                                 policy);
        const double count = static_cast<double>(n * hw);
        const double unbias = count > 1.0 ? count / (count - 1.0) : 1.0;
        for (std::int64_t i = 0; i < c; ++i) {
            const auto s = static_cast<std::size_t>(i);
            running_mean.data[s] = (1.0 - momentum) * running_mean.data[s] + momentum * cache.mean[s];
            running_var.data[s] = (1.0 - momentum) * running_var.data[s] + momentum * var[s] * unbias;
        }
    } else {
        for (std::int64_t i = 0; i < c; ++i) {
            const auto s = static_cast<std::size_t>(i);
            cache.mean[s] = running_mean.data[s];
            cache.invstd[s] = 1.0 / std::sqrt(running_var.data[s] + eps);
        }
        kernels::batchnorm_apply(x.ptr(), n, c, hw, cache.mean.data(), cache.invstd.data(),
                                 gamma.value.ptr(), beta.value.ptr(), y.ptr(), nullptr, policy);
    }
}

void BatchNorm2d::backward(const Tensor& gy, const Cache& cache, Tensor& gx, ExecPolicy policy) {
    const auto n = gy.shape[0], c = gy.shape[1];
    const auto hw = gy.shape[2] * gy.shape[3];
    ensure(gx, gy.shape);
    kernels::batchnorm_backward(gy.ptr(), cache.xhat.ptr(), n, c, hw, cache.invstd.data(),
                                gamma.value.ptr(), gx.ptr(), gamma.grad.ptr(), beta.grad.ptr(),
                                policy);
}

void Linear::configure(std::int64_t in_, std::int64_t out_, bool with_bias, std::string name) {
    in = in_;
    out = out_;
    has_bias = with_bias;
    weight.name = name + ".weight";
    weight.value.resize({out, in});
    weight.ensure_grad();
    if (has_bias) {
        bias.name = name + ".bias";
        bias.value.resize({out});
        bias.ensure_grad();
    }
}

void Linear::init(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    for (auto& v : weight.value.data) v = rng.normal(0.0, std_dev);
    if (has_bias) bias.value.zero();
}

void Linear::forward(const Tensor& x, Tensor& y, ExecPolicy policy) const {
    const auto n = x.shape[0];
    ensure(y, {n, out});
    kernels::linear_forward(x.ptr(), n, in, weight.value.ptr(), out,
                            has_bias ? bias.value.ptr() : nullptr, y.ptr(), policy);
}

void Linear::backward(const Tensor& x, const Tensor& gy, Tensor* gx, ExecPolicy policy) {
    const auto n = x.shape[0];
    kernels::linear_backward_params(x.ptr(), gy.ptr(), n, in, out, weight.grad.ptr(),
                                    has_bias ? bias.grad.ptr() : nullptr, policy);
    if (gx) {
        ensure(*gx, {n, in});
        kernels::linear_backward_input(gy.ptr(), n, out, weight.value.ptr(), in, gx->ptr(), policy);
    }
}

}  // namespace popgrowth::nn
