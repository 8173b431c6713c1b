#pragma once

#include <string>
#include <vector>

#include "popgrowth/kernels.hpp"
#include "popgrowth/tensor.hpp"

namespace popgrowth::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    void ensure_grad() {
        if (!grad.same_shape(value)) grad.resize(value.shape);
    }
};

// Keeps allocation when the shape already matches; contents are overwritten
// by the kernels, so no zero fill.
inline void ensure(Tensor& t, std::vector<std::int64_t> shape) {
    if (t.shape == shape) return;
    t.shape = std::move(shape);
    t.data.resize(static_cast<std::size_t>(Tensor::numel_of(t.shape)));
}

struct Conv2d {
    std::int64_t in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1;
    Param weight;  // [out_c, in_c, k, k], no bias (batch norm follows)

    void configure(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                   std::int64_t stride_, std::int64_t pad_, std::string name);
    void init(Rng& rng);  // fan-in scaled normal
    std::int64_t out_size(std::int64_t in_size) const { return (in_size + 2 * pad - k) / stride + 1; }

    void forward(const Tensor& x, Tensor& y, ExecPolicy policy) const;
    // Accumulates weight.grad; writes input gradient when gx != nullptr.
    void backward(const Tensor& x, const Tensor& gy, Tensor* gx, ExecPolicy policy);
};

struct BatchNorm2d {
    std::int64_t channels = 0;
    double eps = 1e-5;
    double momentum = 0.1;
    Param gamma, beta;
    // Running statistics are model state (checkpointed), updated only by
    // train-mode forward; eval forward never writes.
    mutable Tensor running_mean, running_var;

    struct Cache {
        Tensor xhat;
        std::vector<double> mean, invstd;
    };

    void configure(std::int64_t c, std::string name);
    void init();

    void forward(const Tensor& x, Tensor& y, bool train, Cache& cache, ExecPolicy policy) const;
    void backward(const Tensor& gy, const Cache& cache, Tensor& gx, ExecPolicy policy);
};

struct Linear {
    std::int64_t in = 0, out = 0;
    bool has_bias = true;
    Param weight;  // [out, in]
    Param bias;    // [out]

    void configure(std::int64_t in_, std::int64_t out_, bool with_bias, std::string name);
    void init(Rng& rng);

    void forward(const Tensor& x, Tensor& y, ExecPolicy policy) const;
    void backward(const Tensor& x, const Tensor& gy, Tensor* gx, ExecPolicy policy);
};

inline void relu(const Tensor& x, Tensor& y, ExecPolicy policy) {
    ensure(y, x.shape);
    kernels::relu_forward(x.ptr(), y.ptr(), x.numel(), policy);
}

inline void relu_grad(const Tensor& gy, const Tensor& y, Tensor& gx, ExecPolicy policy) {
    ensure(gx, gy.shape);
    kernels::relu_backward(gy.ptr(), y.ptr(), gx.ptr(), gy.numel(), policy);
}

}  // namespace popgrowth::nn
