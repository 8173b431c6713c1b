#include "popgrowth/kernels.hpp"

// Plain per-output-element loops, kept as the readable reference semantics.
// Accumulation order per element matches the optimized kernels exactly, so
// tests can assert bitwise equality.

namespace popgrowth::nn::ref {

void conv2d_forward(const double* x, std::int64_t n, std::int64_t ci, std::int64_t h, std::int64_t w,
                    const double* weight, std::int64_t co, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, double* y, std::int64_t oh, std::int64_t ow) {
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t oc = 0; oc < co; ++oc)
            for (std::int64_t r = 0; r < oh; ++r)
                for (std::int64_t q = 0; q < ow; ++q) {
                    double acc = 0.0;
                    for (std::int64_t ic = 0; ic < ci; ++ic)
                        for (std::int64_t kh = 0; kh < k; ++kh)
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                const std::int64_t ih = r * stride - pad + kh;
                                const std::int64_t iw = q * stride - pad + kw;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                                acc += weight[((oc * ci + ic) * k + kh) * k + kw] *
                                       x[((in * ci + ic) * h + ih) * w + iw];
                            }
                    y[((in * co + oc) * oh + r) * ow + q] = acc;
                }
}

void conv2d_backward_input(const double* gy, std::int64_t n, std::int64_t co, std::int64_t oh,
                           std::int64_t ow, const double* weight, std::int64_t ci, std::int64_t k,
                           std::int64_t stride, std::int64_t pad, double* gx, std::int64_t h,
                           std::int64_t w) {
    for (std::int64_t in = 0; in < n; ++in)
        for (std::int64_t ic = 0; ic < ci; ++ic)
            for (std::int64_t ih = 0; ih < h; ++ih)
                for (std::int64_t iw = 0; iw < w; ++iw) {
                    double acc = 0.0;
                    for (std::int64_t oc = 0; oc < co; ++oc)
                        for (std::int64_t kh = 0; kh < k; ++kh)
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                const std::int64_t num_h = ih + pad - kh;
                                const std::int64_t num_w = iw + pad - kw;
                                if (num_h < 0 || num_w < 0) continue;
                                if (num_h % stride != 0 || num_w % stride != 0) continue;
                                const std::int64_t r = num_h / stride;
                                const std::int64_t q = num_w / stride;
                                if (r >= oh || q >= ow) continue;
                                acc += weight[((oc * ci + ic) * k + kh) * k + kw] *
                                       gy[((in * co + oc) * oh + r) * ow + q];
                            }
                    gx[((in * ci + ic) * h + ih) * w + iw] = acc;
                }
}

void conv2d_backward_weight(const double* x, const double* gy, std::int64_t n, std::int64_t ci,
                            std::int64_t h, std::int64_t w, std::int64_t co, std::int64_t k,
                            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow,
                            double* gw) {
    for (std::int64_t oc = 0; oc < co; ++oc)
        for (std::int64_t ic = 0; ic < ci; ++ic)
            for (std::int64_t kh = 0; kh < k; ++kh)
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    double acc = 0.0;
                    for (std::int64_t in = 0; in < n; ++in)
                        for (std::int64_t r = 0; r < oh; ++r)
                            for (std::int64_t q = 0; q < ow; ++q) {
                                const std::int64_t ih = r * stride - pad + kh;
                                const std::int64_t iw = q * stride - pad + kw;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                                acc += gy[((in * co + oc) * oh + r) * ow + q] *
                                       x[((in * ci + ic) * h + ih) * w + iw];
                            }
                    gw[((oc * ci + ic) * k + kh) * k + kw] += acc;
                }
}

void channel_mean_var(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                      double* mean, double* var) {
    const double count = static_cast<double>(n * hw);
    for (std::int64_t ic = 0; ic < c; ++ic) {
        double s = 0.0;
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t i = 0; i < hw; ++i) s += x[(in * c + ic) * hw + i];
        const double m = s / count;
        double v = 0.0;
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = x[(in * c + ic) * hw + i] - m;
                v += d * d;
            }
        mean[ic] = m;
        var[ic] = v / count;
    }
}

void batchnorm_apply(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                     const double* mean, const double* invstd, const double* gamma,
                     const double* beta, double* y, double* xhat) {
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        const std::int64_t ic = plane % c;
        for (std::int64_t i = 0; i < hw; ++i) {
            const double xh = (x[plane * hw + i] - mean[ic]) * invstd[ic];
            if (xhat) xhat[plane * hw + i] = xh;
            y[plane * hw + i] = gamma[ic] * xh + beta[ic];
        }
    }
}

void batchnorm_backward(const double* gy, const double* xhat, std::int64_t n, std::int64_t c,
                        std::int64_t hw, const double* invstd, const double* gamma, double* gx,
                        double* dgamma, double* dbeta) {
    const double count = static_cast<double>(n * hw);
    for (std::int64_t ic = 0; ic < c; ++ic) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t i = 0; i < hw; ++i) {
                const std::int64_t idx = (in * c + ic) * hw + i;
                sum_gy += gy[idx];
                sum_gy_xhat += gy[idx] * xhat[idx];
            }
        const double scale = gamma[ic] * invstd[ic] / count;
        for (std::int64_t in = 0; in < n; ++in)
            for (std::int64_t i = 0; i < hw; ++i) {
                const std::int64_t idx = (in * c + ic) * hw + i;
                gx[idx] = scale * (count * gy[idx] - sum_gy - xhat[idx] * sum_gy_xhat);
            }
        dgamma[ic] += sum_gy_xhat;
        dbeta[ic] += sum_gy;
    }
}

void linear_forward(const double* x, std::int64_t n, std::int64_t in, const double* w,
                    std::int64_t out, const double* bias, double* y) {
    for (std::int64_t row = 0; row < n; ++row)
        for (std::int64_t o = 0; o < out; ++o) {
            double acc = bias ? bias[o] : 0.0;
            for (std::int64_t i = 0; i < in; ++i) acc += w[o * in + i] * x[row * in + i];
            y[row * out + o] = acc;
        }
}

void global_avg_pool_forward(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                             double* f) {
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += x[plane * hw + i];
        f[plane] = s * inv;
    }
}

}  // namespace popgrowth::nn::ref
