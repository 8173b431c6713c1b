#include "popgrowth/kernels.hpp"

#include <algorithm>

namespace popgrowth::nn::kernels {

namespace {

// Valid output range [lo, hi] for one kernel tap: 0 <= o*stride - pad + koff < extent.
inline void tap_bounds(std::int64_t extent, std::int64_t out_size, std::int64_t stride,
                       std::int64_t pad, std::int64_t koff, std::int64_t& lo, std::int64_t& hi) {
    lo = 0;
    if (pad - koff > 0) lo = (pad - koff + stride - 1) / stride;
    const std::int64_t num = extent - 1 + pad - koff;
    hi = num >= 0 ? num / stride : -1;
    hi = std::min(hi, out_size - 1);
}

struct TapBoundsTable {
    std::int64_t lo[16], hi[16];
    TapBoundsTable(std::int64_t extent, std::int64_t out_size, std::int64_t stride,
                   std::int64_t pad, std::int64_t k) {
        for (std::int64_t i = 0; i < k; ++i) tap_bounds(extent, out_size, stride, pad, i, lo[i], hi[i]);
    }
};

}  // namespace

void conv2d_forward(const double* x, std::int64_t n, std::int64_t ci, std::int64_t h, std::int64_t w,
                    const double* weight, std::int64_t co, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, double* y, std::int64_t oh, std::int64_t ow, ExecPolicy policy) {
    const std::int64_t planes = n * co;
    const TapBoundsTable bh(h, oh, stride, pad, k);
    const TapBoundsTable bw(w, ow, stride, pad, k);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const std::int64_t in = plane / co;
        const std::int64_t oc = plane % co;
        double* yp = y + (in * co + oc) * oh * ow;
        std::fill(yp, yp + oh * ow, 0.0);
        for (std::int64_t ic = 0; ic < ci; ++ic) {
            const double* xp = x + (in * ci + ic) * h * w;
            const double* wp = weight + ((oc * ci + ic) * k) * k;
            for (std::int64_t kh = 0; kh < k; ++kh) {
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    const double wv = wp[kh * k + kw];
                    for (std::int64_t r = bh.lo[kh]; r <= bh.hi[kh]; ++r) {
                        const double* xrow = xp + (r * stride - pad + kh) * w;
                        double* yrow = yp + r * ow;
                        if (stride == 1) {
                            const double* xs = xrow + kw - pad;
                            for (std::int64_t q = bw.lo[kw]; q <= bw.hi[kw]; ++q)
                                yrow[q] += wv * xs[q];
                        } else {
                            for (std::int64_t q = bw.lo[kw]; q <= bw.hi[kw]; ++q)
                                yrow[q] += wv * xrow[q * stride - pad + kw];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const double* gy, std::int64_t n, std::int64_t co, std::int64_t oh,
                           std::int64_t ow, const double* weight, std::int64_t ci, std::int64_t k,
                           std::int64_t stride, std::int64_t pad, double* gx, std::int64_t h,
                           std::int64_t w, ExecPolicy policy) {
    const std::int64_t planes = n * ci;
    const TapBoundsTable bh(h, oh, stride, pad, k);
    const TapBoundsTable bw(w, ow, stride, pad, k);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const std::int64_t in = plane / ci;
        const std::int64_t ic = plane % ci;
        double* gxp = gx + (in * ci + ic) * h * w;
        std::fill(gxp, gxp + h * w, 0.0);
        for (std::int64_t oc = 0; oc < co; ++oc) {
            const double* gyp = gy + (in * co + oc) * oh * ow;
            const double* wp = weight + ((oc * ci + ic) * k) * k;
            for (std::int64_t kh = 0; kh < k; ++kh) {
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    const double wv = wp[kh * k + kw];
                    for (std::int64_t r = bh.lo[kh]; r <= bh.hi[kh]; ++r) {
                        double* gxrow = gxp + (r * stride - pad + kh) * w;
                        const double* gyrow = gyp + r * ow;
                        for (std::int64_t q = bw.lo[kw]; q <= bw.hi[kw]; ++q)
                            gxrow[q * stride - pad + kw] += wv * gyrow[q];
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const double* x, const double* gy, std::int64_t n, std::int64_t ci,
                            std::int64_t h, std::int64_t w, std::int64_t co, std::int64_t k,
                            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow,
                            double* gw, ExecPolicy policy) {
    const std::int64_t pairs = co * ci;
    const TapBoundsTable bh(h, oh, stride, pad, k);
    const TapBoundsTable bw(w, ow, stride, pad, k);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t pair = 0; pair < pairs; ++pair) {
        const std::int64_t oc = pair / ci;
        const std::int64_t ic = pair % ci;
        double* gwp = gw + ((oc * ci + ic) * k) * k;
        for (std::int64_t kh = 0; kh < k; ++kh) {
            for (std::int64_t kw = 0; kw < k; ++kw) {
                double acc = 0.0;
                for (std::int64_t in = 0; in < n; ++in) {
                    const double* xp = x + (in * ci + ic) * h * w;
                    const double* gyp = gy + (in * co + oc) * oh * ow;
                    for (std::int64_t r = bh.lo[kh]; r <= bh.hi[kh]; ++r) {
                        const double* xrow = xp + (r * stride - pad + kh) * w;
                        const double* gyrow = gyp + r * ow;
                        for (std::int64_t q = bw.lo[kw]; q <= bw.hi[kw]; ++q)
                            acc += gyrow[q] * xrow[q * stride - pad + kw];
                    }
                }
                gwp[kh * k + kw] += acc;
            }
        }
    }
}

void channel_mean_var(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                      double* mean, double* var, ExecPolicy policy) {
    const double count = static_cast<double>(n * hw);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t ic = 0; ic < c; ++ic) {
        double s = 0.0;
        for (std::int64_t in = 0; in < n; ++in) {
            const double* xp = x + (in * c + ic) * hw;
            for (std::int64_t i = 0; i < hw; ++i) s += xp[i];
        }
        const double m = s / count;
        double v = 0.0;
        for (std::int64_t in = 0; in < n; ++in) {
            const double* xp = x + (in * c + ic) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = xp[i] - m;
                v += d * d;
            }
        }
        mean[ic] = m;
        var[ic] = v / count;
    }
}

void batchnorm_apply(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                     const double* mean, const double* invstd, const double* gamma,
                     const double* beta, double* y, double* xhat, ExecPolicy policy) {
    const std::int64_t planes = n * c;
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const std::int64_t ic = plane % c;
        const double m = mean[ic], is = invstd[ic], g = gamma[ic], b = beta[ic];
        const double* xp = x + plane * hw;
        double* yp = y + plane * hw;
        if (xhat) {
            double* hp = xhat + plane * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                const double xh = (xp[i] - m) * is;
                hp[i] = xh;
                yp[i] = g * xh + b;
            }
        } else {
            for (std::int64_t i = 0; i < hw; ++i)
                yp[i] = g * ((xp[i] - m) * is) + b;
        }
    }
}

void batchnorm_backward(const double* gy, const double* xhat, std::int64_t n, std::int64_t c,
                        std::int64_t hw, const double* invstd, const double* gamma, double* gx,
                        double* dgamma, double* dbeta, ExecPolicy policy) {
    const double count = static_cast<double>(n * hw);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t ic = 0; ic < c; ++ic) {
        double sum_gy = 0.0, sum_gy_xhat = 0.0;
        for (std::int64_t in = 0; in < n; ++in) {
            const std::int64_t base = (in * c + ic) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
                sum_gy += gy[base + i];
                sum_gy_xhat += gy[base + i] * xhat[base + i];
            }
        }
        const double scale = gamma[ic] * invstd[ic] / count;
        for (std::int64_t in = 0; in < n; ++in) {
            const std::int64_t base = (in * c + ic) * hw;
            for (std::int64_t i = 0; i < hw; ++i)
                gx[base + i] = scale * (count * gy[base + i] - sum_gy - xhat[base + i] * sum_gy_xhat);
        }
        dgamma[ic] += sum_gy_xhat;
        dbeta[ic] += sum_gy;
    }
}

void relu_forward(const double* x, double* y, std::int64_t count, ExecPolicy policy) {
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t i = 0; i < count; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* gy, const double* y, double* gx, std::int64_t count,
                   ExecPolicy policy) {
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t i = 0; i < count; ++i) gx[i] = y[i] > 0.0 ? gy[i] : 0.0;
}

void add(const double* a, const double* b, double* y, std::int64_t count, ExecPolicy policy) {
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t i = 0; i < count; ++i) y[i] = a[i] + b[i];
}

void global_avg_pool_forward(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                             double* f, ExecPolicy policy) {
    const std::int64_t planes = n * c;
    const double inv = 1.0 / static_cast<double>(hw);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const double* xp = x + plane * hw;
        double s = 0.0;
        for (std::int64_t i = 0; i < hw; ++i) s += xp[i];
        f[plane] = s * inv;
    }
}

void global_avg_pool_backward(const double* gf, std::int64_t n, std::int64_t c, std::int64_t hw,
                              double* gx, ExecPolicy policy) {
    const std::int64_t planes = n * c;
    const double inv = 1.0 / static_cast<double>(hw);
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t plane = 0; plane < planes; ++plane) {
        const double g = gf[plane] * inv;
        double* gxp = gx + plane * hw;
        for (std::int64_t i = 0; i < hw; ++i) gxp[i] = g;
    }
}

void linear_forward(const double* x, std::int64_t n, std::int64_t in, const double* w,
                    std::int64_t out, const double* bias, double* y, ExecPolicy policy) {
    const std::int64_t cells = n * out;
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t cell = 0; cell < cells; ++cell) {
        const std::int64_t row = cell / out;
        const std::int64_t o = cell % out;
        const double* xp = x + row * in;
        const double* wp = w + o * in;
        double acc = bias ? bias[o] : 0.0;
        for (std::int64_t i = 0; i < in; ++i) acc += wp[i] * xp[i];
        y[cell] = acc;
    }
}

void linear_backward_input(const double* gy, std::int64_t n, std::int64_t out, const double* w,
                           std::int64_t in, double* gx, ExecPolicy policy) {
    const std::int64_t cells = n * in;
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t cell = 0; cell < cells; ++cell) {
        const std::int64_t row = cell / in;
        const std::int64_t i = cell % in;
        double acc = 0.0;
        for (std::int64_t o = 0; o < out; ++o) acc += gy[row * out + o] * w[o * in + i];
        gx[cell] = acc;
    }
}

void linear_backward_params(const double* x, const double* gy, std::int64_t n, std::int64_t in,
                            std::int64_t out, double* gw, double* gb, ExecPolicy policy) {
#pragma omp parallel for if (policy == ExecPolicy::Parallel) schedule(static)
    for (std::int64_t o = 0; o < out; ++o) {
        for (std::int64_t i = 0; i < in; ++i) {
            double acc = 0.0;
            for (std::int64_t row = 0; row < n; ++row) acc += gy[row * out + o] * x[row * in + i];
            gw[o * in + i] += acc;
        }
        if (gb) {
            double acc = 0.0;
            for (std::int64_t row = 0; row < n; ++row) acc += gy[row * out + o];
            gb[o] += acc;
        }
    }
}

}  // namespace popgrowth::nn::kernels
