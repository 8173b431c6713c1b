#pragma once

#include <cstdint>

namespace popgrowth::nn {

// All kernels compute each output element as an independent fixed-order
// reduction, so results are bitwise identical for any thread count and for
// the serial reference twins in popgrowth::nn::ref. Keep both sides in sync.
enum class ExecPolicy { Serial, Parallel };

namespace kernels {

// y[n,co,oh,ow] = sum_{ci,kh,kw} w[co,ci,kh,kw] * x[n,ci,oh*stride-pad+kh, ow*stride-pad+kw]
void conv2d_forward(const double* x, std::int64_t n, std::int64_t ci, std::int64_t h, std::int64_t w,
                    const double* weight, std::int64_t co, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, double* y, std::int64_t oh, std::int64_t ow, ExecPolicy policy);

void conv2d_backward_input(const double* gy, std::int64_t n, std::int64_t co, std::int64_t oh,
                           std::int64_t ow, const double* weight, std::int64_t ci, std::int64_t k,
                           std::int64_t stride, std::int64_t pad, double* gx, std::int64_t h,
                           std::int64_t w, ExecPolicy policy);

// Accumulates into gw (callers zero grads at step start).
void conv2d_backward_weight(const double* x, const double* gy, std::int64_t n, std::int64_t ci,
                            std::int64_t h, std::int64_t w, std::int64_t co, std::int64_t k,
                            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow,
                            double* gw, ExecPolicy policy);

// Per-channel mean and biased variance over (N, H, W).
void channel_mean_var(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                      double* mean, double* var, ExecPolicy policy);

// y = gamma * (x - mean) * invstd + beta; also emits xhat when not null.
void batchnorm_apply(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                     const double* mean, const double* invstd, const double* gamma,
                     const double* beta, double* y, double* xhat, ExecPolicy policy);

// Standard batch-norm backward from saved xhat/invstd. Accumulates dgamma/dbeta.
void batchnorm_backward(const double* gy, const double* xhat, std::int64_t n, std::int64_t c,
                        std::int64_t hw, const double* invstd, const double* gamma, double* gx,
                        double* dgamma, double* dbeta, ExecPolicy policy);

void relu_forward(const double* x, double* y, std::int64_t count, ExecPolicy policy);
// gx = y > 0 ? gy : 0 (uses the forward output).
void relu_backward(const double* gy, const double* y, double* gx, std::int64_t count,
                   ExecPolicy policy);

void add(const double* a, const double* b, double* y, std::int64_t count, ExecPolicy policy);

// f[n,c] = mean over (h,w) of x[n,c,:,:]
void global_avg_pool_forward(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                             double* f, ExecPolicy policy);
void global_avg_pool_backward(const double* gf, std::int64_t n, std::int64_t c, std::int64_t hw,
                              double* gx, ExecPolicy policy);

// y[n,o] = sum_i w[o,i] * x[n,i] + (bias ? bias[o] : 0)
void linear_forward(const double* x, std::int64_t n, std::int64_t in, const double* w,
                    std::int64_t out, const double* bias, double* y, ExecPolicy policy);
void linear_backward_input(const double* gy, std::int64_t n, std::int64_t out, const double* w,
                           std::int64_t in, double* gx, ExecPolicy policy);
// Accumulates into gw / gb.
void linear_backward_params(const double* x, const double* gy, std::int64_t n, std::int64_t in,
                            std::int64_t out, double* gw, double* gb, ExecPolicy policy);

}  // namespace kernels

// Naive single-loop-nest reference implementations with identical per-element
// accumulation order; tests assert bitwise equality against kernels::*.
namespace ref {

void conv2d_forward(const double* x, std::int64_t n, std::int64_t ci, std::int64_t h, std::int64_t w,
                    const double* weight, std::int64_t co, std::int64_t k, std::int64_t stride,
                    std::int64_t pad, double* y, std::int64_t oh, std::int64_t ow);
void conv2d_backward_input(const double* gy, std::int64_t n, std::int64_t co, std::int64_t oh,
                           std::int64_t ow, const double* weight, std::int64_t ci, std::int64_t k,
                           std::int64_t stride, std::int64_t pad, double* gx, std::int64_t h,
                           std::int64_t w);
void conv2d_backward_weight(const double* x, const double* gy, std::int64_t n, std::int64_t ci,
                            std::int64_t h, std::int64_t w, std::int64_t co, std::int64_t k,
                            std::int64_t stride, std::int64_t pad, std::int64_t oh, std::int64_t ow,
                            double* gw);
void channel_mean_var(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                      double* mean, double* var);
void batchnorm_apply(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                     const double* mean, const double* invstd, const double* gamma,
                     const double* beta, double* y, double* xhat);
void batchnorm_backward(const double* gy, const double* xhat, std::int64_t n, std::int64_t c,
                        std::int64_t hw, const double* invstd, const double* gamma, double* gx,
                        double* dgamma, double* dbeta);
void linear_forward(const double* x, std::int64_t n, std::int64_t in, const double* w,
                    std::int64_t out, const double* bias, double* y);
void global_avg_pool_forward(const double* x, std::int64_t n, std::int64_t c, std::int64_t hw,
                             double* f);

}  // namespace ref

}  // namespace popgrowth::nn
