#include "popgrowth/optimizer.hpp"

#include <cmath>

namespace popgrowth::nn {

AdamW::AdamW(std::vector<Param*> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1),
      beta2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto* p : params_) {
        p->ensure_grad();
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        auto& value = params_[pi]->value.data;
        const auto& grad = params_[pi]->grad.data;
        auto& m = m_[pi].data;
        auto& v = v_[pi].data;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            value[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * value[i]);
        }
    }
}

}  // namespace popgrowth::nn
