#pragma once

#include <vector>

#include "popgrowth/layers.hpp"

namespace popgrowth::nn {

// AdamW: Adam moments on gradients, decoupled weight decay applied directly
// to the parameters.
class AdamW {
public:
    AdamW(std::vector<Param*> params, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    double lr() const { return lr_; }

private:
    std::vector<Param*> params_;
    std::vector<Tensor> m_, v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

}  // namespace popgrowth::nn
