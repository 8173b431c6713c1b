#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "popgrowth/layers.hpp"

namespace popgrowth::nn {

// ResNet-18 style feature extractor for small 4-band patches: 3x3 stride-1
// stem (no max pool, so 10x10 inputs keep their spatial signal), four stages
// of two basic blocks, global average pooling to a 512*width feature vector.
class EncoderModel {
public:
    struct BasicBlock {
        Conv2d conv1, conv2;
        BatchNorm2d bn1, bn2;
        bool has_downsample = false;
        Conv2d ds_conv;
        BatchNorm2d ds_bn;
    };

    struct BlockWs {
        Tensor c1, b1, r1, c2, b2, skip, sum, out;
        BatchNorm2d::Cache bn1c, bn2c, dsbnc;
        Tensor ds_c;
    };

    // Per-forward activation storage; one workspace per concurrent caller.
    struct Workspace {
        Tensor x;  // input copy for stem backward
        Tensor stem_c, stem_b, stem_r;
        BatchNorm2d::Cache stem_bnc;
        std::vector<BlockWs> blocks;
        Tensor feat;
        // backward scratch
        Tensor ga, gb, gt1, gt2, g_main, g_skip;
    };

    EncoderModel() = default;
    EncoderModel(double width, std::uint64_t init_seed);

    double width() const { return width_; }
    std::int64_t feature_dim() const { return channels_[3]; }
    static std::int64_t scaled_channels(double width, std::int64_t base);

    Workspace make_workspace() const;

    // Returns features [N, feature_dim]. Eval-mode forward is const and
    // thread-safe given distinct workspaces; train mode updates batch-norm
    // running statistics.
    const Tensor& forward(const Tensor& x, Workspace& ws, bool train, ExecPolicy policy) const;

    // Accumulates parameter gradients from d(loss)/d(features).
    void backward(Workspace& ws, const Tensor& gfeat, ExecPolicy policy);

    void collect_params(std::vector<Param*>& out);
    void collect_params(std::vector<const Param*>& out) const;
    // Params plus batch-norm running statistics; everything a checkpoint needs.
    void collect_state(std::vector<std::pair<std::string, Tensor*>>& out);
    void zero_grad();

    std::int64_t param_count() const;
    // SHA-256 over all state tensors; used by frozen-encoder equality checks.
    std::string state_hash() const;

private:
    void build(double width);
    const Tensor& block_forward(const BasicBlock& blk, const Tensor& x, BlockWs& ws, bool train,
                                ExecPolicy policy) const;
    void block_backward(BasicBlock& blk, const Tensor& x, BlockWs& ws, Workspace& scratch,
                        const Tensor& gout, Tensor& gx, ExecPolicy policy);

    double width_ = 1.0;
    std::int64_t channels_[4] = {64, 128, 256, 512};
    Conv2d stem_;
    BatchNorm2d stem_bn_;
    std::vector<BasicBlock> blocks_;  // 8 blocks, 2 per stage
};

}  // namespace popgrowth::nn
