#include "popgrowth/resnet.hpp"

#include <cmath>

namespace popgrowth::nn {

std::int64_t EncoderModel::scaled_channels(double width, std::int64_t base) {
    const auto c = static_cast<std::int64_t>(std::llround(width * static_cast<double>(base)));
    return c > 1 ? c : 1;
}

EncoderModel::EncoderModel(double width, std::uint64_t init_seed) {
    if (!(width > 0.0)) throw ValidationError("model width must be > 0");
    build(width);
    Rng rng(derive_seed(init_seed, "encoder-init"));
    stem_.init(rng);
    stem_bn_.init();
    for (auto& blk : blocks_) {
        blk.conv1.init(rng);
        blk.bn1.init();
        blk.conv2.init(rng);
        blk.bn2.init();
        if (blk.has_downsample) {
            blk.ds_conv.init(rng);
            blk.ds_bn.init();
        }
    }
}

void EncoderModel::build(double width) {
    width_ = width;
    const std::int64_t bases[4] = {64, 128, 256, 512};
    for (int s = 0; s < 4; ++s) channels_[s] = scaled_channels(width, bases[s]);

    stem_.configure(4, channels_[0], 3, 1, 1, "stem.weight");
    stem_bn_.configure(channels_[0], "stem_bn");

    blocks_.resize(8);
    for (int s = 0; s < 4; ++s) {
        const std::int64_t in_c = s == 0 ? channels_[0] : channels_[s - 1];
        const std::int64_t out_c = channels_[s];
        const std::int64_t stride = s == 0 ? 1 : 2;
        for (int b = 0; b < 2; ++b) {
            auto& blk = blocks_[static_cast<std::size_t>(2 * s + b)];
            const std::string prefix = "s" + std::to_string(s + 1) + "b" + std::to_string(b);
            const std::int64_t bin = b == 0 ? in_c : out_c;
            const std::int64_t bstride = b == 0 ? stride : 1;
            blk.conv1.configure(bin, out_c, 3, bstride, 1, prefix + ".conv1.weight");
            blk.bn1.configure(out_c, prefix + ".bn1");
            blk.conv2.configure(out_c, out_c, 3, 1, 1, prefix + ".conv2.weight");
            blk.bn2.configure(out_c, prefix + ".bn2");
            blk.has_downsample = bstride != 1 || bin != out_c;
            if (blk.has_downsample) {
                blk.ds_conv.configure(bin, out_c, 1, bstride, 0, prefix + ".ds_conv.weight");
                blk.ds_bn.configure(out_c, prefix + ".ds_bn");
            }
        }
    }
}

EncoderModel::Workspace EncoderModel::make_workspace() const {
    Workspace ws;
    ws.blocks.resize(blocks_.size());
    return ws;
}

const Tensor& EncoderModel::block_forward(const BasicBlock& blk, const Tensor& x, BlockWs& ws,
                                          bool train, ExecPolicy policy) const {
    blk.conv1.forward(x, ws.c1, policy);
    blk.bn1.forward(ws.c1, ws.b1, train, ws.bn1c, policy);
    relu(ws.b1, ws.r1, policy);
    blk.conv2.forward(ws.r1, ws.c2, policy);
    blk.bn2.forward(ws.c2, ws.b2, train, ws.bn2c, policy);
    if (blk.has_downsample) {
        blk.ds_conv.forward(x, ws.ds_c, policy);
        blk.ds_bn.forward(ws.ds_c, ws.skip, train, ws.dsbnc, policy);
    } else {
        ensure(ws.skip, x.shape);
        ws.skip.data = x.data;
    }
    ensure(ws.sum, ws.b2.shape);
    kernels::add(ws.b2.ptr(), ws.skip.ptr(), ws.sum.ptr(), ws.sum.numel(), policy);
    relu(ws.sum, ws.out, policy);
    return ws.out;
}

const Tensor& EncoderModel::forward(const Tensor& x, Workspace& ws, bool train,
                                    ExecPolicy policy) const {
    if (x.shape.size() != 4 || x.shape[1] != 4)
        throw ValidationError("encoder input must be [N, 4, H, W]");
    if (x.shape[2] < 8 || x.shape[3] < 8)
        throw ValidationError("encoder input must be at least 8x8 pixels");
    ensure(ws.x, x.shape);
    ws.x.data = x.data;
    stem_.forward(ws.x, ws.stem_c, policy);
    stem_bn_.forward(ws.stem_c, ws.stem_b, train, ws.stem_bnc, policy);
    relu(ws.stem_b, ws.stem_r, policy);
    const Tensor* cur = &ws.stem_r;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
        cur = &block_forward(blocks_[i], *cur, ws.blocks[i], train, policy);
    const auto n = cur->shape[0], c = cur->shape[1];
    const auto hw = cur->shape[2] * cur->shape[3];
    ensure(ws.feat, {n, c});
    kernels::global_avg_pool_forward(cur->ptr(), n, c, hw, ws.feat.ptr(), policy);
    return ws.feat;
}

void EncoderModel::block_backward(BasicBlock& blk, const Tensor& x, BlockWs& ws,
                                  Workspace& scratch, const Tensor& gout, Tensor& gx,
                                  ExecPolicy policy) {
    // out = relu(bn2(conv2(relu(bn1(conv1(x))))) + skip(x))
    // ws.c1 is free by now and holds the gradient at the residual sum, which
    // both the main and (possibly) the downsample path consume.
    Tensor& g_sum = ws.c1;
    relu_grad(gout, ws.out, g_sum, policy);
    blk.bn2.backward(g_sum, ws.bn2c, scratch.gt1, policy);
    blk.conv2.backward(ws.r1, scratch.gt1, &scratch.gt2, policy);
    relu_grad(scratch.gt2, ws.r1, scratch.gt2, policy);
    blk.bn1.backward(scratch.gt2, ws.bn1c, scratch.gt1, policy);
    blk.conv1.backward(x, scratch.gt1, &scratch.g_main, policy);
    if (blk.has_downsample) {
        blk.ds_bn.backward(g_sum, ws.dsbnc, scratch.gt1, policy);
        blk.ds_conv.backward(x, scratch.gt1, &scratch.g_skip, policy);
        ensure(gx, scratch.g_main.shape);
        kernels::add(scratch.g_main.ptr(), scratch.g_skip.ptr(), gx.ptr(), gx.numel(), policy);
    } else {
        ensure(gx, scratch.g_main.shape);
        kernels::add(scratch.g_main.ptr(), g_sum.ptr(), gx.ptr(), gx.numel(), policy);
    }
}

void EncoderModel::backward(Workspace& ws, const Tensor& gfeat, ExecPolicy policy) {
    const Tensor& last = ws.blocks.back().out;
    const auto n = last.shape[0], c = last.shape[1];
    const auto hw = last.shape[2] * last.shape[3];
    ensure(ws.ga, last.shape);
    kernels::global_avg_pool_backward(gfeat.ptr(), n, c, hw, ws.ga.ptr(), policy);

    Tensor* gout = &ws.ga;
    Tensor* gin = &ws.gb;
    for (std::size_t i = blocks_.size(); i-- > 0;) {
        const Tensor& x = i == 0 ? ws.stem_r : ws.blocks[i - 1].out;
        block_backward(blocks_[i], x, ws.blocks[i], ws, *gout, *gin, policy);
        std::swap(gout, gin);
    }
    // gout now holds the gradient at the stem ReLU output.
    relu_grad(*gout, ws.stem_r, *gout, policy);
    stem_bn_.backward(*gout, ws.stem_bnc, *gin, policy);
    stem_.backward(ws.x, *gin, nullptr, policy);
}

void EncoderModel::collect_params(std::vector<Param*>& out) {
    out.push_back(&stem_.weight);
    out.push_back(&stem_bn_.gamma);
    out.push_back(&stem_bn_.beta);
    for (auto& blk : blocks_) {
        out.push_back(&blk.conv1.weight);
        out.push_back(&blk.bn1.gamma);
        out.push_back(&blk.bn1.beta);
        out.push_back(&blk.conv2.weight);
        out.push_back(&blk.bn2.gamma);
        out.push_back(&blk.bn2.beta);
        if (blk.has_downsample) {
            out.push_back(&blk.ds_conv.weight);
            out.push_back(&blk.ds_bn.gamma);
            out.push_back(&blk.ds_bn.beta);
        }
    }
}

void EncoderModel::collect_params(std::vector<const Param*>& out) const {
    std::vector<Param*> tmp;
    const_cast<EncoderModel*>(this)->collect_params(tmp);
    out.insert(out.end(), tmp.begin(), tmp.end());
}

void EncoderModel::collect_state(std::vector<std::pair<std::string, Tensor*>>& out) {
    std::vector<Param*> params;
    collect_params(params);
    for (auto* p : params) out.emplace_back(p->name, &p->value);
    out.emplace_back("stem_bn.running_mean", &stem_bn_.running_mean);
    out.emplace_back("stem_bn.running_var", &stem_bn_.running_var);
    int idx = 0;
    for (auto& blk : blocks_) {
        const std::string prefix = "s" + std::to_string(idx / 2 + 1) + "b" + std::to_string(idx % 2);
        out.emplace_back(prefix + ".bn1.running_mean", &blk.bn1.running_mean);
        out.emplace_back(prefix + ".bn1.running_var", &blk.bn1.running_var);
        out.emplace_back(prefix + ".bn2.running_mean", &blk.bn2.running_mean);
        out.emplace_back(prefix + ".bn2.running_var", &blk.bn2.running_var);
        if (blk.has_downsample) {
            out.emplace_back(prefix + ".ds_bn.running_mean", &blk.ds_bn.running_mean);
            out.emplace_back(prefix + ".ds_bn.running_var", &blk.ds_bn.running_var);
        }
        ++idx;
    }
}

void EncoderModel::zero_grad() {
    std::vector<Param*> params;
    collect_params(params);
    for (auto* p : params) p->grad.zero();
}

std::int64_t EncoderModel::param_count() const {
    std::vector<const Param*> params;
    collect_params(params);
    std::int64_t n = 0;
    for (const auto* p : params) n += p->value.numel();
    return n;
}

std::string EncoderModel::state_hash() const {
    std::vector<std::pair<std::string, Tensor*>> state;
    const_cast<EncoderModel*>(this)->collect_state(state);
    Sha256 h;
    for (const auto& [name, tensor] : state) {
        h.update(name.data(), name.size());
        h.update(tensor->data.data(), tensor->data.size() * sizeof(double));
    }
    return h.hex_digest();
}

}  // namespace popgrowth::nn
