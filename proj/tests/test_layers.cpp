#include <doctest.h>

#include "popgrowth/optimizer.hpp"
#include "popgrowth/resnet.hpp"
#include "test_util.hpp"

using namespace popgrowth;
using namespace popgrowth::nn;
using test::central_difference;
using test::rel_err;

namespace {

void fill_randn(Tensor& t, Rng& rng, double scale = 1.0) {
    for (auto& v : t.data) v = scale * rng.normal();
}

// L = sum_i u_i * out_i for a fixed random projection u.
double projected(const Tensor& out, const std::vector<double>& u) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) s += u[i] * out.data[i];
    return s;
}

}  // namespace

TEST_CASE("conv2d analytic gradients match finite differences") {
    Rng rng(3);
    Conv2d conv;
    conv.configure(3, 5, 3, 2, 1, "t.conv");
    conv.init(rng);
    Tensor x({2, 3, 7, 7});
    fill_randn(x, rng);
    Tensor y;
    conv.forward(x, y, ExecPolicy::Parallel);
    std::vector<double> u(y.data.size());
    for (auto& v : u) v = rng.normal();

    auto loss = [&] {
        Tensor out;
        conv.forward(x, out, ExecPolicy::Parallel);
        return projected(out, u);
    };

    Tensor gy(y.shape);
    gy.data = u;
    conv.weight.grad.zero();
    Tensor gx;
    conv.backward(x, gy, &gx, ExecPolicy::Parallel);

    Rng pick(91);
    for (int trial = 0; trial < 24; ++trial) {
        const auto i = static_cast<std::size_t>(pick.uniform_int(conv.weight.value.data.size()));
        const double fd = central_difference(loss, &conv.weight.value.data[i], 1e-6);
        CHECK(rel_err(fd, conv.weight.grad.data[i]) < 1e-7);
    }
    for (int trial = 0; trial < 24; ++trial) {
        const auto i = static_cast<std::size_t>(pick.uniform_int(x.data.size()));
        const double fd = central_difference(loss, &x.data[i], 1e-6);
        CHECK(rel_err(fd, gx.data[i]) < 1e-7);
    }
}

TEST_CASE("batchnorm train-mode gradients match finite differences") {
    Rng rng(17);
    BatchNorm2d bn;
    bn.configure(4, "t.bn");
    bn.init();
    fill_randn(bn.gamma.value, rng, 0.5);
    for (auto& g : bn.gamma.value.data) g += 1.0;
    fill_randn(bn.beta.value, rng, 0.2);

    Tensor x({3, 4, 5, 5});
    fill_randn(x, rng);
    std::vector<double> u(x.data.size());
    for (auto& v : u) v = rng.normal();

    // Keep running stats fixed: copy them back after every probe forward.
    const Tensor rm = bn.running_mean, rv = bn.running_var;
    auto loss = [&] {
        BatchNorm2d::Cache cache;
        Tensor out;
        bn.forward(x, out, /*train=*/true, cache, ExecPolicy::Parallel);
        bn.running_mean = rm;
        bn.running_var = rv;
        return projected(out, u);
    };

    BatchNorm2d::Cache cache;
    Tensor y;
    bn.forward(x, y, true, cache, ExecPolicy::Parallel);
    bn.running_mean = rm;
    bn.running_var = rv;
    Tensor gy(y.shape);
    gy.data = u;
    bn.gamma.grad.zero();
    bn.beta.grad.zero();
    Tensor gx;
    bn.backward(gy, cache, gx, ExecPolicy::Parallel);

    for (std::size_t i = 0; i < bn.gamma.value.data.size(); ++i) {
        CHECK(rel_err(central_difference(loss, &bn.gamma.value.data[i], 1e-6),
                      bn.gamma.grad.data[i]) < 1e-7);
        CHECK(rel_err(central_difference(loss, &bn.beta.value.data[i], 1e-6),
                      bn.beta.grad.data[i]) < 1e-7);
    }
    Rng pick(13);
    for (int trial = 0; trial < 24; ++trial) {
        const auto i = static_cast<std::size_t>(pick.uniform_int(x.data.size()));
        const double fd = central_difference(loss, &x.data[i], 1e-6);
        CHECK(rel_err(fd, gx.data[i]) < 1e-6);
    }
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(29);
    Linear lin;
    lin.configure(6, 3, true, "t.lin");
    lin.init(rng);
    Tensor x({4, 6});
    fill_randn(x, rng);
    std::vector<double> u(12);
    for (auto& v : u) v = rng.normal();

    auto loss = [&] {
        Tensor out;
        lin.forward(x, out, ExecPolicy::Parallel);
        return projected(out, u);
    };

    Tensor y;
    lin.forward(x, y, ExecPolicy::Parallel);
    Tensor gy(y.shape);
    gy.data = u;
    lin.weight.grad.zero();
    lin.bias.grad.zero();
    Tensor gx;
    lin.backward(x, gy, &gx, ExecPolicy::Parallel);

    for (std::size_t i = 0; i < lin.weight.value.data.size(); ++i)
        CHECK(rel_err(central_difference(loss, &lin.weight.value.data[i], 1e-6),
                      lin.weight.grad.data[i]) < 1e-8);
    for (std::size_t i = 0; i < lin.bias.value.data.size(); ++i)
        CHECK(rel_err(central_difference(loss, &lin.bias.value.data[i], 1e-6),
                      lin.bias.grad.data[i]) < 1e-8);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(rel_err(central_difference(loss, &x.data[i], 1e-6), gx.data[i]) < 1e-8);
}

TEST_CASE("full encoder backward matches finite differences in train mode") {
    EncoderModel model(0.125, 99);
    Rng rng(41);
    Tensor x({2, 4, 8, 8});
    for (auto& v : x.data) v = rng.uniform();

    std::vector<double> u(static_cast<std::size_t>(2 * model.feature_dim()));
    for (auto& v : u) v = rng.normal();

    // Snapshot running stats so each probe forward sees identical state.
    std::vector<std::pair<std::string, Tensor*>> state;
    model.collect_state(state);
    std::vector<Tensor> saved;
    for (auto& [name, t] : state) saved.push_back(*t);
    auto restore = [&] {
        for (std::size_t i = 0; i < state.size(); ++i) state[i].second->data = saved[i].data;
    };

    auto ws = model.make_workspace();
    auto loss = [&] {
        const Tensor& feat = model.forward(x, ws, /*train=*/true, ExecPolicy::Parallel);
        const double value = projected(feat, u);
        restore();
        return value;
    };

    const Tensor& feat = model.forward(x, ws, true, ExecPolicy::Parallel);
    (void)feat;
    model.zero_grad();
    Tensor gfeat({2, model.feature_dim()});
    gfeat.data = u;
    model.backward(ws, gfeat, ExecPolicy::Parallel);
    restore();

    std::vector<Param*> params;
    model.collect_params(params);
    Rng pick(7);
    int checked = 0;
    for (auto* p : params) {
        const int probes = p->value.numel() <= 8 ? static_cast<int>(p->value.numel()) : 4;
        for (int trial = 0; trial < probes; ++trial) {
            const auto i = static_cast<std::size_t>(pick.uniform_int(p->value.data.size()));
            const double fd = central_difference(loss, &p->value.data[i], 1e-6);
            CAPTURE(p->name);
            CHECK(rel_err(fd, p->grad.data[i]) < 1e-5);
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("adamw shrinks weights with decoupled decay and zero gradients") {
    Param p;
    p.name = "w";
    p.value.resize({4});
    std::fill(p.value.data.begin(), p.value.data.end(), 2.0);
    p.ensure_grad();
    AdamW opt({&p}, 0.1, 0.5);
    opt.step();
    for (const double v : p.value.data) CHECK(v == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}
