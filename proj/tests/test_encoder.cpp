#include <doctest.h>

#include <cstring>
#include <numeric>

#include "popgrowth/encoder.hpp"
#include "test_util.hpp"

using namespace popgrowth;
using test::TempDir;

namespace {

RasterPatch flat_patch(const std::string& id, int row, int col, Epoch epoch, int size,
                       float value) {
    RasterPatch p;
    p.patch_id = id;
    p.grid_row = row;
    p.grid_col = col;
    p.epoch = epoch;
    p.size = size;
    p.bands.assign(static_cast<std::size_t>(4) * size * size, value);
    p.nodata.assign(static_cast<std::size_t>(size) * size, 0);
    return p;
}

RasterPatch numbered_patch(int size) {
    RasterPatch p = flat_patch("p_num", 0, 0, Epoch::T1, size, 0.0f);
    for (std::size_t i = 0; i < p.bands.size(); ++i)
        p.bands[i] = static_cast<float>(i) / static_cast<float>(p.bands.size());
    return p;
}

// 3x3 grid of single-patch units with flat tiles and oracle pops 8*i.
Dataset memorization_dataset() {
    Dataset ds;
    ds.patch_size = 8;
    ds.grid_rows = 3;
    ds.grid_cols = 3;
    for (int i = 0; i < 9; ++i) {
        const std::string pid = "p_000" + std::to_string(i);
        const float v = 0.06f + 0.09f * static_cast<float>(i);
        ds.patches.push_back(flat_patch(pid, i / 3, i % 3, Epoch::T1, 8, v));
        ds.patches.push_back(flat_patch(pid, i / 3, i % 3, Epoch::T2, 8, v));
        const double pop = 8.0 * i;
        ds.oracle[pid] = OracleEntry{0.0, 0.0, pop, pop};
        CensusUnit u;
        u.unit_id = "u_000" + std::to_string(i);
        u.patch_ids = {pid};
        u.pop_t1 = pop;
        u.pop_t2 = pop;
        ds.units.push_back(u);
    }
    ds.finalize();
    ds.validate();
    return ds;
}

DatasetSplit memorization_split() {
    DatasetSplit split;
    for (int i = 0; i < 8; ++i) split.train.push_back("u_000" + std::to_string(i));
    split.val = {"u_0008"};
    return split;
}

}  // namespace

TEST_CASE("dihedral transforms: identity, closure and group relations") {
    const int size = 5;
    RasterPatch p = numbered_patch(size);

    // transform 0 is the identity
    CHECK(augment_patch(p, 0).bands == p.bands);

    // rotating four times returns the original
    RasterPatch r = p;
    for (int k = 0; k < 4; ++k) r = augment_patch(r, 1);
    CHECK(r.bands == p.bands);

    // horizontal then vertical flip equals the 180-degree rotation
    const RasterPatch hv = augment_patch(augment_patch(p, 4), 6);
    CHECK(hv.bands == augment_patch(p, 2).bands);

    // every transform is a bijection with an inverse in the set
    for (int t = 0; t < kNumTransforms; ++t) {
        const RasterPatch q = augment_patch(p, t);
        bool has_inverse = false;
        for (int u = 0; u < kNumTransforms; ++u)
            if (augment_patch(q, u).bands == p.bands) has_inverse = true;
        CHECK(has_inverse);
        // permutation: multiset of values preserved
        auto a = p.bands, b = q.bands;
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }

    CHECK_THROWS_AS(augment_patch(p, 8), ValidationError);
    CHECK_THROWS_AS(augment_patch(p, -1), ValidationError);
}

TEST_CASE("encode: shape, determinism, and no architectural flip invariance") {
    const nn::EncoderModel encoder(0.125, 7);
    CHECK(encoder.feature_dim() == 64);

    const RasterPatch zero = flat_patch("p_zero", 0, 0, Epoch::T1, 10, 0.0f);
    const auto f_zero = encode(encoder, zero);
    CHECK(f_zero.size() == 64);
    for (const double v : f_zero) CHECK(std::isfinite(v));

    const RasterPatch p = numbered_patch(10);
    const auto f1 = encode(encoder, p);
    const auto f2 = encode(encoder, p);
    CHECK(std::memcmp(f1.data(), f2.data(), f1.size() * sizeof(double)) == 0);

    const auto f_flip = encode(encoder, augment_patch(p, 4));
    CHECK(f1 != f_flip);

    RasterPatch broken = p;
    broken.bands.resize(3 * 100);
    CHECK_THROWS_AS(encode(encoder, broken), ValidationError);

    RasterPatch small = flat_patch("p_small", 0, 0, Epoch::T1, 4, 0.1f);
    CHECK_THROWS_AS(encode(encoder, small), ValidationError);
}

TEST_CASE("predict_population is non-negative for random weights and zero for zero head") {
    Rng rng(31);
    const RasterPatch p = numbered_patch(10);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        PopulationModel model(0.125, seed);
        model.head.output_scale = 37.0;
        CHECK(predict_population(model, p) >= 0.0);
    }
    PopulationModel zero_head(0.125, 3);
    zero_head.head.fc.weight.value.zero();
    zero_head.head.fc.bias.value.zero();
    zero_head.head.output_scale = 123.0;
    CHECK(predict_population(zero_head, p) == 0.0);
    (void)rng;
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.patience = 100;
    c.max_epochs = 100;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c.patience = 0;  // disabled is fine
    CHECK_NOTHROW(c.validate());
    c.learning_rates.clear();
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("pretrain memorizes a tiny flat-patch dataset (overfit sanity)") {
    const Dataset ds = memorization_dataset();
    TrainConfig config;
    config.learning_rates = {1e-3};
    config.batch_sizes = {8};
    config.max_epochs = 200;
    config.patience = 0;  // off
    config.weight_decay = 0.0;
    config.seed = 17;

    const PretrainResult result = pretrain_grid(ds, memorization_split(), config, 0.125);
    REQUIRE(result.runs.size() == 1);
    const auto& history = result.runs[0].history;
    REQUIRE(!history.empty());
    double best_train = history.front().train_loss;
    for (const auto& e : history) best_train = std::min(best_train, e.train_loss);
    CHECK(best_train < 1.0);
}

TEST_CASE("pretrain grid search: 6 combos, determinism, early stopping invariant") {
    const Dataset ds = generate_city(test::tiny_city_config());
    const DatasetSplit split = split_units(ds.units, 5);

    TrainConfig config;  // full 3x2 grid
    config.max_epochs = 6;
    config.patience = 2;
    config.seed = 23;

    const PretrainResult a = pretrain_grid(ds, split, config, 0.125);
    CHECK(a.runs.size() == 6);  // 3 learning rates x 2 batch sizes
    REQUIRE(a.winner_index >= 0);

    const PretrainResult b = pretrain_grid(ds, split, config, 0.125);
    CHECK(a.winner_index == b.winner_index);
    CHECK(a.runs[static_cast<std::size_t>(a.winner_index)].best_val_metric ==
          b.runs[static_cast<std::size_t>(b.winner_index)].best_val_metric);
    CHECK(a.runs[static_cast<std::size_t>(a.winner_index)].learning_rate ==
          b.runs[static_cast<std::size_t>(b.winner_index)].learning_rate);

    for (const auto& run : a.runs) {
        if (run.diverged) continue;
        CHECK(run.stopped_epoch <= run.best_epoch + config.patience + 1);
        CHECK(run.best_epoch >= 1);
        CHECK(static_cast<int>(run.history.size()) == run.stopped_epoch);
    }

    // winner model predictions are identical across the two searches
    const RasterPatch& p = ds.patches.front();
    CHECK(predict_population(a.model, p) == predict_population(b.model, p));
}

TEST_CASE("a diverging combination is recorded and the search continues") {
    const Dataset ds = memorization_dataset();
    TrainConfig config;
    config.learning_rates = {1e290, 1e-4};
    config.batch_sizes = {8};
    config.max_epochs = 4;
    config.patience = 0;
    config.seed = 3;

    const PretrainResult result = pretrain_grid(ds, memorization_split(), config, 0.125);
    REQUIRE(result.runs.size() == 2);
    CHECK(result.runs[0].diverged);
    CHECK(!result.runs[1].diverged);
    CHECK(result.winner_index == 1);

    // all combinations diverging is a hard error
    TrainConfig bad = config;
    bad.learning_rates = {1e290};
    CHECK_THROWS_AS(pretrain_grid(ds, memorization_split(), bad, 0.125), std::runtime_error);
}

TEST_CASE("pretrain requires oracle labels and a non-empty train set") {
    Dataset ds = generate_city(test::tiny_city_config());
    const DatasetSplit split = split_units(ds.units, 5);
    TrainConfig config;
    config.max_epochs = 2;
    config.patience = 0;

    Dataset no_oracle = ds;
    no_oracle.oracle.clear();
    CHECK_THROWS_AS(pretrain_grid(no_oracle, split, config, 0.125), ValidationError);

    DatasetSplit empty_train = split;
    empty_train.train.clear();
    CHECK_THROWS_AS(pretrain_grid(ds, empty_train, config, 0.125), ValidationError);
}

TEST_CASE("population checkpoint round-trips bit-exactly") {
    const Dataset ds = generate_city(test::tiny_city_config());
    const DatasetSplit split = split_units(ds.units, 5);
    TrainConfig config;
    config.learning_rates = {1e-3};
    config.batch_sizes = {8};
    config.max_epochs = 2;
    config.patience = 0;
    config.seed = 10;
    const PretrainResult trained = pretrain_grid(ds, split, config, 0.125);

    TempDir tmp("ckpt");
    const fs::path path = tmp.path / "pretrain.ckpt";
    save_population_checkpoint(path, trained);
    const PretrainResult loaded = load_population_checkpoint(path);

    CHECK(loaded.model.width == trained.model.width);
    CHECK(loaded.label_scale == trained.label_scale);
    CHECK(loaded.winner_index == trained.winner_index);
    CHECK(loaded.runs.size() == trained.runs.size());
    CHECK(loaded.model.encoder.state_hash() == trained.model.encoder.state_hash());
    for (const auto& p : ds.patches)
        CHECK(predict_population(loaded.model, p) == predict_population(trained.model, p));

    // saving the loaded model reproduces the checkpoint bytes
    const fs::path path2 = tmp.path / "pretrain2.ckpt";
    save_population_checkpoint(path2, loaded);
    CHECK(read_file_bytes(path) == read_file_bytes(path2));
}

TEST_CASE("gradient of the pretraining MSE loss w.r.t. head weights matches FD") {
    PopulationModel model(0.125, 21);
    model.head.output_scale = 50.0;
    const RasterPatch patch = numbered_patch(10);
    const double label = 120.0;

    nn::Tensor x({1, 4, 10, 10});
    for (std::size_t i = 0; i < patch.bands.size(); ++i)
        x.data[i] = static_cast<double>(patch.bands[i]);

    auto ws = model.encoder.make_workspace();
    auto loss = [&] {
        const nn::Tensor& feat = model.encoder.forward(x, ws, /*train=*/false,
                                                       nn::ExecPolicy::Parallel);
        nn::Tensor z;
        model.head.fc.forward(feat, z, nn::ExecPolicy::Parallel);
        const double p = std::max(0.0, model.head.output_scale * z.data[0]);
        return (label - p) * (label - p);
    };

    // analytic gradient (eval-mode features; the head is what trains here)
    const nn::Tensor& feat = model.encoder.forward(x, ws, false, nn::ExecPolicy::Parallel);
    nn::Tensor z;
    model.head.fc.forward(feat, z, nn::ExecPolicy::Parallel);
    const double p = std::max(0.0, model.head.output_scale * z.data[0]);
    REQUIRE(p > 0.0);
    const double dLdp = 2.0 * (p - label);
    model.zero_grad();
    nn::Tensor gz({1, 1});
    gz.data[0] = dLdp * model.head.output_scale;
    model.head.fc.backward(feat, gz, nullptr, nn::ExecPolicy::Parallel);

    Rng pick(3);
    for (int trial = 0; trial < 16; ++trial) {
        const auto i =
            static_cast<std::size_t>(pick.uniform_int(model.head.fc.weight.value.data.size()));
        const double fd =
            test::central_difference(loss, &model.head.fc.weight.value.data[i], 1e-6);
        CHECK(test::rel_err(fd, model.head.fc.weight.grad.data[i]) < 1e-3);
    }
    const double fd_bias =
        test::central_difference(loss, &model.head.fc.bias.value.data[0], 1e-6);
    CHECK(test::rel_err(fd_bias, model.head.fc.bias.grad.data[0]) < 1e-3);
}
