#include <doctest.h>

#include <algorithm>

#include "popgrowth/compositing.hpp"
#include "test_util.hpp"

using namespace popgrowth;
using test::TempDir;

namespace {

SceneStack make_stack(int size, const std::vector<std::vector<float>>& per_scene_values) {
    // Every pixel of band b in scene s gets value[s][b]; cloud prob 0.
    SceneStack stack;
    stack.size = size;
    const std::size_t px = static_cast<std::size_t>(size) * size;
    for (const auto& values : per_scene_values) {
        Scene scene;
        scene.bands.resize(4 * px);
        for (int b = 0; b < 4; ++b)
            std::fill_n(scene.bands.begin() + static_cast<std::ptrdiff_t>(b * px), px,
                        values[static_cast<std::size_t>(b)]);
        scene.cloud_prob.assign(px, 0.0f);
        stack.scenes.push_back(std::move(scene));
    }
    return stack;
}

// Independent sort-based oracle.
void oracle_composite(const SceneStack& stack, std::vector<float>& bands,
                      std::vector<std::uint8_t>& nodata) {
    const std::size_t px = static_cast<std::size_t>(stack.size) * stack.size;
    bands.assign(4 * px, 0.0f);
    nodata.assign(px, 0);
    for (std::size_t i = 0; i < px; ++i) {
        bool any = false;
        for (int b = 0; b < 4; ++b) {
            std::vector<float> vals;
            for (std::size_t s = 0; s < stack.scenes.size(); ++s) {
                if (!stack.mask.empty() && stack.mask[s][i]) continue;
                vals.push_back(stack.scenes[s].bands[static_cast<std::size_t>(b) * px + i]);
            }
            if (vals.empty()) continue;
            any = true;
            std::sort(vals.begin(), vals.end());
            const std::size_t m = vals.size();
            bands[static_cast<std::size_t>(b) * px + i] =
                m % 2 == 1 ? vals[m / 2] : 0.5f * (vals[m / 2 - 1] + vals[m / 2]);
        }
        if (!any) nodata[i] = 1;
    }
}

}  // namespace

TEST_CASE("mask_clouds uses a strict greater-than threshold") {
    SceneStack stack = make_stack(2, {{0.1f, 0.2f, 0.3f, 0.4f}});
    stack.scenes[0].cloud_prob = {0.0f, 0.50f, 0.51f, 1.0f};
    mask_clouds(stack, 0.5);
    CHECK(stack.mask[0][0] == 0);
    CHECK(stack.mask[0][1] == 0);  // exactly at the threshold: NOT masked
    CHECK(stack.mask[0][2] == 1);
    CHECK(stack.mask[0][3] == 1);
    // reflectance untouched
    CHECK(stack.scenes[0].bands[0] == 0.1f);

    SceneStack clear = make_stack(3, {{0.1f, 0.2f, 0.3f, 0.4f}, {0.5f, 0.5f, 0.5f, 0.5f}});
    mask_clouds(clear, 0.5);
    for (const auto& plane : clear.mask)
        for (const auto m : plane) CHECK(m == 0);

    SceneStack broken = make_stack(2, {{0.1f, 0.2f, 0.3f, 0.4f}});
    broken.scenes[0].cloud_prob.pop_back();
    CHECK_THROWS_AS(mask_clouds(broken, 0.5), ValidationError);
    CHECK_THROWS_AS(mask_clouds(stack, 1.5), ValidationError);
}

TEST_CASE("median composite hand values") {
    SceneStack stack = make_stack(
        1, {{0.1f, 0.1f, 0.1f, 0.1f}, {0.2f, 0.2f, 0.2f, 0.2f}, {0.9f, 0.9f, 0.9f, 0.9f}});
    mask_clouds(stack, 0.5);
    CHECK(median_composite(stack).bands[0] == doctest::Approx(0.2f));

    // masking the 0.9 observation leaves an even count: mean of the two
    // central values (verified against the sort-based oracle below)
    stack.scenes[2].cloud_prob[0] = 0.9f;
    mask_clouds(stack, 0.5);
    const CompositeResult r = median_composite(stack);
    CHECK(r.bands[0] == doctest::Approx(0.15f));
    std::vector<float> ob;
    std::vector<std::uint8_t> on;
    oracle_composite(stack, ob, on);
    CHECK(r.bands == ob);

    // all scenes masked: value 0, nodata set
    for (auto& scene : stack.scenes) scene.cloud_prob[0] = 1.0f;
    mask_clouds(stack, 0.5);
    const CompositeResult all_masked = median_composite(stack);
    CHECK(all_masked.bands[0] == 0.0f);
    CHECK(all_masked.nodata[0] == 1);
}

TEST_CASE("median composite equals the sort-based oracle on random stacks") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        const int size = 2 + static_cast<int>(rng.uniform_int(4));
        const int n_scenes = 1 + static_cast<int>(rng.uniform_int(6));
        SceneStack stack;
        stack.size = size;
        const std::size_t px = static_cast<std::size_t>(size) * size;
        for (int s = 0; s < n_scenes; ++s) {
            Scene scene;
            scene.bands.resize(4 * px);
            for (auto& v : scene.bands) v = static_cast<float>(rng.uniform());
            scene.cloud_prob.resize(px);
            for (auto& v : scene.cloud_prob) v = static_cast<float>(rng.uniform());
            stack.scenes.push_back(std::move(scene));
        }
        // force some all-masked pixels
        if (trial % 3 == 0)
            for (auto& scene : stack.scenes) scene.cloud_prob[0] = 1.0f;
        mask_clouds(stack, 0.5);

        const CompositeResult got = median_composite(stack);
        std::vector<float> want_bands;
        std::vector<std::uint8_t> want_nodata;
        oracle_composite(stack, want_bands, want_nodata);
        CHECK(got.bands == want_bands);  // exact
        CHECK(got.nodata == want_nodata);
    }
}

TEST_CASE("composite is permutation invariant, idempotent and bounded") {
    Rng rng(88);
    SceneStack stack;
    stack.size = 4;
    const std::size_t px = 16;
    for (int s = 0; s < 5; ++s) {
        Scene scene;
        scene.bands.resize(4 * px);
        for (auto& v : scene.bands) v = static_cast<float>(rng.uniform());
        scene.cloud_prob.resize(px);
        for (auto& v : scene.cloud_prob) v = static_cast<float>(rng.uniform());
        stack.scenes.push_back(std::move(scene));
    }
    mask_clouds(stack, 0.5);
    const CompositeResult base = median_composite(stack);

    SceneStack permuted = stack;
    std::rotate(permuted.scenes.begin(), permuted.scenes.begin() + 2, permuted.scenes.end());
    permuted.mask.clear();
    mask_clouds(permuted, 0.5);
    const CompositeResult rotated = median_composite(permuted);
    CHECK(base.bands == rotated.bands);

    // single-scene idempotence (valid pixels return the scene itself)
    SceneStack single;
    single.size = 4;
    single.scenes.push_back(stack.scenes[0]);
    mask_clouds(single, 0.5);
    const CompositeResult one = median_composite(single);
    for (std::size_t i = 0; i < px; ++i) {
        if (single.mask[0][i]) continue;
        for (int b = 0; b < 4; ++b)
            CHECK(one.bands[static_cast<std::size_t>(b) * px + i] ==
                  single.scenes[0].bands[static_cast<std::size_t>(b) * px + i]);
    }

    // bounds: composite lies within the valid observations per pixel
    for (std::size_t i = 0; i < px; ++i) {
        for (int b = 0; b < 4; ++b) {
            float lo = 2.0f, hi = -1.0f;
            for (std::size_t s = 0; s < stack.scenes.size(); ++s) {
                if (stack.mask[s][i]) continue;
                lo = std::min(lo, stack.scenes[s].bands[static_cast<std::size_t>(b) * px + i]);
                hi = std::max(hi, stack.scenes[s].bands[static_cast<std::size_t>(b) * px + i]);
            }
            if (hi < lo) continue;
            CHECK(base.bands[static_cast<std::size_t>(b) * px + i] >= lo);
            CHECK(base.bands[static_cast<std::size_t>(b) * px + i] <= hi);
        }
    }
}

TEST_CASE("composite_stack_dir writes a loadable geodata dataset") {
    TempDir tmp("composite_dir");
    const fs::path stack_dir = tmp.path / "stack";
    fs::create_directories(stack_dir);

    const int ps = 8;
    const std::size_t px = static_cast<std::size_t>(ps) * ps;
    Rng rng(4);
    // 2 cells x 2 epochs x 2-3 scenes
    std::string manifest = R"({
  "patch_size": 8, "grid_rows": 1, "grid_cols": 2,
  "patches": [
    {"id": "p_0000", "row": 0, "col": 0, "scenes": {"t1": 3, "t2": 2}},
    {"id": "p_0001", "row": 0, "col": 1, "scenes": {"t1": 2, "t2": 2}}
  ],
  "units": [
    {"unit_id": "u_0000", "patch_ids": ["p_0000"], "pop_t1": 10.0, "pop_t2": 12.0},
    {"unit_id": "u_0001", "patch_ids": ["p_0001"], "pop_t1": 5.0, "pop_t2": 5.0}
  ]
})";
    write_file_text(stack_dir / "stack_manifest.json", manifest);
    for (const std::string pid : {"p_0000", "p_0001"}) {
        for (const std::string epoch : {"t1", "t2"}) {
            const int n_scenes = (pid == "p_0000" && epoch == "t1") ? 3 : 2;
            for (int s = 0; s < n_scenes; ++s) {
                std::vector<float> bands(4 * px);
                for (auto& v : bands) v = static_cast<float>(rng.uniform());
                std::vector<float> cloud(px);
                for (auto& v : cloud) v = static_cast<float>(0.8 * rng.uniform());
                const std::string base = pid + "_" + epoch + "_s" + std::to_string(s);
                write_f32_file(stack_dir / (base + ".raw"), bands.data(), bands.size());
                write_f32_file(stack_dir / (base + ".cloudprob.raw"), cloud.data(), cloud.size());
            }
        }
    }

    const fs::path out_dir = tmp.path / "dataset";
    composite_stack_dir(stack_dir, out_dir, 0.5);
    const Dataset ds = load_dataset(out_dir);
    CHECK(ds.patches.size() == 4);
    CHECK(ds.units.size() == 2);
    CHECK(ds.unit("u_0000").pop_t2 == 12.0);
}
