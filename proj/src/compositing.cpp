#include "popgrowth/compositing.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace popgrowth {

void SceneStack::validate() const {
    if (size <= 0) throw ValidationError("scene stack size must be positive");
    if (scenes.empty()) throw ValidationError("scene stack must contain at least one scene");
    const std::size_t px = static_cast<std::size_t>(size) * size;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        if (scenes[i].bands.size() != 4 * px)
            throw ValidationError("scene " + std::to_string(i) + ": band shape mismatch");
        if (scenes[i].cloud_prob.size() != px)
            throw ValidationError("scene " + std::to_string(i) +
                                  ": cloud probability shape mismatch with bands");
    }
    if (!mask.empty() && mask.size() != scenes.size())
        throw ValidationError("mask plane count differs from scene count");
}

void mask_clouds(SceneStack& stack, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw ValidationError("cloud threshold must be in [0,1]");
    stack.validate();
    const std::size_t px = static_cast<std::size_t>(stack.size) * stack.size;
    stack.mask.assign(stack.scenes.size(), std::vector<std::uint8_t>(px, 0));
    for (std::size_t s = 0; s < stack.scenes.size(); ++s)
        for (std::size_t i = 0; i < px; ++i)
            // Strictly greater, per the "> 50 %" masking rule.
            stack.mask[s][i] = stack.scenes[s].cloud_prob[i] > threshold ? 1 : 0;
}

CompositeResult median_composite(const SceneStack& stack) {
    stack.validate();
    const std::size_t px = static_cast<std::size_t>(stack.size) * stack.size;
    const std::size_t n_scenes = stack.scenes.size();
    CompositeResult out;
    out.bands.assign(4 * px, 0.0f);
    out.nodata.assign(px, 0);

    std::vector<float> values;
    values.reserve(n_scenes);
    for (std::size_t i = 0; i < px; ++i) {
        bool any_valid = false;
        for (int b = 0; b < 4; ++b) {
            values.clear();
            for (std::size_t s = 0; s < n_scenes; ++s) {
                if (!stack.mask.empty() && stack.mask[s][i]) continue;
                values.push_back(stack.scenes[s].bands[static_cast<std::size_t>(b) * px + i]);
            }
            if (values.empty()) continue;
            any_valid = true;
            std::sort(values.begin(), values.end());
            const std::size_t m = values.size();
            const float median = m % 2 == 1
                                     ? values[m / 2]
                                     : 0.5f * (values[m / 2 - 1] + values[m / 2]);
            out.bands[static_cast<std::size_t>(b) * px + i] = median;
        }
        if (!any_valid) out.nodata[i] = 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scene-stack directory -> composited geodata dataset.
//
// stack_manifest.json:
//   { "patch_size": P, "grid_rows": R, "grid_cols": C,
//     "patches": [ {"id", "row", "col", "scenes": {"t1": k1, "t2": k2}} ],
//     "units":   [ {"unit_id", "patch_ids", "pop_t1", "pop_t2"} ] }
// Scene files: "<id>_<epoch>_s<k>.raw" (f32 [4][P][P]) and
//              "<id>_<epoch>_s<k>.cloudprob.raw" (f32 [P][P]).
// ---------------------------------------------------------------------------
void composite_stack_dir(const fs::path& stack_dir, const fs::path& out_dir, double threshold) {
    const fs::path manifest_path = stack_dir / "stack_manifest.json";
    if (!fs::exists(manifest_path))
        throw IoError("stack manifest not found: " + manifest_path.string());
    json m;
    try {
        m = json::parse(read_file_text(manifest_path));
    } catch (const json::exception& e) {
        throw ValidationError("stack manifest is not valid JSON: " + std::string(e.what()));
    }

    Dataset ds;
    ds.patch_size = m.at("patch_size").get<int>();
    ds.grid_rows = m.at("grid_rows").get<int>();
    ds.grid_cols = m.at("grid_cols").get<int>();
    const std::size_t px = static_cast<std::size_t>(ds.patch_size) * ds.patch_size;

    for (const auto& jp : m.at("patches")) {
        const auto id = jp.at("id").get<std::string>();
        for (const Epoch epoch : {Epoch::T1, Epoch::T2}) {
            const int n_scenes = jp.at("scenes").at(epoch_tag(epoch)).get<int>();
            if (n_scenes < 1)
                throw ValidationError("patch " + id + ": needs at least one scene per epoch");
            SceneStack stack;
            stack.size = ds.patch_size;
            stack.epoch = epoch;
            for (int s = 0; s < n_scenes; ++s) {
                const std::string base = id + "_" + epoch_tag(epoch) + "_s" + std::to_string(s);
                Scene scene;
                scene.bands = read_f32_file(stack_dir / (base + ".raw"), 4 * px);
                scene.cloud_prob = read_f32_file(stack_dir / (base + ".cloudprob.raw"), px);
                stack.scenes.push_back(std::move(scene));
            }
            mask_clouds(stack, threshold);
            CompositeResult composite = median_composite(stack);

            RasterPatch p;
            p.patch_id = id;
            p.grid_row = jp.at("row").get<int>();
            p.grid_col = jp.at("col").get<int>();
            p.epoch = epoch;
            p.size = ds.patch_size;
            p.bands = std::move(composite.bands);
            p.nodata = std::move(composite.nodata);
            ds.patches.push_back(std::move(p));
        }
    }

    if (!m.contains("units"))
        throw ValidationError("stack manifest needs a units block (census metadata is carried "
                              "through to the composited dataset)");
    for (const auto& ju : m.at("units")) {
        CensusUnit u;
        u.unit_id = ju.at("unit_id").get<std::string>();
        u.patch_ids = ju.at("patch_ids").get<std::vector<std::string>>();
        u.pop_t1 = ju.at("pop_t1").get<double>();
        u.pop_t2 = ju.at("pop_t2").get<double>();
        ds.units.push_back(std::move(u));
    }

    ds.finalize();
    write_dataset(ds, out_dir);
}

}  // namespace popgrowth
