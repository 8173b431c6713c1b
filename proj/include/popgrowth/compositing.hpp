#pragma once

#include <cstdint>
#include <vector>

#include "popgrowth/geodata.hpp"

namespace popgrowth {

// One acquisition of a patch-sized window: 4 reflectance bands plus a
// precomputed per-pixel cloud probability (as Earth-Engine products carry).
struct Scene {
    std::vector<float> bands;       // [4][size][size]
    std::vector<float> cloud_prob;  // [size][size], values in [0,1]
};

struct SceneStack {
    int size = 0;  // H = W
    Epoch epoch = Epoch::T1;
    std::vector<Scene> scenes;                    // >= 1, all same shape
    std::vector<std::vector<std::uint8_t>> mask;  // per scene per pixel, 1 = masked

    void validate() const;
};

// Marks pixels with cloud_prob strictly greater than threshold as invalid in
// all 4 bands; reflectance values are untouched.
void mask_clouds(SceneStack& stack, double threshold = 0.5);

struct CompositeResult {
    std::vector<float> bands;           // [4][size][size]
    std::vector<std::uint8_t> nodata;   // [size][size]
};

// Per pixel per band: median over valid observations; even count averages the
// two central values; zero valid observations yields 0 with nodata set.
CompositeResult median_composite(const SceneStack& stack);

// CLI `composite` back end: reads a scene-stack directory (stack_manifest.json
// plus per-scene raw tiles) and writes a geodata-format dataset.
void composite_stack_dir(const fs::path& stack_dir, const fs::path& out_dir,
                         double threshold = 0.5);

}  // namespace popgrowth
