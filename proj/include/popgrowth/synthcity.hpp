#pragma once

#include <array>
#include <optional>

#include "popgrowth/geodata.hpp"

namespace popgrowth {

// Configuration of the synthetic bi-temporal city. Spectral values and noise
// levels are config, not contract; defaults are what the acceptance runs use.
struct SynthConfig {
    std::uint64_t seed = 42;
    int grid_rows = 20;
    int grid_cols = 20;
    int n_units = 160;
    int patch_size = 10;

    double pop_density_scale = 150.0;  // kappa: people per fully built patch
    double growth_fraction = 0.4;      // share of units with positive growth
    double decline_fraction = 0.0;     // share of units losing population
    double growth_patch_fraction = 0.7;
    double growth_intensity = 0.85;    // toward-1 step on converted patches

    double image_noise_sigma = 0.02;   // per-pixel texture noise
    double pop_noise_sigma = 4.0;      // persistent per-patch density deviation

    double built_amplitude = 1.0;      // scales the whole built-fraction field
    double core_radius = 0.42;         // logistic midpoint of the radial profile
    double edge_softness = 0.10;
    double terrain_noise_amplitude = 0.08;  // smooth spatially correlated field

    // Band order B2, B3, B4, B8. Built surfaces look the same at both epochs;
    // vegetation differs slightly between the two wet seasons, which is what
    // makes post-classification differencing propagate per-epoch map errors.
    std::array<double, 4> built_signature = {0.16, 0.18, 0.20, 0.30};
    std::array<double, 4> vegetation_signature_t1 = {0.040, 0.070, 0.050, 0.400};
    std::array<double, 4> vegetation_signature_t2 = {0.046, 0.078, 0.056, 0.460};

    // Test hooks: force the built fraction of every patch at one epoch.
    std::optional<double> fixed_built_t1;
    std::optional<double> fixed_built_t2;

    void validate() const;
};

SynthConfig synth_config_from_json_text(const std::string& text);
std::string synth_config_to_json_text(const SynthConfig& config);

// Deterministic in config: same config -> bit-identical dataset. Census
// counts are exact sums of the emitted oracle populations.
Dataset generate_city(const SynthConfig& config);

// Sum over the unit's patches of oracle growth, computed as
// (sum of pop_t2) - (sum of pop_t1) in patch_id-sorted order so it matches
// CensusUnit::growth() bit-exactly.
double oracle_growth(const Dataset& dataset, const std::string& unit_id);

}  // namespace popgrowth
