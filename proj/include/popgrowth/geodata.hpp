#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "popgrowth/common.hpp"

namespace popgrowth {

enum class Epoch { T1, T2 };

inline const char* epoch_tag(Epoch e) { return e == Epoch::T1 ? "t1" : "t2"; }
Epoch epoch_from_tag(const std::string& tag);

// One 100 x 100 m grid cell at one epoch: 4 bands (B2, B3, B4, B8) of
// surface reflectance in [0, 1], band-major row-major.
struct RasterPatch {
    std::string patch_id;
    int grid_row = 0;
    int grid_col = 0;
    Epoch epoch = Epoch::T1;
    int size = 0;                     // H = W = patch size
    std::vector<float> bands;         // [4][size][size]
    std::vector<std::uint8_t> nodata; // [size][size], 1 = no valid observation

    std::size_t pixel_count() const { return static_cast<std::size_t>(size) * size; }
    float band_at(int b, int r, int c) const {
        return bands[(static_cast<std::size_t>(b) * size + r) * size + c];
    }
};

struct CensusUnit {
    std::string unit_id;
    std::vector<std::string> patch_ids;  // non-empty; disjoint across units
    double pop_t1 = 0.0;
    double pop_t2 = 0.0;

    double pop(Epoch e) const { return e == Epoch::T1 ? pop_t1 : pop_t2; }
    // Derived, never stored: growth = pop_t2 - pop_t1.
    double growth() const { return pop_t2 - pop_t1; }
};

struct DatasetSplit {
    std::vector<std::string> train, val, test;  // sorted unit ids
};

// Generator-known ground truth, used for verification and grid-level
// pretraining labels, never for census-level growth supervision.
struct OracleEntry {
    double built_fraction_t1 = 0.0;
    double built_fraction_t2 = 0.0;
    double pop_t1 = 0.0;
    double pop_t2 = 0.0;
};

struct Dataset {
    int patch_size = 0;
    int grid_rows = 0;
    int grid_cols = 0;
    std::vector<RasterPatch> patches;           // both epochs
    std::vector<CensusUnit> units;              // sorted by unit_id
    std::map<std::string, OracleEntry> oracle;  // empty when absent

    bool has_oracle() const { return !oracle.empty(); }

    const RasterPatch& patch(const std::string& patch_id, Epoch e) const;
    const RasterPatch* find_patch(const std::string& patch_id, Epoch e) const;
    const CensusUnit& unit(const std::string& unit_id) const;
    const OracleEntry& oracle_entry(const std::string& patch_id) const;
    std::vector<std::string> patch_ids() const;  // sorted, unique per cell

    // Index maps are rebuilt by finalize() after patches/units mutate.
    void finalize();
    // Enforces every documented invariant; throws ValidationError.
    void validate() const;

private:
    std::map<std::pair<std::string, Epoch>, std::size_t> patch_index_;
    std::map<std::string, std::size_t> unit_index_;
};

struct BitemporalSample {
    const RasterPatch* x_t1 = nullptr;
    const RasterPatch* x_t2 = nullptr;
};

BitemporalSample bitemporal_sample(const Dataset& dataset, const std::string& patch_id);

// --------------------------------------------------------------------------
// On-disk format: one headerless little-endian f32 file per (patch, epoch),
// band-major [4][H][W], named "<patch_id>_<epoch>.raw", plus manifest.json.
// --------------------------------------------------------------------------
Dataset load_dataset(const fs::path& root, const std::string& manifest_name = "manifest.json");
void write_dataset(const Dataset& dataset, const fs::path& root,
                   bool with_checksums = true, const std::string& manifest_name = "manifest.json");

// Deterministic 60/20/20 split by unit count, remainder to train.
DatasetSplit split_units(const std::vector<CensusUnit>& units, std::uint64_t seed);

// Patches of one unit at one epoch, sorted by patch_id (the stable order used
// by every aggregation).
std::vector<const RasterPatch*> unit_patches(const Dataset& dataset, const std::string& unit_id,
                                             Epoch epoch);

}  // namespace popgrowth
