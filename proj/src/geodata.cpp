#include "popgrowth/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace popgrowth {

Epoch epoch_from_tag(const std::string& tag) {
    if (tag == "t1") return Epoch::T1;
    if (tag == "t2") return Epoch::T2;
    throw ValidationError("unknown epoch tag: " + tag);
}

const RasterPatch* Dataset::find_patch(const std::string& patch_id, Epoch e) const {
    const auto it = patch_index_.find({patch_id, e});
    return it == patch_index_.end() ? nullptr : &patches[it->second];
}

const RasterPatch& Dataset::patch(const std::string& patch_id, Epoch e) const {
    const auto* p = find_patch(patch_id, e);
    if (!p)
        throw ValidationError("unknown patch: " + patch_id + " at epoch " + epoch_tag(e));
    return *p;
}

const CensusUnit& Dataset::unit(const std::string& unit_id) const {
    const auto it = unit_index_.find(unit_id);
    if (it == unit_index_.end()) throw ValidationError("unknown unit_id: " + unit_id);
    return units[it->second];
}

const OracleEntry& Dataset::oracle_entry(const std::string& patch_id) const {
    const auto it = oracle.find(patch_id);
    if (it == oracle.end())
        throw ValidationError("dataset has no oracle entry for patch " + patch_id);
    return it->second;
}

std::vector<std::string> Dataset::patch_ids() const {
    std::set<std::string> ids;
    for (const auto& p : patches) ids.insert(p.patch_id);
    return {ids.begin(), ids.end()};
}

void Dataset::finalize() {
    std::sort(units.begin(), units.end(),
              [](const CensusUnit& a, const CensusUnit& b) { return a.unit_id < b.unit_id; });
    patch_index_.clear();
    unit_index_.clear();
    for (std::size_t i = 0; i < patches.size(); ++i)
        patch_index_[{patches[i].patch_id, patches[i].epoch}] = i;
    for (std::size_t i = 0; i < units.size(); ++i) unit_index_[units[i].unit_id] = i;
}

void Dataset::validate() const {
    if (patch_size <= 0) throw ValidationError("patch_size must be positive");
    if (grid_rows <= 0 || grid_cols <= 0) throw ValidationError("grid shape must be positive");

    std::set<std::tuple<int, int, Epoch>> cells_seen;
    std::set<std::string> ids_t1, ids_t2;
    for (const auto& p : patches) {
        if (p.size != patch_size)
            throw ValidationError("patch " + p.patch_id + ": size differs from dataset patch_size");
        if (p.grid_row < 0 || p.grid_col < 0)
            throw ValidationError("patch " + p.patch_id + ": grid_row/grid_col must be non-negative");
        if (p.grid_row >= grid_rows || p.grid_col >= grid_cols)
            throw ValidationError("patch " + p.patch_id + ": grid position outside grid shape");
        if (p.bands.size() != 4 * p.pixel_count())
            throw ValidationError("patch " + p.patch_id + ": band buffer has wrong length");
        if (p.nodata.size() != p.pixel_count())
            throw ValidationError("patch " + p.patch_id + ": nodata mask has wrong length");
        for (const float v : p.bands) {
            if (!std::isfinite(v))
                throw ValidationError("patch " + p.patch_id + ": non-finite reflectance value");
            if (v < 0.0f || v > 1.0f)
                throw ValidationError("patch " + p.patch_id + ": reflectance value " +
                                      std::to_string(v) + " outside [0,1]");
        }
        if (!cells_seen.insert({p.grid_row, p.grid_col, p.epoch}).second)
            throw ValidationError("duplicate (grid_row, grid_col, epoch) at patch " + p.patch_id);
        auto& ids = p.epoch == Epoch::T1 ? ids_t1 : ids_t2;
        if (!ids.insert(p.patch_id).second)
            throw ValidationError("duplicate patch_id " + p.patch_id + " within epoch");
    }
    if (ids_t1 != ids_t2)
        throw ValidationError("patch ids differ between epochs (each cell needs both t1 and t2)");

    // Partition property: every patch belongs to exactly one census unit.
    std::set<std::string> unit_ids;
    std::map<std::string, std::string> owner;
    for (const auto& u : units) {
        if (u.patch_ids.empty())
            throw ValidationError("census unit " + u.unit_id + " has no patches");
        if (!unit_ids.insert(u.unit_id).second)
            throw ValidationError("duplicate unit_id " + u.unit_id);
        if (!(u.pop_t1 >= 0.0) || !(u.pop_t2 >= 0.0))
            throw ValidationError("census unit " + u.unit_id + ": pop_t1/pop_t2 must be >= 0");
        for (const auto& pid : u.patch_ids) {
            if (!ids_t1.count(pid))
                throw ValidationError("census unit " + u.unit_id + " references unknown patch " + pid);
            const auto [it, inserted] = owner.emplace(pid, u.unit_id);
            if (!inserted)
                throw ValidationError("patch " + pid + " assigned to both " + it->second + " and " +
                                      u.unit_id);
        }
    }
    if (owner.size() != ids_t1.size())
        throw ValidationError("partition violated: " + std::to_string(ids_t1.size() - owner.size()) +
                              " patches belong to no census unit");

    for (const auto& [pid, entry] : oracle) {
        if (!ids_t1.count(pid)) throw ValidationError("oracle references unknown patch " + pid);
        if (entry.built_fraction_t1 < 0.0 || entry.built_fraction_t1 > 1.0 ||
            entry.built_fraction_t2 < 0.0 || entry.built_fraction_t2 > 1.0)
            throw ValidationError("oracle built_fraction outside [0,1] for patch " + pid);
        if (entry.pop_t1 < 0.0 || entry.pop_t2 < 0.0)
            throw ValidationError("oracle population negative for patch " + pid);
    }
}

BitemporalSample bitemporal_sample(const Dataset& dataset, const std::string& patch_id) {
    BitemporalSample s;
    s.x_t1 = &dataset.patch(patch_id, Epoch::T1);
    s.x_t2 = &dataset.patch(patch_id, Epoch::T2);
    if (s.x_t1->grid_row != s.x_t2->grid_row || s.x_t1->grid_col != s.x_t2->grid_col)
        throw ValidationError("bitemporal patches disagree on grid position: " + patch_id);
    return s;
}

// ---------------------------------------------------------------------------
// Manifest + tiles
// ---------------------------------------------------------------------------
namespace {

std::string tile_name(const std::string& patch_id, Epoch e) {
    return patch_id + "_" + epoch_tag(e) + ".raw";
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key))
            throw ValidationError("unknown key \"" + key + "\" in " + ctx);
    }
}

}  // namespace

Dataset load_dataset(const fs::path& root, const std::string& manifest_name) {
    const fs::path manifest_path = root / manifest_name;
    if (!fs::exists(manifest_path))
        throw IoError("manifest not found: " + manifest_path.string());
    json m;
    try {
        m = json::parse(read_file_text(manifest_path));
    } catch (const json::exception& e) {
        throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
    }
    check_keys(m, {"format_version", "patch_size", "grid_rows", "grid_cols", "patches", "units",
                   "oracle", "checksums"},
               "manifest");

    Dataset ds;
    ds.patch_size = m.at("patch_size").get<int>();
    ds.grid_rows = m.at("grid_rows").get<int>();
    ds.grid_cols = m.at("grid_cols").get<int>();
    if (ds.patch_size <= 0) throw ValidationError("manifest patch_size must be positive");

    struct Entry {
        std::string id;
        int row, col;
    };
    std::vector<Entry> entries;
    for (const auto& jp : m.at("patches")) {
        check_keys(jp, {"id", "row", "col"}, "manifest patch entry");
        entries.push_back({jp.at("id").get<std::string>(), jp.at("row").get<int>(),
                           jp.at("col").get<int>()});
    }

    std::map<std::string, std::string> checksums;
    if (m.contains("checksums"))
        checksums = m.at("checksums").get<std::map<std::string, std::string>>();

    const std::size_t pixel_count = static_cast<std::size_t>(ds.patch_size) * ds.patch_size;
    ds.patches.resize(entries.size() * 2);
    // Tiles are independent; loading may parallelize. Slots are preassigned so
    // the resulting dataset does not depend on load order.
    std::vector<std::string> load_errors(entries.size() * 2);
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(entries.size() * 2); ++idx) {
        const auto& e = entries[static_cast<std::size_t>(idx) / 2];
        const Epoch epoch = idx % 2 == 0 ? Epoch::T1 : Epoch::T2;
        try {
            const std::string name = tile_name(e.id, epoch);
            const fs::path tile_path = root / name;
            if (!fs::exists(tile_path))
                throw IoError("missing tile file for patch " + e.id + ": " + name);
            const auto cs = checksums.find(name);
            if (cs != checksums.end()) {
                const std::string got = Sha256::hash_file_hex(tile_path);
                if (got != cs->second)
                    throw ValidationError("checksum mismatch for " + name + ": manifest " +
                                          cs->second + ", file " + got);
            }
            RasterPatch p;
            p.patch_id = e.id;
            p.grid_row = e.row;
            p.grid_col = e.col;
            p.epoch = epoch;
            p.size = ds.patch_size;
            p.bands = read_f32_file(tile_path, 4 * pixel_count);
            p.nodata.assign(pixel_count, 0);
            ds.patches[static_cast<std::size_t>(idx)] = std::move(p);
        } catch (const std::exception& ex) {
            load_errors[static_cast<std::size_t>(idx)] = ex.what();
        }
    }
    for (const auto& err : load_errors)
        if (!err.empty()) throw ValidationError(err);

    for (const auto& ju : m.at("units")) {
        check_keys(ju, {"unit_id", "patch_ids", "pop_t1", "pop_t2"}, "manifest unit entry");
        CensusUnit u;
        u.unit_id = ju.at("unit_id").get<std::string>();
        u.patch_ids = ju.at("patch_ids").get<std::vector<std::string>>();
        u.pop_t1 = ju.at("pop_t1").get<double>();
        u.pop_t2 = ju.at("pop_t2").get<double>();
        ds.units.push_back(std::move(u));
    }

    if (m.contains("oracle")) {
        const auto& jo = m.at("oracle");
        check_keys(jo, {"patches"}, "manifest oracle block");
        for (const auto& jp : jo.at("patches")) {
            check_keys(jp, {"id", "built_fraction_t1", "built_fraction_t2", "pop_t1", "pop_t2"},
                       "oracle patch entry");
            OracleEntry e;
            e.built_fraction_t1 = jp.at("built_fraction_t1").get<double>();
            e.built_fraction_t2 = jp.at("built_fraction_t2").get<double>();
            e.pop_t1 = jp.at("pop_t1").get<double>();
            e.pop_t2 = jp.at("pop_t2").get<double>();
            ds.oracle[jp.at("id").get<std::string>()] = e;
        }
    }

    ds.finalize();
    ds.validate();
    return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& root, bool with_checksums,
                   const std::string& manifest_name) {
    dataset.validate();
    fs::create_directories(root);

    json manifest;
    manifest["format_version"] = 1;
    manifest["patch_size"] = dataset.patch_size;
    manifest["grid_rows"] = dataset.grid_rows;
    manifest["grid_cols"] = dataset.grid_cols;

    // One entry per cell (epochs share id/row/col).
    json jpatches = json::array();
    std::map<std::string, std::string> checksums;
    for (const auto& p : dataset.patches) {
        const std::string name = tile_name(p.patch_id, p.epoch);
        write_f32_file(root / name, p.bands.data(), p.bands.size());
        if (with_checksums)
            checksums[name] = Sha256::hash_hex(p.bands.data(), p.bands.size() * sizeof(float));
        if (p.epoch == Epoch::T1) {
            json jp;
            jp["id"] = p.patch_id;
            jp["row"] = p.grid_row;
            jp["col"] = p.grid_col;
            jpatches.push_back(jp);
        }
    }
    manifest["patches"] = jpatches;

    json junits = json::array();
    for (const auto& u : dataset.units) {
        json ju;
        ju["unit_id"] = u.unit_id;
        ju["patch_ids"] = u.patch_ids;
        ju["pop_t1"] = u.pop_t1;
        ju["pop_t2"] = u.pop_t2;
        junits.push_back(ju);
    }
    manifest["units"] = junits;

    if (dataset.has_oracle()) {
        json jo = json::array();
        for (const auto& [pid, e] : dataset.oracle) {
            json jp;
            jp["id"] = pid;
            jp["built_fraction_t1"] = e.built_fraction_t1;
            jp["built_fraction_t2"] = e.built_fraction_t2;
            jp["pop_t1"] = e.pop_t1;
            jp["pop_t2"] = e.pop_t2;
            jo.push_back(jp);
        }
        manifest["oracle"] = {{"patches", jo}};
    }

    if (with_checksums) manifest["checksums"] = checksums;
    write_file_text(root / manifest_name, manifest.dump(2) + "\n");
}

DatasetSplit split_units(const std::vector<CensusUnit>& units, std::uint64_t seed) {
    if (units.size() < 5)
        throw ValidationError("split requires at least 5 census units, got " +
                              std::to_string(units.size()));
    std::vector<std::string> ids;
    ids.reserve(units.size());
    for (const auto& u : units) ids.push_back(u.unit_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "split"));
    rng.shuffle(ids);

    const std::size_t n = ids.size();
    const std::size_t n_val = n / 5;
    const std::size_t n_test = n / 5;
    const std::size_t n_train = n - n_val - n_test;  // remainder goes to train

    DatasetSplit split;
    split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                     ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

std::vector<const RasterPatch*> unit_patches(const Dataset& dataset, const std::string& unit_id,
                                             Epoch epoch) {
    const CensusUnit& u = dataset.unit(unit_id);
    std::vector<std::string> ids = u.patch_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<const RasterPatch*> out;
    out.reserve(ids.size());
    for (const auto& pid : ids) out.push_back(&dataset.patch(pid, epoch));
    return out;
}

}  // namespace popgrowth
