#include "popgrowth/synthcity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

using nlohmann::json;

namespace popgrowth {

namespace {

std::string format_id(const char* prefix, int idx) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%04d", prefix, idx);
    return buf;
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

void check_sig(const std::array<double, 4>& sig, const char* name) {
    for (const double v : sig)
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError(std::string(name) + " values must lie in [0,1]");
}

// Smooth field: bilinear interpolation of a coarse seeded Gaussian lattice.
class SmoothField {
public:
    SmoothField(int rows, int cols, Rng& rng, int cell = 4)
        : cell_(cell), lat_cols_(cols / cell + 2) {
        const int lat_rows = rows / cell + 2;
        values_.resize(static_cast<std::size_t>(lat_rows) * lat_cols_);
        for (auto& v : values_) v = rng.normal();
    }

    double at(int r, int c) const {
        const double fr = static_cast<double>(r) / cell_;
        const double fc = static_cast<double>(c) / cell_;
        const int r0 = static_cast<int>(fr);
        const int c0 = static_cast<int>(fc);
        const double tr = fr - r0;
        const double tc = fc - c0;
        const double v00 = lattice(r0, c0), v01 = lattice(r0, c0 + 1);
        const double v10 = lattice(r0 + 1, c0), v11 = lattice(r0 + 1, c0 + 1);
        return (1 - tr) * ((1 - tc) * v00 + tc * v01) + tr * ((1 - tc) * v10 + tc * v11);
    }

private:
    double lattice(int r, int c) const {
        return values_[static_cast<std::size_t>(r) * lat_cols_ + c];
    }
    int cell_;
    int lat_cols_;
    std::vector<double> values_;
};

// Contiguous partition of the grid into n_units regions by seeded round-robin
// region growing from random centroids. Covers every cell.
std::vector<int> partition_grid(int rows, int cols, int n_units, Rng& rng) {
    const int cells = rows * cols;
    std::vector<int> assign(static_cast<std::size_t>(cells), -1);
    std::vector<int> order(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);

    std::vector<std::vector<int>> candidates(static_cast<std::size_t>(n_units));
    auto push_neighbors = [&](int unit, int cell) {
        const int r = cell / cols, c = cell % cols;
        const int nb[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
        for (const auto& [nr, nc] : nb) {
            if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
            const int ncell = nr * cols + nc;
            if (assign[static_cast<std::size_t>(ncell)] < 0)
                candidates[static_cast<std::size_t>(unit)].push_back(ncell);
        }
    };

    for (int u = 0; u < n_units; ++u) {
        const int cell = order[static_cast<std::size_t>(u)];
        assign[static_cast<std::size_t>(cell)] = u;
        push_neighbors(u, cell);
    }

    int assigned = n_units;
    while (assigned < cells) {
        for (int u = 0; u < n_units && assigned < cells; ++u) {
            auto& cand = candidates[static_cast<std::size_t>(u)];
            while (!cand.empty()) {
                const std::size_t j = static_cast<std::size_t>(rng.uniform_int(cand.size()));
                const int cell = cand[j];
                cand[j] = cand.back();
                cand.pop_back();
                if (assign[static_cast<std::size_t>(cell)] >= 0) continue;  // lazily dropped
                assign[static_cast<std::size_t>(cell)] = u;
                push_neighbors(u, cell);
                ++assigned;
                break;
            }
        }
    }
    return assign;
}

}  // namespace

void SynthConfig::validate() const {
    if (grid_rows < 1 || grid_cols < 1) throw ValidationError("grid_rows/grid_cols must be >= 1");
    if (patch_size < 1) throw ValidationError("patch_size must be >= 1");
    if (n_units < 1) throw ValidationError("n_units must be >= 1");
    if (n_units > grid_rows * grid_cols)
        throw ValidationError("n_units (" + std::to_string(n_units) +
                              ") exceeds grid cell count (" +
                              std::to_string(grid_rows * grid_cols) + ")");
    if (pop_density_scale < 0.0) throw ValidationError("pop_density_scale must be >= 0");
    if (image_noise_sigma < 0.0 || pop_noise_sigma < 0.0)
        throw ValidationError("noise sigmas must be >= 0");
    if (growth_fraction < 0.0 || growth_fraction > 1.0 || decline_fraction < 0.0 ||
        decline_fraction > 1.0 || growth_fraction + decline_fraction > 1.0)
        throw ValidationError("growth_fraction/decline_fraction must be in [0,1] and sum to <= 1");
    if (growth_patch_fraction < 0.0 || growth_patch_fraction > 1.0)
        throw ValidationError("growth_patch_fraction must be in [0,1]");
    if (growth_intensity < 0.0 || growth_intensity > 1.0)
        throw ValidationError("growth_intensity must be in [0,1]");
    if (built_amplitude < 0.0) throw ValidationError("built_amplitude must be >= 0");
    if (terrain_noise_amplitude < 0.0) throw ValidationError("terrain_noise_amplitude must be >= 0");
    if (edge_softness <= 0.0) throw ValidationError("edge_softness must be > 0");
    check_sig(built_signature, "built_signature");
    check_sig(vegetation_signature_t1, "vegetation_signature_t1");
    check_sig(vegetation_signature_t2, "vegetation_signature_t2");
    if (fixed_built_t1 && (*fixed_built_t1 < 0.0 || *fixed_built_t1 > 1.0))
        throw ValidationError("fixed_built_t1 must be in [0,1]");
    if (fixed_built_t2 && (*fixed_built_t2 < 0.0 || *fixed_built_t2 > 1.0))
        throw ValidationError("fixed_built_t2 must be in [0,1]");
}

namespace {

const std::set<std::string>& synth_keys() {
    static const std::set<std::string> keys = {
        "seed", "grid_rows", "grid_cols", "n_units", "patch_size", "pop_density_scale",
        "growth_fraction", "decline_fraction", "growth_patch_fraction", "growth_intensity",
        "image_noise_sigma", "pop_noise_sigma", "built_amplitude", "core_radius",
        "edge_softness", "terrain_noise_amplitude", "built_signature",
        "vegetation_signature_t1", "vegetation_signature_t2", "fixed_built_t1", "fixed_built_t2"};
    return keys;
}

}  // namespace

SynthConfig synth_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError("synth config is not valid JSON: " + std::string(e.what()));
    }
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!synth_keys().count(key))
            throw ValidationError("unknown key \"" + key + "\" in synth config");
    }
    SynthConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("grid_rows", c.grid_rows);
    get("grid_cols", c.grid_cols);
    get("n_units", c.n_units);
    get("patch_size", c.patch_size);
    get("pop_density_scale", c.pop_density_scale);
    get("growth_fraction", c.growth_fraction);
    get("decline_fraction", c.decline_fraction);
    get("growth_patch_fraction", c.growth_patch_fraction);
    get("growth_intensity", c.growth_intensity);
    get("image_noise_sigma", c.image_noise_sigma);
    get("pop_noise_sigma", c.pop_noise_sigma);
    get("built_amplitude", c.built_amplitude);
    get("core_radius", c.core_radius);
    get("edge_softness", c.edge_softness);
    get("terrain_noise_amplitude", c.terrain_noise_amplitude);
    get("built_signature", c.built_signature);
    get("vegetation_signature_t1", c.vegetation_signature_t1);
    get("vegetation_signature_t2", c.vegetation_signature_t2);
    if (j.contains("fixed_built_t1")) c.fixed_built_t1 = j.at("fixed_built_t1").get<double>();
    if (j.contains("fixed_built_t2")) c.fixed_built_t2 = j.at("fixed_built_t2").get<double>();
    c.validate();
    return c;
}

std::string synth_config_to_json_text(const SynthConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["grid_rows"] = c.grid_rows;
    j["grid_cols"] = c.grid_cols;
    j["n_units"] = c.n_units;
    j["patch_size"] = c.patch_size;
    j["pop_density_scale"] = c.pop_density_scale;
    j["growth_fraction"] = c.growth_fraction;
    j["decline_fraction"] = c.decline_fraction;
    j["growth_patch_fraction"] = c.growth_patch_fraction;
    j["growth_intensity"] = c.growth_intensity;
    j["image_noise_sigma"] = c.image_noise_sigma;
    j["pop_noise_sigma"] = c.pop_noise_sigma;
    j["built_amplitude"] = c.built_amplitude;
    j["core_radius"] = c.core_radius;
    j["edge_softness"] = c.edge_softness;
    j["terrain_noise_amplitude"] = c.terrain_noise_amplitude;
    j["built_signature"] = c.built_signature;
    j["vegetation_signature_t1"] = c.vegetation_signature_t1;
    j["vegetation_signature_t2"] = c.vegetation_signature_t2;
    if (c.fixed_built_t1) j["fixed_built_t1"] = *c.fixed_built_t1;
    if (c.fixed_built_t2) j["fixed_built_t2"] = *c.fixed_built_t2;
    return j.dump(2) + "\n";
}

Dataset generate_city(const SynthConfig& config) {
    config.validate();
    const int rows = config.grid_rows, cols = config.grid_cols;
    const int cells = rows * cols;
    const std::size_t px = static_cast<std::size_t>(config.patch_size) * config.patch_size;

    // (1) contiguous units from seeded region growing
    Rng rng_partition(derive_seed(config.seed, "partition"));
    const std::vector<int> assign = partition_grid(rows, cols, config.n_units, rng_partition);

    // (2) built fraction at t1: radial profile plus smooth correlated noise
    Rng rng_field(derive_seed(config.seed, "field"));
    const SmoothField noise_field(rows, cols, rng_field);
    std::vector<double> built_t1(static_cast<std::size_t>(cells));
    for (int cell = 0; cell < cells; ++cell) {
        const int r = cell / cols, c = cell % cols;
        const double dr = (r + 0.5) / rows - 0.5;
        const double dc = (c + 0.5) / cols - 0.5;
        const double d = std::sqrt(dr * dr + dc * dc) / 0.5;
        const double radial = 1.0 / (1.0 + std::exp((d - config.core_radius) / config.edge_softness));
        const double noise = config.terrain_noise_amplitude * noise_field.at(r, c);
        built_t1[static_cast<std::size_t>(cell)] =
            clamp01(config.built_amplitude * clamp01(radial + noise));
    }
    if (config.fixed_built_t1)
        std::fill(built_t1.begin(), built_t1.end(), *config.fixed_built_t1);

    // (3) growth units: push selected patches toward 1; decline units shrink
    std::vector<double> built_t2 = built_t1;
    Rng rng_growth(derive_seed(config.seed, "growth"));
    if (config.fixed_built_t2) {
        std::fill(built_t2.begin(), built_t2.end(), *config.fixed_built_t2);
    } else {
        std::vector<std::vector<int>> unit_cells(static_cast<std::size_t>(config.n_units));
        for (int cell = 0; cell < cells; ++cell)
            unit_cells[static_cast<std::size_t>(assign[static_cast<std::size_t>(cell)])]
                .push_back(cell);

        std::vector<int> unit_order(static_cast<std::size_t>(config.n_units));
        for (int u = 0; u < config.n_units; ++u) unit_order[static_cast<std::size_t>(u)] = u;
        rng_growth.shuffle(unit_order);
        const int n_grow = static_cast<int>(std::llround(config.growth_fraction * config.n_units));
        const int n_decline =
            static_cast<int>(std::llround(config.decline_fraction * config.n_units));

        for (int pos = 0; pos < n_grow + n_decline && pos < config.n_units; ++pos) {
            const bool grow = pos < n_grow;
            auto cells_of_unit = unit_cells[static_cast<std::size_t>(unit_order[static_cast<std::size_t>(pos)])];
            std::sort(cells_of_unit.begin(), cells_of_unit.end());
            const int k = std::max<int>(
                1, static_cast<int>(std::ceil(config.growth_patch_fraction *
                                              static_cast<double>(cells_of_unit.size()))));
            rng_growth.shuffle(cells_of_unit);
            for (int i = 0; i < k; ++i) {
                const auto cell = static_cast<std::size_t>(cells_of_unit[static_cast<std::size_t>(i)]);
                const double step = config.growth_intensity * (0.85 + 0.15 * rng_growth.uniform());
                if (grow)
                    built_t2[cell] = clamp01(built_t1[cell] + step * (1.0 - built_t1[cell]));
                else
                    built_t2[cell] = clamp01(built_t1[cell] * (1.0 - step));
            }
        }
    }

    // (4) populations: persistent per-patch density deviation, shared by both
    // epochs, so unit growth labels stay exactly kappa * delta built fraction.
    Rng rng_pop(derive_seed(config.seed, "popnoise"));
    std::vector<double> pop_t1(static_cast<std::size_t>(cells)), pop_t2(static_cast<std::size_t>(cells));
    for (int cell = 0; cell < cells; ++cell) {
        const auto s = static_cast<std::size_t>(cell);
        const double nu = config.pop_noise_sigma * rng_pop.normal();
        pop_t1[s] = std::max(0.0, config.pop_density_scale * built_t1[s] + nu);
        pop_t2[s] = std::max(0.0, config.pop_density_scale * built_t2[s] + nu);
    }

    Dataset ds;
    ds.patch_size = config.patch_size;
    ds.grid_rows = rows;
    ds.grid_cols = cols;
    ds.patches.reserve(static_cast<std::size_t>(cells) * 2);

    // (5) render both epochs: persistent pixel field (buildings persist;
    // marginal distribution per epoch is Bernoulli(built_fraction)), epoch
    // vegetation signature, per-epoch texture noise.
    for (int cell = 0; cell < cells; ++cell) {
        const auto s = static_cast<std::size_t>(cell);
        const std::string pid = format_id("p_", cell);
        Rng rng_pixels(derive_seed(config.seed, "pixels", static_cast<std::uint64_t>(cell)));
        std::vector<double> u(px);
        for (auto& v : u) v = rng_pixels.uniform();

        for (const Epoch epoch : {Epoch::T1, Epoch::T2}) {
            const double bf = epoch == Epoch::T1 ? built_t1[s] : built_t2[s];
            const auto& veg_sig = epoch == Epoch::T1 ? config.vegetation_signature_t1
                                                     : config.vegetation_signature_t2;
            Rng rng_tex(derive_seed(config.seed, "texture", static_cast<std::uint64_t>(cell),
                                    epoch == Epoch::T1 ? 1 : 2));
            RasterPatch p;
            p.patch_id = pid;
            p.grid_row = cell / cols;
            p.grid_col = cell % cols;
            p.epoch = epoch;
            p.size = config.patch_size;
            p.bands.resize(4 * px);
            p.nodata.assign(px, 0);
            for (int b = 0; b < 4; ++b) {
                for (std::size_t j = 0; j < px; ++j) {
                    const bool built = u[j] < bf;
                    const double base = built ? config.built_signature[static_cast<std::size_t>(b)]
                                              : veg_sig[static_cast<std::size_t>(b)];
                    const double v = base + config.image_noise_sigma * rng_tex.normal();
                    p.bands[static_cast<std::size_t>(b) * px + j] = static_cast<float>(clamp01(v));
                }
            }
            ds.patches.push_back(std::move(p));
        }

        ds.oracle[pid] = OracleEntry{built_t1[s], built_t2[s], pop_t1[s], pop_t2[s]};
    }

    // (6) census counts = oracle sums per unit, in patch_id-sorted order
    std::vector<std::vector<std::string>> unit_pids(static_cast<std::size_t>(config.n_units));
    for (int cell = 0; cell < cells; ++cell)
        unit_pids[static_cast<std::size_t>(assign[static_cast<std::size_t>(cell)])].push_back(
            format_id("p_", cell));
    for (int uidx = 0; uidx < config.n_units; ++uidx) {
        CensusUnit u;
        u.unit_id = format_id("u_", uidx);
        u.patch_ids = unit_pids[static_cast<std::size_t>(uidx)];
        std::sort(u.patch_ids.begin(), u.patch_ids.end());
        double s1 = 0.0, s2 = 0.0;
        for (const auto& pid : u.patch_ids) {
            s1 += ds.oracle[pid].pop_t1;
            s2 += ds.oracle[pid].pop_t2;
        }
        u.pop_t1 = s1;
        u.pop_t2 = s2;
        ds.units.push_back(std::move(u));
    }

    ds.finalize();
    ds.validate();
    return ds;
}

double oracle_growth(const Dataset& dataset, const std::string& unit_id) {
    if (!dataset.has_oracle())
        throw ValidationError("dataset has no oracle block");
    const CensusUnit& u = dataset.unit(unit_id);
    std::vector<std::string> ids = u.patch_ids;
    std::sort(ids.begin(), ids.end());
    double s1 = 0.0, s2 = 0.0;
    for (const auto& pid : ids) {
        const auto& e = dataset.oracle_entry(pid);
        s1 += e.pop_t1;
        s2 += e.pop_t2;
    }
    return s2 - s1;
}

}  // namespace popgrowth
