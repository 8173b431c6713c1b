#include <doctest.h>

#include <map>
#include <set>

#include "popgrowth/synthcity.hpp"
#include "test_util.hpp"

using namespace popgrowth;
using test::TempDir;

TEST_CASE("zero built fraction and zero noise give an empty, static city") {
    SynthConfig c;
    c.seed = 5;
    c.grid_rows = 4;
    c.grid_cols = 4;
    c.n_units = 5;
    c.patch_size = 8;
    c.built_amplitude = 0.0;
    c.growth_fraction = 0.0;
    c.pop_noise_sigma = 0.0;
    c.image_noise_sigma = 0.0;
    const Dataset ds = generate_city(c);
    for (const auto& [pid, e] : ds.oracle) {
        CHECK(e.built_fraction_t1 == 0.0);
        CHECK(e.built_fraction_t2 == 0.0);
        CHECK(e.pop_t1 == 0.0);
        CHECK(e.pop_t2 == 0.0);
    }
    for (const auto& u : ds.units) {
        CHECK(u.pop_t1 == 0.0);
        CHECK(u.pop_t2 == 0.0);
        CHECK(u.growth() == 0.0);
        CHECK(oracle_growth(ds, u.unit_id) == 0.0);
    }
}

TEST_CASE("one patch at built 0.5 -> 1.0 with kappa 150 gives 75 -> 150 people") {
    SynthConfig c;
    c.seed = 1;
    c.grid_rows = 1;
    c.grid_cols = 1;
    c.n_units = 1;
    c.patch_size = 8;
    c.pop_density_scale = 150.0;
    c.pop_noise_sigma = 0.0;
    c.image_noise_sigma = 0.0;
    c.fixed_built_t1 = 0.5;
    c.fixed_built_t2 = 1.0;
    const Dataset ds = generate_city(c);
    REQUIRE(ds.units.size() == 1);
    CHECK(ds.units[0].pop_t1 == 75.0);
    CHECK(ds.units[0].pop_t2 == 150.0);
    CHECK(ds.units[0].growth() == 75.0);
    CHECK(oracle_growth(ds, ds.units[0].unit_id) == 75.0);
}

TEST_CASE("census counts equal oracle patch sums for every unit (default config)") {
    SynthConfig c;  // spec-default city: 20x20 grid, 160 units, seed 42
    const Dataset ds = generate_city(c);
    REQUIRE(ds.units.size() == 160);
    REQUIRE(ds.patches.size() == 2 * 400);
    for (const auto& u : ds.units) {
        // brute-force re-summation over the manifest oracle
        long double s1 = 0.0, s2 = 0.0;
        auto ids = u.patch_ids;
        std::sort(ids.begin(), ids.end());
        for (const auto& pid : ids) {
            s1 += ds.oracle_entry(pid).pop_t1;
            s2 += ds.oracle_entry(pid).pop_t2;
        }
        CHECK(u.pop_t1 == doctest::Approx(static_cast<double>(s1)).epsilon(1e-12));
        CHECK(u.pop_t2 == doctest::Approx(static_cast<double>(s2)).epsilon(1e-12));
        CHECK(oracle_growth(ds, u.unit_id) == u.growth());  // exact
    }
}

TEST_CASE("generated partition is contiguous and covers the grid") {
    const Dataset ds = generate_city(test::tiny_city_config());
    std::map<std::string, std::string> owner;
    for (const auto& u : ds.units)
        for (const auto& pid : u.patch_ids) {
            CHECK(owner.emplace(pid, u.unit_id).second);
        }
    CHECK(owner.size() == 36);

    // contiguity: patches of one unit form a 4-connected component
    for (const auto& u : ds.units) {
        std::set<std::pair<int, int>> cells;
        for (const auto& pid : u.patch_ids) {
            const RasterPatch& p = ds.patch(pid, Epoch::T1);
            cells.insert({p.grid_row, p.grid_col});
        }
        std::set<std::pair<int, int>> seen;
        std::vector<std::pair<int, int>> frontier = {*cells.begin()};
        seen.insert(frontier[0]);
        while (!frontier.empty()) {
            const auto [r, cpos] = frontier.back();
            frontier.pop_back();
            for (const auto& [nr, nc] : {std::pair{r - 1, cpos}, {r + 1, cpos}, {r, cpos - 1},
                                         {r, cpos + 1}}) {
                if (cells.count({nr, nc}) && !seen.count({nr, nc})) {
                    seen.insert({nr, nc});
                    frontier.push_back({nr, nc});
                }
            }
        }
        CHECK(seen.size() == cells.size());
    }
}

TEST_CASE("same config gives a bit-identical dataset directory") {
    const SynthConfig c = test::tiny_city_config();
    TempDir a("synth_det_a"), b("synth_det_b");
    write_dataset(generate_city(c), a.path);
    write_dataset(generate_city(c), b.path);
    std::size_t files = 0;
    for (const auto& entry : fs::directory_iterator(a.path)) {
        ++files;
        const auto rel = entry.path().filename();
        CHECK(read_file_bytes(entry.path()) == read_file_bytes(b.path / rel));
    }
    CHECK(files == 2 * 36 + 1);  // tiles + manifest
}

TEST_CASE("population is strictly increasing in built fraction when noise is zero") {
    SynthConfig c = test::tiny_city_config();
    c.pop_noise_sigma = 0.0;
    const Dataset ds = generate_city(c);
    std::vector<std::pair<double, double>> bf_pop;
    for (const auto& [pid, e] : ds.oracle) bf_pop.push_back({e.built_fraction_t1, e.pop_t1});
    std::sort(bf_pop.begin(), bf_pop.end());
    for (std::size_t i = 1; i < bf_pop.size(); ++i) {
        if (bf_pop[i].first > bf_pop[i - 1].first)
            CHECK(bf_pop[i].second > bf_pop[i - 1].second);
        else
            CHECK(bf_pop[i].second == bf_pop[i - 1].second);
    }
}

TEST_CASE("decline switch produces units with negative growth") {
    SynthConfig c = test::tiny_city_config(11);
    c.growth_fraction = 0.25;
    c.decline_fraction = 0.25;
    c.pop_noise_sigma = 0.0;
    const Dataset ds = generate_city(c);
    int negative = 0, positive = 0;
    for (const auto& u : ds.units) {
        if (u.growth() < -1e-9) ++negative;
        if (u.growth() > 1e-9) ++positive;
    }
    CHECK(negative >= 1);
    CHECK(positive >= 1);
}

TEST_CASE("infeasible configs are rejected naming the field") {
    SynthConfig c;
    c.grid_rows = 3;
    c.grid_cols = 3;
    c.n_units = 10;
    try {
        generate_city(c);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("n_units") != std::string::npos);
    }

    CHECK_THROWS_AS(oracle_growth(Dataset{}, "u"), ValidationError);
}

TEST_CASE("synth config JSON round-trip is strict about keys") {
    SynthConfig c = test::tiny_city_config();
    c.fixed_built_t1 = 0.25;
    const std::string text = synth_config_to_json_text(c);
    const SynthConfig back = synth_config_from_json_text(text);
    CHECK(back.grid_rows == c.grid_rows);
    CHECK(back.fixed_built_t1.has_value());
    CHECK(*back.fixed_built_t1 == 0.25);
    CHECK_THROWS_AS(synth_config_from_json_text("{\"grid_rowz\": 3}"), ValidationError);
}
