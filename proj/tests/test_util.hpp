#pragma once

#include <functional>
#include <string>

#include <unistd.h>

#include "popgrowth/common.hpp"
#include "popgrowth/synthcity.hpp"

namespace popgrowth::test {

// Unique scratch directory under the build tree, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("popgrowth_test_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Small city used by training tests: 6x6 grid, 12 units, lighter noise.
inline SynthConfig tiny_city_config(std::uint64_t seed = 7) {
    SynthConfig c;
    c.seed = seed;
    c.grid_rows = 6;
    c.grid_cols = 6;
    c.n_units = 12;
    c.patch_size = 10;
    c.pop_noise_sigma = 2.0;
    return c;
}

// Central finite difference of a scalar functional at coordinate theta[i].
inline double central_difference(std::function<double()> loss, double* theta, double eps) {
    const double saved = *theta;
    *theta = saved + eps;
    const double up = loss();
    *theta = saved - eps;
    const double down = loss();
    *theta = saved;
    return (up - down) / (2.0 * eps);
}

inline double rel_err(double a, double b) {
    const double denom = std::max({1.0, std::fabs(a), std::fabs(b)});
    return std::fabs(a - b) / denom;
}

}  // namespace popgrowth::test
