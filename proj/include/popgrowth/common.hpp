#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace popgrowth {

namespace fs = std::filesystem;

// Bad input: config, manifest, or data violates a documented contract.
// CLI maps this to exit code 1 (everything else unexpected -> 2).
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Deterministic RNG with explicit uniform/normal implementations so streams
// are stable across platforms and standard-library versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // xorshift64* — small, fast, well understood.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection sampling to avoid modulo bias.
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
        std::uint64_t x;
        do { x = next_u64(); } while (x > limit);
        return x % n;
    }

    // Standard normal via Box-Muller (no cached second value).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

// Derives an independent child seed from (seed, tag, indices). Used so that
// generation/training streams do not depend on evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                          std::uint64_t a = 0, std::uint64_t b = 0);

// ---------------------------------------------------------------------------
// SHA-256 (content hashes for checkpoints, manifests and run records).
// ---------------------------------------------------------------------------
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    std::array<std::uint8_t, 32> digest();  // finalizes; do not update() after
    std::string hex_digest();

    static std::string hash_hex(const void* data, std::size_t len);
    static std::string hash_file_hex(const fs::path& path);

private:
    void process_block(const std::uint8_t* block);
    std::array<std::uint32_t, 8> h_;
    std::array<std::uint8_t, 64> buffer_;
    std::size_t buffer_len_ = 0;
    std::uint64_t total_len_ = 0;
    bool finalized_ = false;
};

// ---------------------------------------------------------------------------
// File helpers. Raw tile IO assumes a little-endian host (static_assert'd).
// ---------------------------------------------------------------------------
std::vector<std::uint8_t> read_file_bytes(const fs::path& path);
std::string read_file_text(const fs::path& path);
void write_file_bytes(const fs::path& path, const void* data, std::size_t len);
void write_file_text(const fs::path& path, std::string_view text);

std::vector<float> read_f32_file(const fs::path& path, std::size_t expected_count);
void write_f32_file(const fs::path& path, const float* data, std::size_t count);

// Simple wall-clock stopwatch for run records.
double monotonic_seconds();

}  // namespace popgrowth
