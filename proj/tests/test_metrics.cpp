#include <doctest.h>

#include <cmath>

#include "popgrowth/metrics.hpp"
#include "test_util.hpp"

using namespace popgrowth;

namespace {

std::vector<PredictionRecord> recs(std::initializer_list<std::pair<double, double>> yp) {
    std::vector<PredictionRecord> out;
    int i = 0;
    for (const auto& [y, p] : yp) out.push_back({"r" + std::to_string(i++), y, p});
    return out;
}

// Independent brute-force oracle in extended precision.
struct BruteForce {
    long double rmse = 0, mae = 0, r2 = 0;
    explicit BruteForce(const std::vector<PredictionRecord>& records) {
        const auto n = static_cast<long double>(records.size());
        long double ss = 0, sa = 0, mean = 0;
        for (const auto& r : records) mean += r.y;
        mean /= n;
        long double res = 0, tot = 0;
        for (const auto& r : records) {
            ss += (static_cast<long double>(r.y) - r.p) * (static_cast<long double>(r.y) - r.p);
            sa += std::fabs(static_cast<long double>(r.y) - r.p);
            res += (static_cast<long double>(r.y) - r.p) * (static_cast<long double>(r.y) - r.p);
            tot += (static_cast<long double>(r.y) - mean) * (static_cast<long double>(r.y) - mean);
        }
        rmse = std::sqrt(ss / n);
        mae = sa / n;
        r2 = 1.0L - res / tot;
    }
};

}  // namespace

TEST_CASE("rmse hand values") {
    CHECK(rmse(recs({{1, 1}, {2, 2}, {5, 5}})) == 0.0);
    CHECK(rmse(recs({{0, 1}, {2, 1}})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(rmse(recs({{3, 0}})) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK_THROWS_AS(rmse({}), ValidationError);
}

TEST_CASE("mae hand values and mae <= rmse") {
    CHECK(mae(recs({{1, 1}, {4, 4}})) == 0.0);
    CHECK(mae(recs({{0, 1}, {2, 1}})) == doctest::Approx(1.0).epsilon(1e-12));
    const auto r = recs({{0, 0}, {4, 0}});
    CHECK(mae(r) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(rmse(r) == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));
    CHECK(mae(r) <= rmse(r));
    CHECK_THROWS_AS(mae({}), ValidationError);
}

TEST_CASE("r2 hand values and error cases") {
    CHECK(r2(recs({{0, 0}, {2, 2}, {7, 7}})) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r2(recs({{0, 1}, {2, 1}})) == doctest::Approx(0.0).epsilon(1e-12));
    // constant prediction at the mean gives exactly 0
    CHECK(r2(recs({{1, 2}, {3, 2}, {2, 2}})) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(r2(recs({{1, 1}})), ValidationError);            // n < 2
    CHECK_THROWS_AS(r2(recs({{2, 1}, {2, 3}})), ValidationError);    // constant y
    CHECK_THROWS_AS(r2(recs({{std::nan(""), 1}, {2, 3}})), ValidationError);
}

TEST_CASE("metrics match a brute-force oracle to 1e-9 relative on random sets") {
    Rng rng(271);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng.uniform_int(150);
        std::vector<PredictionRecord> records;
        for (std::size_t i = 0; i < n; ++i)
            records.push_back({"x" + std::to_string(i), 2000.0 * rng.uniform() - 1000.0,
                               2000.0 * rng.uniform() - 1000.0});
        const BruteForce oracle(records);
        CHECK(test::rel_err(rmse(records), static_cast<double>(oracle.rmse)) < 1e-9);
        CHECK(test::rel_err(mae(records), static_cast<double>(oracle.mae)) < 1e-9);
        CHECK(test::rel_err(r2(records), static_cast<double>(oracle.r2)) < 1e-9);
        CHECK(mae(records) <= rmse(records) + 1e-15);
    }
}

TEST_CASE("metric properties: permutation invariance and scale equivariance") {
    Rng rng(99);
    std::vector<PredictionRecord> records;
    for (int i = 0; i < 40; ++i)
        records.push_back({"p" + std::to_string(i), rng.normal(50, 20), rng.normal(50, 25)});

    auto shuffled = records;
    Rng shuffle_rng(123);
    shuffle_rng.shuffle(shuffled);
    CHECK(rmse(records) == doctest::Approx(rmse(shuffled)).epsilon(1e-12));
    CHECK(mae(records) == doctest::Approx(mae(shuffled)).epsilon(1e-12));
    CHECK(r2(records) == doctest::Approx(r2(shuffled)).epsilon(1e-12));

    for (const double c : {0.5, 3.0, 1234.5}) {
        auto scaled = records;
        for (auto& r : scaled) {
            r.y *= c;
            r.p *= c;
        }
        CHECK(test::rel_err(rmse(scaled), c * rmse(records)) < 1e-9);
        CHECK(test::rel_err(mae(scaled), c * mae(records)) < 1e-9);
        CHECK(test::rel_err(r2(scaled), r2(records)) < 1e-9);
    }
}

TEST_CASE("report round-trips through JSON with identical metric values") {
    Rng rng(5);
    std::vector<PredictionRecord> records;
    for (int i = 0; i < 12; ++i)
        records.push_back({"u" + std::to_string(i), rng.normal(100, 30), rng.normal(100, 30)});
    const EvaluationReport report = make_report(EvalLevel::Census, Quantity::Growth, records);

    const std::string text = report.to_json_text();
    const EvaluationReport loaded = EvaluationReport::from_json_text(text);
    CHECK(loaded.rmse_value() == report.rmse_value());
    CHECK(loaded.mae_value() == report.mae_value());
    CHECK(loaded.r2_value() == report.r2_value());
    CHECK(loaded.records.size() == report.records.size());
    CHECK(loaded.to_json_text() == text);

    // Tampered metrics are rejected.
    std::string bad = text;
    const auto pos = bad.find("\"rmse\":");
    bad.replace(pos, 8, "\"rmse\": 1e9, \"_x\":");
    CHECK_THROWS(EvaluationReport::from_json_text(bad));

    // zero-error predictor: rmse = mae = 0, r2 = 1
    auto perfect = records;
    for (auto& r : perfect) r.p = r.y;
    const auto perfect_report = make_report(EvalLevel::Grid, Quantity::PopulationT2, perfect);
    CHECK(perfect_report.rmse_value() == 0.0);
    CHECK(perfect_report.mae_value() == 0.0);
    CHECK(perfect_report.r2_value() == 1.0);
}
