#include "popgrowth/metrics.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

using nlohmann::json;

namespace popgrowth {

const char* level_tag(EvalLevel level) { return level == EvalLevel::Grid ? "grid" : "census"; }

const char* quantity_tag(Quantity q) {
    switch (q) {
        case Quantity::PopulationT1: return "population_t1";
        case Quantity::PopulationT2: return "population_t2";
        case Quantity::Growth: return "growth";
    }
    return "?";
}

EvalLevel level_from_tag(const std::string& tag) {
    if (tag == "grid") return EvalLevel::Grid;
    if (tag == "census") return EvalLevel::Census;
    throw ValidationError("unknown evaluation level: " + tag);
}

Quantity quantity_from_tag(const std::string& tag) {
    if (tag == "population_t1") return Quantity::PopulationT1;
    if (tag == "population_t2") return Quantity::PopulationT2;
    if (tag == "growth") return Quantity::Growth;
    throw ValidationError("unknown quantity: " + tag);
}

namespace {

void require_finite(const std::vector<PredictionRecord>& records) {
    for (const auto& r : records)
        if (!std::isfinite(r.y) || !std::isfinite(r.p))
            throw ValidationError("non-finite value in prediction record " + r.id);
}

}  // namespace

double rmse(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw ValidationError("rmse: empty record set");
    require_finite(records);
    double ss = 0.0;
    for (const auto& r : records) {
        const double d = r.y - r.p;
        ss += d * d;
    }
    return std::sqrt(ss / static_cast<double>(records.size()));
}

double mae(const std::vector<PredictionRecord>& records) {
    if (records.empty()) throw ValidationError("mae: empty record set");
    require_finite(records);
    double sa = 0.0;
    for (const auto& r : records) sa += std::fabs(r.y - r.p);
    return sa / static_cast<double>(records.size());
}

double r2(const std::vector<PredictionRecord>& records) {
    if (records.size() < 2) throw ValidationError("r2: needs at least 2 records");
    require_finite(records);
    double mean_y = 0.0;
    for (const auto& r : records) mean_y += r.y;
    mean_y /= static_cast<double>(records.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (const auto& r : records) {
        const double dres = r.y - r.p;
        const double dtot = r.y - mean_y;
        ss_res += dres * dres;
        ss_tot += dtot * dtot;
    }
    if (ss_tot == 0.0)
        throw ValidationError("r2: undefined for constant true values (zero variance)");
    return 1.0 - ss_res / ss_tot;
}

EvaluationReport make_report(EvalLevel level, Quantity quantity,
                             std::vector<PredictionRecord> records) {
    EvaluationReport r;
    r.level = level;
    r.quantity = quantity;
    r.records = std::move(records);
    return r;
}

std::string EvaluationReport::to_json_text() const {
    json j;
    j["level"] = level_tag(level);
    j["quantity"] = quantity_tag(quantity);
    j["n"] = records.size();
    j["rmse"] = rmse_value();
    j["mae"] = mae_value();
    j["r2"] = r2_value();
    json recs = json::array();
    for (const auto& r : records) {
        json jr;
        jr["id"] = r.id;
        jr["y"] = r.y;
        jr["p"] = r.p;
        recs.push_back(jr);
    }
    j["records"] = recs;
    return j.dump(2) + "\n";
}

EvaluationReport EvaluationReport::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError("report is not valid JSON: " + std::string(e.what()));
    }
    EvaluationReport r;
    r.level = level_from_tag(j.at("level").get<std::string>());
    r.quantity = quantity_from_tag(j.at("quantity").get<std::string>());
    for (const auto& jr : j.at("records"))
        r.records.push_back({jr.at("id").get<std::string>(), jr.at("y").get<double>(),
                             jr.at("p").get<double>()});
    if (j.at("n").get<std::size_t>() != r.records.size())
        throw ValidationError("report n does not match record count");
    // Metrics must be recomputable from the records.
    const double tol = 1e-12;
    auto close = [tol](double a, double b) {
        return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
    };
    if (!close(j.at("rmse").get<double>(), r.rmse_value()) ||
        !close(j.at("mae").get<double>(), r.mae_value()) ||
        !close(j.at("r2").get<double>(), r.r2_value()))
        throw ValidationError("report metrics do not match records (corrupt report?)");
    return r;
}

void EvaluationReport::save(const fs::path& path) const { write_file_text(path, to_json_text()); }

EvaluationReport EvaluationReport::load(const fs::path& path) {
    return from_json_text(read_file_text(path));
}

std::string EvaluationReport::to_csv_text() const {
    std::ostringstream out;
    out << "id,y,p\n";
    out.precision(17);
    for (const auto& r : records) out << r.id << "," << r.y << "," << r.p << "\n";
    return out.str();
}

}  // namespace popgrowth
