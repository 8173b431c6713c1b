#pragma once

#include <string>
#include <vector>

#include "popgrowth/common.hpp"

namespace popgrowth {

enum class EvalLevel { Grid, Census };
enum class Quantity { PopulationT1, PopulationT2, Growth };

const char* level_tag(EvalLevel level);
const char* quantity_tag(Quantity q);
EvalLevel level_from_tag(const std::string& tag);
Quantity quantity_from_tag(const std::string& tag);

struct PredictionRecord {
    std::string id;  // patch or unit id
    double y = 0.0;  // true value
    double p = 0.0;  // predicted value
};

double rmse(const std::vector<PredictionRecord>& records);
double mae(const std::vector<PredictionRecord>& records);
// 1 - SS_res / SS_tot about the mean of y; requires n >= 2 and Var(y) > 0
// (constant y is a hard error, never NaN). May be negative.
double r2(const std::vector<PredictionRecord>& records);

struct EvaluationReport {
    EvalLevel level = EvalLevel::Grid;
    Quantity quantity = Quantity::PopulationT2;
    std::vector<PredictionRecord> records;

    std::size_t n() const { return records.size(); }
    double rmse_value() const { return rmse(records); }
    double mae_value() const { return mae(records); }
    double r2_value() const { return r2(records); }

    std::string to_json_text() const;
    // Recomputes the embedded metrics from the records and rejects the file
    // if they disagree beyond 1e-12.
    static EvaluationReport from_json_text(const std::string& text);

    void save(const fs::path& path) const;
    static EvaluationReport load(const fs::path& path);

    // Scatter-plot data: one "id,y,p" row per record.
    std::string to_csv_text() const;
};

EvaluationReport make_report(EvalLevel level, Quantity quantity,
                             std::vector<PredictionRecord> records);

}  // namespace popgrowth
