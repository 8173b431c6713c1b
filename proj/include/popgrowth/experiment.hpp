#pragma once

#include "popgrowth/growth.hpp"
#include "popgrowth/metrics.hpp"

namespace popgrowth {

// ---------------------------------------------------------------------------
// Evaluation (reports feed the scatter plots and growth maps)
// ---------------------------------------------------------------------------
EvaluationReport evaluate_grid_population(const PopulationModel& model, const Dataset& dataset,
                                          const std::vector<std::string>& unit_ids, Epoch epoch,
                                          nn::ExecPolicy policy);
EvaluationReport evaluate_census_population(const PopulationModel& model, const Dataset& dataset,
                                            const std::vector<std::string>& unit_ids, Epoch epoch,
                                            nn::ExecPolicy policy);
EvaluationReport evaluate_census_growth_siamese(const GrowthModel& model, const Dataset& dataset,
                                                const std::vector<std::string>& unit_ids,
                                                nn::ExecPolicy policy);
EvaluationReport evaluate_census_growth_pcc(const PopulationModel& model, const Dataset& dataset,
                                            const std::vector<std::string>& unit_ids,
                                            nn::ExecPolicy policy);

// ---------------------------------------------------------------------------
// Experiment configuration (single strict-schema JSON file)
// ---------------------------------------------------------------------------
struct ExperimentConfig {
    fs::path dataset_dir;
    fs::path out_dir = "out";
    std::uint64_t seed = 42;
    double width = 0.25;
    FeatureCombine combine = FeatureCombine::Difference;
    TrainConfig pretrain;
    TrainConfig growth;
    bool growth_reuse_pretrain_hyperparams = false;
    bool growth_cache_features = true;
    bool run_growth = true;
    bool emit_scatter = true;
    bool emit_map = true;

    ExperimentConfig();
    void validate() const;
};

ExperimentConfig experiment_config_from_json_text(const std::string& text);
std::string experiment_config_to_json_text(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Pipeline: pretrain -> train-growth -> evaluate -> emit. Any stage failure
// aborts with the stage name; partial outputs are retained on disk.
// ---------------------------------------------------------------------------
struct PipelinePaths {
    fs::path pretrain_checkpoint, growth_checkpoint;
    fs::path pretrain_log, growth_log;
    std::vector<fs::path> reports;
    std::vector<fs::path> scatter;
    fs::path map_file;
    fs::path run_record;
};

PipelinePaths run_pipeline(const ExperimentConfig& config,
                           nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// Individual subcommand entry points (each leaves a run record).
PipelinePaths run_pretrain_stage(const ExperimentConfig& config, nn::ExecPolicy policy);
PipelinePaths run_growth_stage(const ExperimentConfig& config, nn::ExecPolicy policy);
PipelinePaths run_eval_stage(const ExperimentConfig& config, nn::ExecPolicy policy);
// Prints the PCC-vs-proposed comparison to stdout and writes both reports.
PipelinePaths run_compare_pcc(const ExperimentConfig& config, nn::ExecPolicy policy);

}  // namespace popgrowth
