#include "popgrowth/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

#include "popgrowth/serde.hpp"

using nlohmann::json;

namespace popgrowth {

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------
namespace {

void require_units(const std::vector<std::string>& unit_ids) {
    if (unit_ids.empty()) throw ValidationError("evaluation needs a non-empty unit set");
}

}  // namespace

EvaluationReport evaluate_grid_population(const PopulationModel& model, const Dataset& dataset,
                                          const std::vector<std::string>& unit_ids, Epoch epoch,
                                          nn::ExecPolicy policy) {
    require_units(unit_ids);
    if (!dataset.has_oracle())
        throw ValidationError("grid-level evaluation needs an oracle (patch-level truth)");
    std::vector<std::string> ids = unit_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<PredictionRecord> records;
    for (const auto& uid : ids) {
        const auto patches = unit_patches(dataset, uid, epoch);
        const auto preds = predict_population_batch(model, patches, policy);
        for (std::size_t i = 0; i < patches.size(); ++i) {
            const auto& e = dataset.oracle_entry(patches[i]->patch_id);
            records.push_back({patches[i]->patch_id,
                               epoch == Epoch::T1 ? e.pop_t1 : e.pop_t2, preds[i]});
        }
    }
    return make_report(EvalLevel::Grid,
                       epoch == Epoch::T1 ? Quantity::PopulationT1 : Quantity::PopulationT2,
                       std::move(records));
}

EvaluationReport evaluate_census_population(const PopulationModel& model, const Dataset& dataset,
                                            const std::vector<std::string>& unit_ids, Epoch epoch,
                                            nn::ExecPolicy policy) {
    require_units(unit_ids);
    std::vector<std::string> ids = unit_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<PredictionRecord> records;
    for (const auto& uid : ids) {
        const auto patches = unit_patches(dataset, uid, epoch);
        const auto preds = predict_population_batch(model, patches, policy);
        double sum = 0.0;
        for (const double p : preds) sum += p;
        records.push_back({uid, dataset.unit(uid).pop(epoch), sum});
    }
    return make_report(EvalLevel::Census,
                       epoch == Epoch::T1 ? Quantity::PopulationT1 : Quantity::PopulationT2,
                       std::move(records));
}

EvaluationReport evaluate_census_growth_siamese(const GrowthModel& model, const Dataset& dataset,
                                                const std::vector<std::string>& unit_ids,
                                                nn::ExecPolicy policy) {
    require_units(unit_ids);
    std::vector<std::string> ids = unit_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<PredictionRecord> records;
    for (const auto& uid : ids)
        records.push_back({uid, dataset.unit(uid).growth(),
                           predict_unit_growth(model, dataset, uid, policy)});
    return make_report(EvalLevel::Census, Quantity::Growth, std::move(records));
}

EvaluationReport evaluate_census_growth_pcc(const PopulationModel& model, const Dataset& dataset,
                                            const std::vector<std::string>& unit_ids,
                                            nn::ExecPolicy policy) {
    require_units(unit_ids);
    std::vector<std::string> ids = unit_ids;
    std::sort(ids.begin(), ids.end());
    std::vector<PredictionRecord> records;
    for (const auto& uid : ids)
        records.push_back({uid, dataset.unit(uid).growth(),
                           pcc_unit_growth(model, dataset, uid, policy)});
    return make_report(EvalLevel::Census, Quantity::Growth, std::move(records));
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
ExperimentConfig::ExperimentConfig() {
    // Reduced pretrain cap (desk-scale CPU budget); the growth stage trains
    // only the head on cached features, so epochs there are nearly free and
    // the cap is raised to let AdamW span the growth label scale.
    pretrain.max_epochs = 40;
    growth.max_epochs = 1200;
}

void ExperimentConfig::validate() const {
    if (dataset_dir.empty()) throw ValidationError("config: dataset path is required");
    if (out_dir.empty()) throw ValidationError("config: out_dir must not be empty");
    if (!(width > 0.0)) throw ValidationError("config: model width must be > 0");
    pretrain.validate();
    growth.validate();
}

ExperimentConfig experiment_config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError("experiment config is not valid JSON: " + std::string(e.what()));
    }
    require_only_keys(j, {"dataset", "out_dir", "seed", "model", "pretrain", "growth",
                          "evaluation", "pipeline"},
                      "experiment config");
    ExperimentConfig c;
    if (j.contains("dataset")) c.dataset_dir = j.at("dataset").get<std::string>();
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("model")) {
        const auto& jm = j.at("model");
        require_only_keys(jm, {"width", "feature_combine"}, "config model block");
        if (jm.contains("width")) c.width = jm.at("width").get<double>();
        if (jm.contains("feature_combine"))
            c.combine = feature_combine_from_tag(jm.at("feature_combine").get<std::string>());
    }
    if (j.contains("pretrain")) {
        json jp = j.at("pretrain");
        if (!jp.contains("max_epochs")) jp["max_epochs"] = c.pretrain.max_epochs;
        c.pretrain = train_config_from_json(jp, "config pretrain block");
    }
    if (j.contains("growth")) {
        json jg = j.at("growth");
        if (jg.is_object()) {
            if (jg.contains("reuse_pretrain_hyperparams")) {
                c.growth_reuse_pretrain_hyperparams =
                    jg.at("reuse_pretrain_hyperparams").get<bool>();
                jg.erase("reuse_pretrain_hyperparams");
            }
            if (jg.contains("cache_features")) {
                c.growth_cache_features = jg.at("cache_features").get<bool>();
                jg.erase("cache_features");
            }
        }
        if (!jg.contains("max_epochs")) jg["max_epochs"] = c.growth.max_epochs;
        c.growth = train_config_from_json(jg, "config growth block");
    }
    if (j.contains("evaluation")) {
        const auto& je = j.at("evaluation");
        require_only_keys(je, {"emit_scatter", "emit_map"}, "config evaluation block");
        if (je.contains("emit_scatter")) c.emit_scatter = je.at("emit_scatter").get<bool>();
        if (je.contains("emit_map")) c.emit_map = je.at("emit_map").get<bool>();
    }
    if (j.contains("pipeline")) {
        const auto& jp = j.at("pipeline");
        require_only_keys(jp, {"run_growth"}, "config pipeline block");
        if (jp.contains("run_growth")) c.run_growth = jp.at("run_growth").get<bool>();
    }
    // Stage seeds derive from the experiment seed unless set explicitly.
    if (!j.contains("pretrain") || !j.at("pretrain").contains("seed"))
        c.pretrain.seed = derive_seed(c.seed, "pretrain");
    if (!j.contains("growth") || !j.at("growth").contains("seed"))
        c.growth.seed = derive_seed(c.seed, "growth");
    c.validate();
    return c;
}

std::string experiment_config_to_json_text(const ExperimentConfig& c) {
    json j;
    j["dataset"] = c.dataset_dir.string();
    j["out_dir"] = c.out_dir.string();
    j["seed"] = c.seed;
    j["model"] = {{"width", c.width}, {"feature_combine", feature_combine_tag(c.combine)}};
    j["pretrain"] = train_config_to_json(c.pretrain);
    json jg = train_config_to_json(c.growth);
    jg["reuse_pretrain_hyperparams"] = c.growth_reuse_pretrain_hyperparams;
    jg["cache_features"] = c.growth_cache_features;
    j["growth"] = jg;
    j["evaluation"] = {{"emit_scatter", c.emit_scatter}, {"emit_map", c.emit_map}};
    j["pipeline"] = {{"run_growth", c.run_growth}};
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------
namespace {

template <typename F>
auto stage(const char* name, F&& fn) {
    try {
        return fn();
    } catch (const ValidationError& e) {
        throw ValidationError("stage " + std::string(name) + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError("stage " + std::string(name) + ": " + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error("stage " + std::string(name) + ": " + e.what());
    }
}

struct StageContext {
    ExperimentConfig config;
    Dataset dataset;
    DatasetSplit split;
    std::string manifest_hash;
    json timings = json::object();
};

StageContext load_context(const ExperimentConfig& config) {
    return stage("load", [&] {
        StageContext ctx{config, {}, {}, {}, json::object()};
        const double t0 = monotonic_seconds();
        ctx.dataset = load_dataset(config.dataset_dir);
        ctx.split = split_units(ctx.dataset.units, config.seed);
        ctx.manifest_hash = Sha256::hash_file_hex(config.dataset_dir / "manifest.json");
        ctx.timings["load"] = monotonic_seconds() - t0;
        return ctx;
    });
}

fs::path reports_dir(const ExperimentConfig& c) { return c.out_dir / "reports"; }
fs::path scatter_dir(const ExperimentConfig& c) { return c.out_dir / "scatter"; }
fs::path maps_dir(const ExperimentConfig& c) { return c.out_dir / "maps"; }
fs::path checkpoints_dir(const ExperimentConfig& c) { return c.out_dir / "checkpoints"; }
fs::path logs_dir(const ExperimentConfig& c) { return c.out_dir / "logs"; }
fs::path pretrain_ckpt_path(const ExperimentConfig& c) {
    return checkpoints_dir(c) / "pretrain.ckpt";
}
fs::path growth_ckpt_path(const ExperimentConfig& c) { return checkpoints_dir(c) / "growth.ckpt"; }

void write_run_record(const StageContext& ctx, const std::string& command,
                      const PipelinePaths& paths) {
    json j;
    j["command"] = command;
    j["config"] = json::parse(experiment_config_to_json_text(ctx.config));
    j["inputs"] = {{"dataset_dir", ctx.config.dataset_dir.string()},
                   {"dataset_manifest_sha256", ctx.manifest_hash}};
    json outputs;
    if (!paths.pretrain_checkpoint.empty()) {
        outputs["pretrain_checkpoint"] = paths.pretrain_checkpoint.string();
        outputs["pretrain_checkpoint_sha256"] = Sha256::hash_file_hex(paths.pretrain_checkpoint);
    }
    if (!paths.growth_checkpoint.empty()) {
        outputs["growth_checkpoint"] = paths.growth_checkpoint.string();
        outputs["growth_checkpoint_sha256"] = Sha256::hash_file_hex(paths.growth_checkpoint);
    }
    json jreports = json::array();
    for (const auto& p : paths.reports) jreports.push_back(p.string());
    outputs["reports"] = jreports;
    json jscatter = json::array();
    for (const auto& p : paths.scatter) jscatter.push_back(p.string());
    outputs["scatter"] = jscatter;
    if (!paths.map_file.empty()) outputs["map"] = paths.map_file.string();
    j["outputs"] = outputs;
    j["timings_seconds"] = ctx.timings;
    write_file_text(ctx.config.out_dir / "run_record.json", j.dump(2) + "\n");
}

PretrainResult pretrain_and_save(StageContext& ctx, PipelinePaths& paths,
                                 nn::ExecPolicy policy) {
    return stage("pretrain", [&] {
        const double t0 = monotonic_seconds();
        PretrainResult result = pretrain_grid(ctx.dataset, ctx.split, ctx.config.pretrain,
                                              ctx.config.width, policy);
        paths.pretrain_checkpoint = pretrain_ckpt_path(ctx.config);
        save_population_checkpoint(paths.pretrain_checkpoint, result);
        paths.pretrain_log = logs_dir(ctx.config) / "pretrain_search.json";
        write_file_text(paths.pretrain_log,
                        search_log_to_json_text(result.runs, result.winner_index));
        ctx.timings["pretrain"] = monotonic_seconds() - t0;
        return result;
    });
}

GrowthResult growth_and_save(StageContext& ctx, const PretrainResult& pretrain,
                             PipelinePaths& paths, nn::ExecPolicy policy) {
    return stage("train-growth", [&] {
        const double t0 = monotonic_seconds();
        TrainConfig growth_config = ctx.config.growth;
        if (ctx.config.growth_reuse_pretrain_hyperparams) {
            const auto& winner =
                pretrain.runs[static_cast<std::size_t>(pretrain.winner_index)];
            growth_config.learning_rates = {winner.learning_rate};
            growth_config.batch_sizes = {winner.batch_size};
        }
        GrowthTrainOptions options;
        options.combine = ctx.config.combine;
        options.cache_features = ctx.config.growth_cache_features;
        GrowthResult result = train_census_level(pretrain.model.encoder, ctx.dataset, ctx.split,
                                                 growth_config, options, policy);
        paths.growth_checkpoint = growth_ckpt_path(ctx.config);
        save_growth_checkpoint(paths.growth_checkpoint, result,
                               pretrain_ckpt_path(ctx.config));
        paths.growth_log = logs_dir(ctx.config) / "growth_search.json";
        write_file_text(paths.growth_log,
                        search_log_to_json_text(result.runs, result.winner_index));
        ctx.timings["train-growth"] = monotonic_seconds() - t0;
        return result;
    });
}

void emit_report(const StageContext& ctx, const EvaluationReport& report, const std::string& name,
                 PipelinePaths& paths) {
    const fs::path rp = reports_dir(ctx.config) / (name + ".json");
    report.save(rp);
    paths.reports.push_back(rp);
    if (ctx.config.emit_scatter) {
        const fs::path sp = scatter_dir(ctx.config) / (name + ".csv");
        write_file_text(sp, report.to_csv_text());
        paths.scatter.push_back(sp);
    }
}

void emit_growth_map(const StageContext& ctx, const GrowthModel& model, PipelinePaths& paths,
                     nn::ExecPolicy policy) {
    // Per grid cell the predicted patch growth; per unit D and delta Y.
    std::map<std::string, std::string> owner;
    for (const auto& u : ctx.dataset.units)
        for (const auto& pid : u.patch_ids) owner[pid] = u.unit_id;

    const std::vector<std::string> pids = ctx.dataset.patch_ids();
    const std::vector<double> growths = predict_patch_growth_batch(model, ctx.dataset, pids, policy);

    std::string out;
    for (std::size_t i = 0; i < pids.size(); ++i) {
        const RasterPatch& p = ctx.dataset.patch(pids[i], Epoch::T1);
        json line;
        line["grid_row"] = p.grid_row;
        line["grid_col"] = p.grid_col;
        line["unit_id"] = owner.at(pids[i]);
        line["value"] = growths[i];
        out += line.dump() + "\n";
    }
    for (const auto& u : ctx.dataset.units) {
        json line;
        line["unit_id"] = u.unit_id;
        line["d"] = predict_unit_growth(model, ctx.dataset, u.unit_id, policy);
        line["delta_y"] = u.growth();
        out += line.dump() + "\n";
    }
    paths.map_file = maps_dir(ctx.config) / "growth_map.ndjson";
    write_file_text(paths.map_file, out);
}

void evaluate_and_emit(StageContext& ctx, const PretrainResult& pretrain,
                       const GrowthResult* growth, PipelinePaths& paths, nn::ExecPolicy policy) {
    stage("evaluate", [&] {
        const double t0 = monotonic_seconds();
        const auto& test_units = ctx.split.test;
        emit_report(ctx,
                    evaluate_grid_population(pretrain.model, ctx.dataset, test_units, Epoch::T2,
                                             policy),
                    "grid_population_t2", paths);
        emit_report(ctx,
                    evaluate_census_population(pretrain.model, ctx.dataset, test_units, Epoch::T1,
                                               policy),
                    "census_population_t1", paths);
        emit_report(ctx,
                    evaluate_census_population(pretrain.model, ctx.dataset, test_units, Epoch::T2,
                                               policy),
                    "census_population_t2", paths);
        if (growth) {
            emit_report(ctx,
                        evaluate_census_growth_siamese(growth->model, ctx.dataset, test_units,
                                                       policy),
                        "census_growth_siamese", paths);
            emit_report(ctx,
                        evaluate_census_growth_pcc(pretrain.model, ctx.dataset, test_units, policy),
                        "census_growth_pcc", paths);
            if (ctx.config.emit_map) emit_growth_map(ctx, growth->model, paths, policy);
        }
        ctx.timings["evaluate"] = monotonic_seconds() - t0;
        return 0;
    });
}

}  // namespace

PipelinePaths run_pipeline(const ExperimentConfig& config, nn::ExecPolicy policy) {
    config.validate();
    const double t0 = monotonic_seconds();
    StageContext ctx = load_context(config);
    PipelinePaths paths;
    const PretrainResult pretrain = pretrain_and_save(ctx, paths, policy);
    std::optional<GrowthResult> growth;
    if (config.run_growth) growth.emplace(growth_and_save(ctx, pretrain, paths, policy));
    evaluate_and_emit(ctx, pretrain, growth ? &*growth : nullptr, paths, policy);
    ctx.timings["total"] = monotonic_seconds() - t0;
    paths.run_record = config.out_dir / "run_record.json";
    write_run_record(ctx, "pipeline", paths);
    return paths;
}

PipelinePaths run_pretrain_stage(const ExperimentConfig& config, nn::ExecPolicy policy) {
    config.validate();
    StageContext ctx = load_context(config);
    PipelinePaths paths;
    pretrain_and_save(ctx, paths, policy);
    paths.run_record = config.out_dir / "run_record.json";
    write_run_record(ctx, "pretrain", paths);
    return paths;
}

PipelinePaths run_growth_stage(const ExperimentConfig& config, nn::ExecPolicy policy) {
    config.validate();
    StageContext ctx = load_context(config);
    PipelinePaths paths;
    const fs::path ckpt = pretrain_ckpt_path(config);
    if (!fs::exists(ckpt))
        throw ValidationError("missing encoder checkpoint " + ckpt.string() +
                              " (run the pretrain subcommand first)");
    const PretrainResult pretrain = stage("load-checkpoint", [&] {
        return load_population_checkpoint(ckpt);
    });
    paths.pretrain_checkpoint = ckpt;
    growth_and_save(ctx, pretrain, paths, policy);
    paths.run_record = config.out_dir / "run_record.json";
    write_run_record(ctx, "train-growth", paths);
    return paths;
}

PipelinePaths run_eval_stage(const ExperimentConfig& config, nn::ExecPolicy policy) {
    config.validate();
    StageContext ctx = load_context(config);
    PipelinePaths paths;
    const fs::path pckpt = pretrain_ckpt_path(config);
    if (!fs::exists(pckpt))
        throw ValidationError("missing encoder checkpoint " + pckpt.string());
    const PretrainResult pretrain = load_population_checkpoint(pckpt);
    paths.pretrain_checkpoint = pckpt;
    std::optional<GrowthResult> growth;
    if (config.run_growth) {
        const fs::path gckpt = growth_ckpt_path(config);
        if (!fs::exists(gckpt))
            throw ValidationError("missing growth checkpoint " + gckpt.string());
        growth.emplace(load_growth_checkpoint(gckpt, pckpt));
        paths.growth_checkpoint = gckpt;
    }
    evaluate_and_emit(ctx, pretrain, growth ? &*growth : nullptr, paths, policy);
    paths.run_record = config.out_dir / "run_record.json";
    write_run_record(ctx, "eval", paths);
    return paths;
}

PipelinePaths run_compare_pcc(const ExperimentConfig& config, nn::ExecPolicy policy) {
    config.validate();
    StageContext ctx = load_context(config);
    PipelinePaths paths;
    const fs::path pckpt = pretrain_ckpt_path(config);
    const fs::path gckpt = growth_ckpt_path(config);
    if (!fs::exists(pckpt)) throw ValidationError("missing encoder checkpoint " + pckpt.string());
    if (!fs::exists(gckpt)) throw ValidationError("missing growth checkpoint " + gckpt.string());
    const PretrainResult pretrain = load_population_checkpoint(pckpt);
    const GrowthResult growth = load_growth_checkpoint(gckpt, pckpt);
    paths.pretrain_checkpoint = pckpt;
    paths.growth_checkpoint = gckpt;

    const auto proposed = evaluate_census_growth_siamese(growth.model, ctx.dataset, ctx.split.test,
                                                         policy);
    const auto pcc = evaluate_census_growth_pcc(pretrain.model, ctx.dataset, ctx.split.test,
                                                policy);
    emit_report(ctx, proposed, "census_growth_siamese", paths);
    emit_report(ctx, pcc, "census_growth_pcc", paths);

    std::cout << "census growth, test units (n=" << proposed.n() << ")\n"
              << "  proposed: RMSE " << proposed.rmse_value() << "  MAE " << proposed.mae_value()
              << "  R2 " << proposed.r2_value() << "\n"
              << "  PCC:      RMSE " << pcc.rmse_value() << "  MAE " << pcc.mae_value() << "  R2 "
              << pcc.r2_value() << "\n"
              << "  RMSE ratio (proposed / PCC): "
              << proposed.rmse_value() / pcc.rmse_value() << "\n";

    paths.run_record = config.out_dir / "run_record.json";
    write_run_record(ctx, "compare-pcc", paths);
    return paths;
}

}  // namespace popgrowth
