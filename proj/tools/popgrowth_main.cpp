#include <iostream>

#include <CLI11.hpp>
#include <omp.h>

#include "popgrowth/compositing.hpp"
#include "popgrowth/experiment.hpp"
#include "popgrowth/plot.hpp"
#include "popgrowth/synthcity.hpp"

#include <json.hpp>

using namespace popgrowth;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool has_seed = false;
    bool serial_kernels = false;
    int threads = 0;
};

nn::ExecPolicy policy_of(const GlobalArgs& g) {
    if (g.threads > 0) omp_set_num_threads(g.threads);
    return g.serial_kernels ? nn::ExecPolicy::Serial : nn::ExecPolicy::Parallel;
}

ExperimentConfig load_experiment_config(const GlobalArgs& g) {
    ExperimentConfig config;
    if (!g.config_path.empty())
        config = experiment_config_from_json_text(read_file_text(g.config_path));
    if (g.has_seed) {
        config.seed = g.seed;
        config.pretrain.seed = derive_seed(g.seed, "pretrain");
        config.growth.seed = derive_seed(g.seed, "growth");
    }
    if (!g.out_dir.empty()) config.out_dir = g.out_dir;
    return config;
}

int cmd_synth(const GlobalArgs& g) {
    SynthConfig config;
    if (!g.config_path.empty())
        config = synth_config_from_json_text(read_file_text(g.config_path));
    if (g.has_seed) config.seed = g.seed;
    if (g.out_dir.empty()) throw ValidationError("synth needs --out DIR");
    config.validate();

    const Dataset dataset = generate_city(config);
    write_dataset(dataset, g.out_dir);

    json record;
    record["command"] = "synth";
    record["config"] = json::parse(synth_config_to_json_text(config));
    record["manifest_sha256"] = Sha256::hash_file_hex(fs::path(g.out_dir) / "manifest.json");
    write_file_text(fs::path(g.out_dir) / "synth_record.json", record.dump(2) + "\n");

    std::cout << "wrote dataset: " << g.out_dir << " (" << dataset.patches.size() / 2
              << " cells, " << dataset.units.size() << " units)\n";
    return 0;
}

int cmd_composite(const GlobalArgs& g, const std::string& stack_dir, double threshold) {
    if (stack_dir.empty()) throw ValidationError("composite needs --stack DIR");
    if (g.out_dir.empty()) throw ValidationError("composite needs --out DIR");
    composite_stack_dir(stack_dir, g.out_dir, threshold);

    json record;
    record["command"] = "composite";
    record["stack_dir"] = stack_dir;
    record["cloud_threshold"] = threshold;
    record["stack_manifest_sha256"] =
        Sha256::hash_file_hex(fs::path(stack_dir) / "stack_manifest.json");
    record["manifest_sha256"] = Sha256::hash_file_hex(fs::path(g.out_dir) / "manifest.json");
    write_file_text(fs::path(g.out_dir) / "composite_record.json", record.dump(2) + "\n");

    std::cout << "wrote composited dataset: " << g.out_dir << "\n";
    return 0;
}

int cmd_plot(const std::string& report_path, const std::string& map_path,
             const std::string& out_path) {
    if (out_path.empty()) throw ValidationError("plot needs --out FILE");
    if (report_path.empty() == map_path.empty())
        throw ValidationError("plot needs exactly one of --report or --map");
    if (!report_path.empty()) {
        const EvaluationReport report = EvaluationReport::load(report_path);
        write_scatter_svg(report, out_path);
        std::cout << "wrote scatter: " << out_path << "\n";
    } else {
        const auto cells = read_growth_map_cells(map_path);
        write_growth_map_png(cells, out_path);
        std::cout << "wrote map image: " << out_path << "\n";
    }
    return 0;
}

void print_report_summaries(const PipelinePaths& paths) {
    for (const auto& p : paths.reports) {
        const EvaluationReport r = EvaluationReport::load(p);
        std::cout << p.filename().string() << ": n=" << r.n() << " RMSE=" << r.rmse_value()
                  << " MAE=" << r.mae_value() << " R2=" << r.r2_value() << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"population growth mapping from bi-temporal 4-band patches"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs g;
    app.add_option("--config", g.config_path, "JSON config file (experiment or synth)");
    app.add_option("--out", g.out_dir, "output directory")->envname("POPGROWTH_OUT");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed override");
    app.add_flag("--serial-kernels", g.serial_kernels, "run kernels without OpenMP");
    app.add_option("--threads", g.threads, "OpenMP thread count");

    auto* synth = app.add_subcommand("synth", "generate a synthetic bi-temporal city dataset");
    auto* composite = app.add_subcommand("composite",
                                         "cloud-mask and median-composite a scene-stack directory");
    std::string stack_dir;
    double threshold = 0.5;
    composite->add_option("--stack", stack_dir, "scene stack directory");
    composite->add_option("--threshold", threshold, "cloud probability threshold (default 0.5)");

    auto* pretrain = app.add_subcommand("pretrain", "grid-level population pretraining");
    auto* train_growth = app.add_subcommand("train-growth",
                                            "census-level Siamese growth training");
    auto* eval = app.add_subcommand("eval", "evaluate checkpoints and emit reports");
    auto* compare = app.add_subcommand("compare-pcc",
                                       "compare the Siamese method against the PCC baseline");
    auto* pipeline = app.add_subcommand("pipeline",
                                        "pretrain, train growth, evaluate, emit reports");

    auto* plot = app.add_subcommand("plot", "render scatter/map images from report files");
    std::string report_path, map_path, plot_out;
    plot->add_option("--report", report_path, "evaluation report JSON");
    plot->add_option("--map", map_path, "growth map NDJSON");
    plot->add_option("--out", plot_out, "output image path (.svg for reports, .png for maps)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    g.has_seed = seed_opt->count() > 0;

    try {
        const nn::ExecPolicy policy = policy_of(g);
        if (synth->parsed()) return cmd_synth(g);
        if (composite->parsed()) return cmd_composite(g, stack_dir, threshold);
        if (plot->parsed()) return cmd_plot(report_path, map_path, plot_out);

        const ExperimentConfig config = load_experiment_config(g);
        PipelinePaths paths;
        if (pretrain->parsed()) {
            paths = run_pretrain_stage(config, policy);
            std::cout << "pretrain checkpoint: " << paths.pretrain_checkpoint.string() << "\n";
        } else if (train_growth->parsed()) {
            paths = run_growth_stage(config, policy);
            std::cout << "growth checkpoint: " << paths.growth_checkpoint.string() << "\n";
        } else if (eval->parsed()) {
            paths = run_eval_stage(config, policy);
            print_report_summaries(paths);
        } else if (compare->parsed()) {
            paths = run_compare_pcc(config, policy);
        } else if (pipeline->parsed()) {
            paths = run_pipeline(config, policy);
            print_report_summaries(paths);
            std::cout << "run record: " << paths.run_record.string() << "\n";
        }
        return 0;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime failure: " << e.what() << "\n";
        return 2;
    }
}
