#include "popgrowth/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "popgrowth/checkpoint_io.hpp"
#include "popgrowth/metrics.hpp"
#include "popgrowth/serde.hpp"

using nlohmann::json;

namespace popgrowth {

// ---------------------------------------------------------------------------
// Checkpoint container + serde helpers (shared with the growth module)
// ---------------------------------------------------------------------------
void require_only_keys(const json& j, const std::set<std::string>& allowed,
                       const std::string& ctx) {
    if (!j.is_object()) throw ValidationError(ctx + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ValidationError("unknown key \"" + key + "\" in " + ctx);
    }
}

json train_config_to_json(const TrainConfig& c) {
    json j;
    j["learning_rates"] = c.learning_rates;
    j["batch_sizes"] = c.batch_sizes;
    j["max_epochs"] = c.max_epochs;
    j["patience"] = c.patience;
    j["weight_decay"] = c.weight_decay;
    j["seed"] = c.seed;
    return j;
}

TrainConfig train_config_from_json(const json& j, const std::string& ctx) {
    require_only_keys(j, {"learning_rates", "batch_sizes", "max_epochs", "patience",
                          "weight_decay", "seed"},
                      ctx);
    TrainConfig c;
    if (j.contains("learning_rates")) c.learning_rates = j.at("learning_rates").get<std::vector<double>>();
    if (j.contains("batch_sizes")) c.batch_sizes = j.at("batch_sizes").get<std::vector<int>>();
    if (j.contains("max_epochs")) c.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("patience")) c.patience = j.at("patience").get<int>();
    if (j.contains("weight_decay")) c.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

json search_run_log_to_json(const SearchRunLog& run) {
    json j;
    j["lr"] = run.learning_rate;
    j["batch_size"] = run.batch_size;
    j["diverged"] = run.diverged;
    j["best_epoch"] = run.best_epoch;
    j["best_val_metric"] = run.best_val_metric;
    j["stopped_epoch"] = run.stopped_epoch;
    json h = json::array();
    for (const auto& e : run.history)
        h.push_back({{"train_loss", e.train_loss}, {"val_metric", e.val_metric}});
    j["history"] = h;
    return j;
}

SearchRunLog search_run_log_from_json(const json& j) {
    SearchRunLog run;
    run.learning_rate = j.at("lr").get<double>();
    run.batch_size = j.at("batch_size").get<int>();
    run.diverged = j.at("diverged").get<bool>();
    run.best_epoch = j.at("best_epoch").get<int>();
    run.best_val_metric = j.at("best_val_metric").get<double>();
    run.stopped_epoch = j.at("stopped_epoch").get<int>();
    for (const auto& je : j.at("history"))
        run.history.push_back({je.at("train_loss").get<double>(), je.at("val_metric").get<double>()});
    return run;
}

void write_checkpoint(const fs::path& path, json header,
                      const std::vector<std::pair<std::string, const nn::Tensor*>>& tensors) {
    json jtensors = json::array();
    for (const auto& [name, tensor] : tensors)
        jtensors.push_back({{"name", name}, {"shape", tensor->shape}});
    header["tensors"] = jtensors;
    const std::string header_text = header.dump();

    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint64_t len = header_text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : tensors)
        out.write(reinterpret_cast<const char*>(tensor->data.data()),
                  static_cast<std::streamsize>(tensor->data.size() * sizeof(double)));
    if (!out) throw IoError("short checkpoint write: " + path.string());
}

CheckpointData read_checkpoint(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
        throw ValidationError("not a checkpoint file: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    std::string header_text(len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(len));
    if (!in) throw ValidationError("truncated checkpoint header: " + path.string());

    CheckpointData data;
    try {
        data.header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw ValidationError("corrupt checkpoint header: " + std::string(e.what()));
    }
    for (const auto& jt : data.header.at("tensors")) {
        nn::Tensor t(jt.at("shape").get<std::vector<std::int64_t>>());
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw ValidationError("truncated checkpoint tensor data: " + path.string());
        data.tensors.emplace(jt.at("name").get<std::string>(), std::move(t));
    }
    return data;
}

void restore_state(const CheckpointData& data,
                   const std::vector<std::pair<std::string, nn::Tensor*>>& state) {
    for (const auto& [name, tensor] : state) {
        const auto it = data.tensors.find(name);
        if (it == data.tensors.end())
            throw ValidationError("checkpoint is missing tensor " + name);
        if (it->second.shape != tensor->shape)
            throw ValidationError("checkpoint tensor " + name + " has mismatched shape");
        tensor->data = it->second.data;
    }
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------
namespace {

inline void check_transform(int transform) {
    if (transform < 0 || transform >= kNumTransforms)
        throw ValidationError("transform index out of range: " + std::to_string(transform));
}

// Source coordinates (sy, sx) for output (y, x) under out = R^r(F^f(in)).
inline void source_coords(int r, int f, int size, int y, int x, int& sy, int& sx) {
    int a, b;
    switch (r) {
        case 0: a = y; b = x; break;
        case 1: a = x; b = size - 1 - y; break;
        case 2: a = size - 1 - y; b = size - 1 - x; break;
        default: a = size - 1 - x; b = y; break;
    }
    sy = a;
    sx = f ? size - 1 - b : b;
}

}  // namespace

void augment_chw(const double* in, double* out, int channels, int size, int transform) {
    check_transform(transform);
    const int r = transform % 4;
    const int f = transform / 4;
    const std::size_t px = static_cast<std::size_t>(size) * size;
    for (int c = 0; c < channels; ++c) {
        const double* ip = in + static_cast<std::size_t>(c) * px;
        double* op = out + static_cast<std::size_t>(c) * px;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                int sy, sx;
                source_coords(r, f, size, y, x, sy, sx);
                op[static_cast<std::size_t>(y) * size + x] =
                    ip[static_cast<std::size_t>(sy) * size + sx];
            }
    }
}

RasterPatch augment_patch(const RasterPatch& patch, int transform) {
    check_transform(transform);
    const int r = transform % 4;
    const int f = transform / 4;
    const int size = patch.size;
    const std::size_t px = patch.pixel_count();
    RasterPatch out = patch;
    for (int c = 0; c < 4; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                int sy, sx;
                source_coords(r, f, size, y, x, sy, sx);
                out.bands[(static_cast<std::size_t>(c) * size + y) * size + x] =
                    patch.bands[(static_cast<std::size_t>(c) * size + sy) * size + sx];
            }
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            int sy, sx;
            source_coords(r, f, size, y, x, sy, sx);
            out.nodata[static_cast<std::size_t>(y) * size + x] =
                patch.nodata[static_cast<std::size_t>(sy) * size + sx];
        }
    (void)px;
    return out;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------
PopulationModel::PopulationModel(double width_, std::uint64_t init_seed)
    : width(width_), encoder(width_, init_seed) {
    head.fc.configure(encoder.feature_dim(), 1, true, "head.fc");
    Rng rng(derive_seed(init_seed, "head-init"));
    head.fc.init(rng);
}

void PopulationModel::collect_params(std::vector<nn::Param*>& out) {
    encoder.collect_params(out);
    out.push_back(&head.fc.weight);
    out.push_back(&head.fc.bias);
}

void PopulationModel::collect_state(std::vector<std::pair<std::string, nn::Tensor*>>& out) {
    encoder.collect_state(out);
    out.emplace_back("head.fc.weight", &head.fc.weight.value);
    out.emplace_back("head.fc.bias", &head.fc.bias.value);
}

void PopulationModel::zero_grad() {
    std::vector<nn::Param*> params;
    collect_params(params);
    for (auto* p : params) p->grad.zero();
}

namespace {

void patch_to_chw(const RasterPatch& patch, double* out) {
    const std::size_t n = 4 * patch.pixel_count();
    if (patch.bands.size() != n)
        throw ValidationError("patch " + patch.patch_id + " has wrong channel count or shape");
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(patch.bands[i]);
}

void fill_batch(nn::Tensor& x, const std::vector<const RasterPatch*>& patches,
                const std::vector<int>& transforms) {
    if (patches.empty()) throw ValidationError("empty patch batch");
    const int size = patches.front()->size;
    nn::ensure(x, {static_cast<std::int64_t>(patches.size()), 4, size, size});
    std::vector<double> tmp(static_cast<std::size_t>(4) * size * size);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i]->size != size)
            throw ValidationError("mixed patch sizes in one batch");
        double* row = x.ptr() + static_cast<std::size_t>(i) * 4 * size * size;
        const int t = transforms.empty() ? 0 : transforms[i];
        if (t == 0) {
            patch_to_chw(*patches[i], row);
        } else {
            patch_to_chw(*patches[i], tmp.data());
            augment_chw(tmp.data(), row, 4, size, t);
        }
    }
}

}  // namespace

nn::Tensor encode_batch(const nn::EncoderModel& encoder,
                        const std::vector<const RasterPatch*>& patches,
                        const std::vector<int>& transforms, nn::ExecPolicy policy) {
    nn::Tensor x;
    fill_batch(x, patches, transforms);
    auto ws = encoder.make_workspace();
    return encoder.forward(x, ws, /*train=*/false, policy);
}

std::vector<double> encode(const nn::EncoderModel& encoder, const RasterPatch& patch,
                           nn::ExecPolicy policy) {
    const nn::Tensor feat = encode_batch(encoder, {&patch}, {}, policy);
    return feat.data;
}

namespace {

inline double head_predict(const PopulationHead& head, const double* feature) {
    double z = head.fc.bias.value.data[0];
    const auto& w = head.fc.weight.value.data;
    for (std::size_t i = 0; i < w.size(); ++i) z += w[i] * feature[i];
    const double p = head.output_scale * z;
    return p > 0.0 ? p : 0.0;
}

}  // namespace

double predict_population(const PopulationModel& model, const RasterPatch& patch,
                          nn::ExecPolicy policy) {
    const nn::Tensor feat = encode_batch(model.encoder, {&patch}, {}, policy);
    return head_predict(model.head, feat.ptr());
}

std::vector<double> predict_population_batch(const PopulationModel& model,
                                             const std::vector<const RasterPatch*>& patches,
                                             nn::ExecPolicy policy) {
    const nn::Tensor feat = encode_batch(model.encoder, patches, {}, policy);
    std::vector<double> out(patches.size());
    for (std::size_t i = 0; i < patches.size(); ++i)
        out[i] = head_predict(model.head, feat.ptr() + feat.shape[1] * static_cast<std::int64_t>(i));
    return out;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------
void TrainConfig::validate() const {
    if (learning_rates.empty()) throw ValidationError("learning_rates grid must be non-empty");
    if (batch_sizes.empty()) throw ValidationError("batch_sizes grid must be non-empty");
    for (const double lr : learning_rates)
        if (!(lr > 0.0)) throw ValidationError("learning rates must be > 0");
    for (const int b : batch_sizes)
        if (b < 1) throw ValidationError("batch sizes must be >= 1");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (patience > 0 && patience >= max_epochs)
        throw ValidationError("patience must be < max_epochs");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
}

namespace {

struct GridSample {
    const RasterPatch* patch;
    double label;
};

double census_rmse_t2(const PopulationModel& model, const Dataset& dataset,
                      const std::vector<std::string>& unit_ids, nn::ExecPolicy policy) {
    std::vector<PredictionRecord> records;
    records.reserve(unit_ids.size());
    for (const auto& uid : unit_ids) {
        const auto patches = unit_patches(dataset, uid, Epoch::T2);
        const auto preds = predict_population_batch(model, patches, policy);
        double sum = 0.0;
        for (const double p : preds) sum += p;
        records.push_back({uid, dataset.unit(uid).pop_t2, sum});
    }
    return rmse(records);
}

}  // namespace

PretrainResult pretrain_grid(const Dataset& dataset, const DatasetSplit& split,
                             const TrainConfig& config, double width, nn::ExecPolicy policy) {
    config.validate();
    if (!dataset.has_oracle())
        throw ValidationError("grid-level pretraining needs oracle patch labels");
    if (split.val.empty()) throw ValidationError("validation unit set is empty");

    std::vector<GridSample> samples;
    for (const auto& uid : split.train)
        for (const auto* p : unit_patches(dataset, uid, Epoch::T2))
            samples.push_back({p, dataset.oracle_entry(p->patch_id).pop_t2});
    if (samples.empty()) throw ValidationError("empty train set");

    double mean = 0.0;
    for (const auto& s : samples) mean += s.label;
    mean /= static_cast<double>(samples.size());
    double var = 0.0;
    for (const auto& s : samples) var += (s.label - mean) * (s.label - mean);
    var /= static_cast<double>(samples.size());
    const double label_scale = std::max(1.0, std::sqrt(var));

    const int size = dataset.patch_size;
    std::optional<PretrainResult> result;

    for (std::size_t li = 0; li < config.learning_rates.size(); ++li) {
        for (std::size_t bi = 0; bi < config.batch_sizes.size(); ++bi) {
            const double lr = config.learning_rates[li];
            const int batch_size = config.batch_sizes[bi];

            SearchRunLog log;
            log.learning_rate = lr;
            log.batch_size = batch_size;

            PopulationModel model(width, derive_seed(config.seed, "init"));
            model.head.output_scale = label_scale;
            std::vector<nn::Param*> params;
            model.collect_params(params);
            nn::AdamW opt(params, lr, config.weight_decay);
            Rng rng(derive_seed(config.seed, "run", li, bi));

            auto ws = model.encoder.make_workspace();
            nn::Tensor x, z, gz, gfeat;
            std::vector<std::size_t> order(samples.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

            std::optional<PopulationModel> best_model;
            int streak = 0;

            for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
                rng.shuffle(order);
                double sq_sum = 0.0;
                bool finite = true;
                for (std::size_t start = 0; start < order.size() && finite;
                     start += static_cast<std::size_t>(batch_size)) {
                    const std::size_t b =
                        std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                              order.size() - start);
                    nn::ensure(x, {static_cast<std::int64_t>(b), 4, size, size});
                    std::vector<double> labels(b);
                    std::vector<double> tmp(static_cast<std::size_t>(4) * size * size);
                    for (std::size_t i = 0; i < b; ++i) {
                        const auto& s = samples[order[start + i]];
                        labels[i] = s.label;
                        const int t = static_cast<int>(rng.uniform_int(kNumTransforms));
                        double* row = x.ptr() + static_cast<std::size_t>(i) * 4 * size * size;
                        if (t == 0) {
                            patch_to_chw(*s.patch, row);
                        } else {
                            patch_to_chw(*s.patch, tmp.data());
                            augment_chw(tmp.data(), row, 4, size, t);
                        }
                    }

                    const nn::Tensor& feat = model.encoder.forward(x, ws, /*train=*/true, policy);
                    model.head.fc.forward(feat, z, policy);
                    nn::ensure(gz, z.shape);
                    const double inv_b = 1.0 / static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i) {
                        const double zi = z.data[i];
                        const double p = model.head.output_scale * zi > 0.0
                                             ? model.head.output_scale * zi
                                             : 0.0;
                        const double err = p - labels[i];
                        sq_sum += err * err;
                        gz.data[i] = zi > 0.0 ? 2.0 * err * inv_b * model.head.output_scale : 0.0;
                        if (!std::isfinite(p) || !std::isfinite(sq_sum)) finite = false;
                    }
                    if (!finite) break;
                    model.zero_grad();
                    model.head.fc.backward(feat, gz, &gfeat, policy);
                    model.encoder.backward(ws, gfeat, policy);
                    opt.step();
                }

                if (!finite) {
                    log.diverged = true;
                    log.stopped_epoch = epoch;
                    break;
                }

                EpochStats stats;
                stats.train_loss = sq_sum / static_cast<double>(samples.size());
                stats.val_metric = census_rmse_t2(model, dataset, split.val, policy);
                log.history.push_back(stats);
                log.stopped_epoch = epoch;

                // Strictly worse increments the no-improvement streak; equal or
                // better refreshes the kept weights.
                if (stats.val_metric < log.best_val_metric) {
                    log.best_val_metric = stats.val_metric;
                    log.best_epoch = epoch;
                    best_model = model;
                    streak = 0;
                } else if (stats.val_metric == log.best_val_metric) {
                    log.best_epoch = epoch;
                    best_model = model;
                    streak = 0;
                } else {
                    ++streak;
                    if (config.patience > 0 && streak >= config.patience) break;
                }
            }

            const bool winner_candidate = [&] {
                if (log.diverged || !best_model) return false;
                if (!result || result->winner_index < 0) return true;
                const auto& cur = result->runs[static_cast<std::size_t>(result->winner_index)];
                if (log.best_val_metric != cur.best_val_metric)
                    return log.best_val_metric < cur.best_val_metric;
                if (log.learning_rate != cur.learning_rate)
                    return log.learning_rate < cur.learning_rate;
                return log.batch_size < cur.batch_size;
            }();

            if (!result) {
                result.emplace(PretrainResult{std::move(model), config, label_scale, -1, {}});
            }
            result->runs.push_back(log);
            if (winner_candidate) {
                result->winner_index = static_cast<int>(result->runs.size()) - 1;
                result->model = std::move(*best_model);
            }
        }
    }

    if (!result || result->winner_index < 0)
        throw std::runtime_error("pretraining failed: all hyperparameter combinations diverged");
    return std::move(*result);
}

std::string search_log_to_json_text(const std::vector<SearchRunLog>& runs, int winner_index) {
    json j;
    j["winner_index"] = winner_index;
    json jruns = json::array();
    for (const auto& run : runs) jruns.push_back(search_run_log_to_json(run));
    j["runs"] = jruns;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
void save_population_checkpoint(const fs::path& path, const PretrainResult& result) {
    json header;
    header["kind"] = "population";
    header["format"] = 1;
    header["width"] = result.model.width;
    header["label_scale"] = result.label_scale;
    header["train_config"] = train_config_to_json(result.config);
    header["winner_index"] = result.winner_index;
    json jruns = json::array();
    for (const auto& run : result.runs) jruns.push_back(search_run_log_to_json(run));
    header["runs"] = jruns;

    std::vector<std::pair<std::string, nn::Tensor*>> state;
    const_cast<PretrainResult&>(result).model.collect_state(state);
    std::vector<std::pair<std::string, const nn::Tensor*>> tensors;
    tensors.reserve(state.size());
    for (const auto& [name, tensor] : state) tensors.emplace_back(name, tensor);
    write_checkpoint(path, std::move(header), tensors);
}

PretrainResult load_population_checkpoint(const fs::path& path) {
    CheckpointData data = read_checkpoint(path);
    if (data.header.at("kind").get<std::string>() != "population")
        throw ValidationError("not a population checkpoint: " + path.string());
    const double width = data.header.at("width").get<double>();

    PretrainResult result{PopulationModel(width, 0), TrainConfig{}, 1.0, -1, {}};
    result.label_scale = data.header.at("label_scale").get<double>();
    result.model.head.output_scale = result.label_scale;
    result.config = train_config_from_json(data.header.at("train_config"),
                                           "checkpoint train_config");
    result.winner_index = data.header.at("winner_index").get<int>();
    for (const auto& jr : data.header.at("runs"))
        result.runs.push_back(search_run_log_from_json(jr));

    std::vector<std::pair<std::string, nn::Tensor*>> state;
    result.model.collect_state(state);
    restore_state(data, state);
    return result;
}

}  // namespace popgrowth
