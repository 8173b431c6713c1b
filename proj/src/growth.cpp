#include "popgrowth/growth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "popgrowth/checkpoint_io.hpp"
#include "popgrowth/metrics.hpp"
#include "popgrowth/serde.hpp"

using nlohmann::json;

namespace popgrowth {

const char* feature_combine_tag(FeatureCombine combine) {
    return combine == FeatureCombine::Difference ? "difference" : "concat";
}

FeatureCombine feature_combine_from_tag(const std::string& tag) {
    if (tag == "difference") return FeatureCombine::Difference;
    if (tag == "concat") return FeatureCombine::Concat;
    throw ValidationError("unknown feature_combine: " + tag);
}

GrowthModel::GrowthModel(const nn::EncoderModel& pretrained_encoder, FeatureCombine combine_,
                         std::uint64_t head_init_seed)
    : width(pretrained_encoder.width()), combine(combine_), encoder(pretrained_encoder) {
    const std::int64_t in = combine == FeatureCombine::Difference ? encoder.feature_dim()
                                                                  : 2 * encoder.feature_dim();
    head.fc.configure(in, 1, /*with_bias=*/false, "growth_head.fc");
    Rng rng(derive_seed(head_init_seed, "growth-head-init"));
    head.fc.init(rng);
}

namespace {

// g = scale * w . combined(f1, f2). Difference mode keeps G(x,x) = 0 exact
// and antisymmetric because the head has no bias and no output activation.
double head_growth(const GrowthHead& head, FeatureCombine combine, const double* f1,
                   const double* f2, std::int64_t feature_dim) {
    const auto& w = head.fc.weight.value.data;
    double z = 0.0;
    if (combine == FeatureCombine::Difference) {
        for (std::int64_t i = 0; i < feature_dim; ++i)
            z += w[static_cast<std::size_t>(i)] * (f2[i] - f1[i]);
    } else {
        for (std::int64_t i = 0; i < feature_dim; ++i)
            z += w[static_cast<std::size_t>(i)] * f1[i];
        for (std::int64_t i = 0; i < feature_dim; ++i)
            z += w[static_cast<std::size_t>(feature_dim + i)] * f2[i];
    }
    return head.output_scale * z;
}

}  // namespace

double predict_patch_growth(const GrowthModel& model, const BitemporalSample& sample,
                            nn::ExecPolicy policy) {
    const nn::Tensor f1 = encode_batch(model.encoder, {sample.x_t1}, {}, policy);
    const nn::Tensor f2 = encode_batch(model.encoder, {sample.x_t2}, {}, policy);
    return head_growth(model.head, model.combine, f1.ptr(), f2.ptr(), model.encoder.feature_dim());
}

std::vector<double> predict_patch_growth_batch(const GrowthModel& model, const Dataset& dataset,
                                               const std::vector<std::string>& patch_ids,
                                               nn::ExecPolicy policy) {
    std::vector<const RasterPatch*> t1, t2;
    t1.reserve(patch_ids.size());
    t2.reserve(patch_ids.size());
    for (const auto& pid : patch_ids) {
        const BitemporalSample s = bitemporal_sample(dataset, pid);
        t1.push_back(s.x_t1);
        t2.push_back(s.x_t2);
    }
    const nn::Tensor f1 = encode_batch(model.encoder, t1, {}, policy);
    const nn::Tensor f2 = encode_batch(model.encoder, t2, {}, policy);
    const std::int64_t dim = model.encoder.feature_dim();
    std::vector<double> out(patch_ids.size());
    for (std::size_t i = 0; i < patch_ids.size(); ++i)
        out[i] = head_growth(model.head, model.combine, f1.ptr() + dim * static_cast<std::int64_t>(i),
                             f2.ptr() + dim * static_cast<std::int64_t>(i), dim);
    return out;
}

double predict_unit_growth(const GrowthModel& model, const Dataset& dataset,
                           const std::string& unit_id, nn::ExecPolicy policy) {
    std::vector<std::string> ids = dataset.unit(unit_id).patch_ids;
    std::sort(ids.begin(), ids.end());
    const std::vector<double> growths = predict_patch_growth_batch(model, dataset, ids, policy);
    double sum = 0.0;
    for (const double g : growths) sum += g;
    return sum;
}

double pcc_unit_growth(const PopulationModel& model, const Dataset& dataset,
                       const std::string& unit_id, nn::ExecPolicy policy) {
    const auto patches_t1 = unit_patches(dataset, unit_id, Epoch::T1);
    const auto patches_t2 = unit_patches(dataset, unit_id, Epoch::T2);
    const auto p1 = predict_population_batch(model, patches_t1, policy);
    const auto p2 = predict_population_batch(model, patches_t2, policy);
    double s1 = 0.0, s2 = 0.0;
    for (const double v : p1) s1 += v;
    for (const double v : p2) s2 += v;
    return s2 - s1;
}

// ---------------------------------------------------------------------------
// Feature cache
// ---------------------------------------------------------------------------
FeatureCache::FeatureCache(const nn::EncoderModel& encoder, const Dataset& dataset,
                           nn::ExecPolicy policy)
    : encoder_(encoder), dataset_(dataset), policy_(policy) {}

void FeatureCache::precompute(const std::vector<std::string>& patch_ids, std::vector<Epoch> epochs,
                              const std::vector<int>& transforms) {
    std::vector<std::tuple<std::string, int, int>> missing;
    for (const auto& pid : patch_ids)
        for (const Epoch e : epochs)
            for (const int t : transforms) {
                const auto key = std::make_tuple(pid, e == Epoch::T1 ? 1 : 2, t);
                if (!store_.count(key)) missing.push_back(key);
            }

    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < missing.size(); start += kChunk) {
        const std::size_t count = std::min(kChunk, missing.size() - start);
        std::vector<const RasterPatch*> patches(count);
        std::vector<int> ts(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto& [pid, e, t] = missing[start + i];
            patches[i] = &dataset_.patch(pid, e == 1 ? Epoch::T1 : Epoch::T2);
            ts[i] = t;
        }
        const nn::Tensor feats = encode_batch(encoder_, patches, ts, policy_);
        const std::int64_t dim = feats.shape[1];
        for (std::size_t i = 0; i < count; ++i) {
            const double* row = feats.ptr() + dim * static_cast<std::int64_t>(i);
            store_[missing[start + i]] = std::vector<double>(row, row + dim);
        }
    }
}

const std::vector<double>& FeatureCache::features(const std::string& patch_id, Epoch epoch,
                                                  int transform) {
    const auto key = std::make_tuple(patch_id, epoch == Epoch::T1 ? 1 : 2, transform);
    auto it = store_.find(key);
    if (it == store_.end()) {
        precompute({patch_id}, {epoch}, {transform});
        it = store_.find(key);
    }
    return it->second;
}

// ---------------------------------------------------------------------------
// Census-level training
// ---------------------------------------------------------------------------
namespace {

// Uncached path: encodes on demand; must agree with FeatureCache bitwise.
class DirectFeatures {
public:
    DirectFeatures(const nn::EncoderModel& encoder, const Dataset& dataset, nn::ExecPolicy policy)
        : encoder_(encoder), dataset_(dataset), policy_(policy) {}

    const std::vector<double>& features(const std::string& pid, Epoch epoch, int transform) {
        const nn::Tensor f =
            encode_batch(encoder_, {&dataset_.patch(pid, epoch)}, {transform}, policy_);
        buffer_ = f.data;
        return buffer_;
    }

private:
    const nn::EncoderModel& encoder_;
    const Dataset& dataset_;
    nn::ExecPolicy policy_;
    std::vector<double> buffer_;
};

struct UnitSample {
    std::string unit_id;
    std::vector<std::string> patch_ids;  // sorted
    double delta_y = 0.0;
};

}  // namespace

GrowthResult train_census_level(const nn::EncoderModel& frozen_encoder, const Dataset& dataset,
                                const DatasetSplit& split, const TrainConfig& config,
                                const GrowthTrainOptions& options, nn::ExecPolicy policy) {
    config.validate();
    if (split.val.empty()) throw ValidationError("validation unit set is empty");
    if (split.train.empty()) throw ValidationError("empty train set");

    const std::string encoder_hash_before = frozen_encoder.state_hash();
    const std::int64_t feature_dim = frozen_encoder.feature_dim();
    const std::int64_t head_dim =
        options.combine == FeatureCombine::Difference ? feature_dim : 2 * feature_dim;

    auto build_units = [&dataset](const std::vector<std::string>& ids) {
        std::vector<UnitSample> units;
        units.reserve(ids.size());
        for (const auto& uid : ids) {
            const CensusUnit& u = dataset.unit(uid);
            if (u.patch_ids.empty())
                throw ValidationError("census unit " + uid + " has no patches");
            UnitSample s;
            s.unit_id = uid;
            s.patch_ids = u.patch_ids;
            std::sort(s.patch_ids.begin(), s.patch_ids.end());
            s.delta_y = u.growth();
            units.push_back(std::move(s));
        }
        return units;
    };
    const std::vector<UnitSample> train_units = build_units(split.train);
    const std::vector<UnitSample> val_units = build_units(split.val);

    double mean = 0.0;
    for (const auto& u : train_units) mean += u.delta_y;
    mean /= static_cast<double>(train_units.size());
    double var = 0.0;
    for (const auto& u : train_units) var += (u.delta_y - mean) * (u.delta_y - mean);
    var /= static_cast<double>(train_units.size());
    const double label_scale = std::max(1.0, std::sqrt(var));

    // All transforms for train patches, identity for validation patches.
    std::optional<FeatureCache> cache;
    std::optional<DirectFeatures> direct;
    if (options.cache_features) {
        cache.emplace(frozen_encoder, dataset, policy);
        std::vector<int> all_transforms(kNumTransforms);
        for (int t = 0; t < kNumTransforms; ++t) all_transforms[static_cast<std::size_t>(t)] = t;
        std::vector<std::string> train_pids;
        for (const auto& u : train_units)
            train_pids.insert(train_pids.end(), u.patch_ids.begin(), u.patch_ids.end());
        cache->precompute(train_pids, {Epoch::T1, Epoch::T2}, all_transforms);
        std::vector<std::string> val_pids;
        for (const auto& u : val_units)
            val_pids.insert(val_pids.end(), u.patch_ids.begin(), u.patch_ids.end());
        cache->precompute(val_pids, {Epoch::T1, Epoch::T2}, {0});
    } else {
        direct.emplace(frozen_encoder, dataset, policy);
    }
    auto features = [&](const std::string& pid, Epoch e, int t) -> const std::vector<double>& {
        return options.cache_features ? cache->features(pid, e, t) : direct->features(pid, e, t);
    };

    // D for one unit under given per-patch transforms; optionally accumulates
    // d(D)/d(w) into grad (difference: scale * (f2 - f1); concat layout).
    auto unit_prediction = [&](const UnitSample& unit, const std::vector<int>& ts,
                               const GrowthHead& head, std::vector<double>* grad) {
        double d = 0.0;
        for (std::size_t pi = 0; pi < unit.patch_ids.size(); ++pi) {
            const int t = ts.empty() ? 0 : ts[pi];
            const auto& f1 = features(unit.patch_ids[pi], Epoch::T1, t);
            const auto& f2 = features(unit.patch_ids[pi], Epoch::T2, t);
            d += head_growth(head, options.combine, f1.data(), f2.data(), feature_dim);
            if (grad) {
                if (options.combine == FeatureCombine::Difference) {
                    for (std::int64_t i = 0; i < feature_dim; ++i)
                        (*grad)[static_cast<std::size_t>(i)] +=
                            head.output_scale * (f2[static_cast<std::size_t>(i)] -
                                                 f1[static_cast<std::size_t>(i)]);
                } else {
                    for (std::int64_t i = 0; i < feature_dim; ++i) {
                        (*grad)[static_cast<std::size_t>(i)] +=
                            head.output_scale * f1[static_cast<std::size_t>(i)];
                        (*grad)[static_cast<std::size_t>(feature_dim + i)] +=
                            head.output_scale * f2[static_cast<std::size_t>(i)];
                    }
                }
            }
        }
        return d;
    };

    auto val_rmse = [&](const GrowthHead& head) {
        std::vector<PredictionRecord> records;
        records.reserve(val_units.size());
        for (const auto& u : val_units)
            records.push_back({u.unit_id, u.delta_y, unit_prediction(u, {}, head, nullptr)});
        return rmse(records);
    };

    std::optional<GrowthResult> result;

    for (std::size_t li = 0; li < config.learning_rates.size(); ++li) {
        for (std::size_t bi = 0; bi < config.batch_sizes.size(); ++bi) {
            const double lr = config.learning_rates[li];
            const int batch_size = config.batch_sizes[bi];

            SearchRunLog log;
            log.learning_rate = lr;
            log.batch_size = batch_size;

            GrowthModel model(frozen_encoder, options.combine, config.seed);
            model.head.output_scale = label_scale;
            nn::AdamW opt({&model.head.fc.weight}, lr, config.weight_decay);
            Rng rng(derive_seed(config.seed, "growth-run", li, bi));

            std::vector<std::size_t> order(train_units.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

            std::optional<nn::Tensor> best_weights;
            int streak = 0;
            std::vector<double> unit_grad(static_cast<std::size_t>(head_dim));
            std::vector<int> ts;

            for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
                rng.shuffle(order);
                double sq_sum = 0.0;
                bool finite = true;
                for (std::size_t start = 0; start < order.size() && finite;
                     start += static_cast<std::size_t>(batch_size)) {
                    const std::size_t b = std::min<std::size_t>(
                        static_cast<std::size_t>(batch_size), order.size() - start);
                    model.head.fc.weight.grad.zero();
                    const double inv_b = 1.0 / static_cast<double>(b);
                    for (std::size_t i = 0; i < b; ++i) {
                        const UnitSample& unit = train_units[order[start + i]];
                        ts.resize(unit.patch_ids.size());
                        for (auto& t : ts) t = static_cast<int>(rng.uniform_int(kNumTransforms));
                        std::fill(unit_grad.begin(), unit_grad.end(), 0.0);
                        const double d = unit_prediction(unit, ts, model.head, &unit_grad);
                        const double err = d - unit.delta_y;
                        sq_sum += err * err;
                        if (!std::isfinite(d) || !std::isfinite(sq_sum)) {
                            finite = false;
                            break;
                        }
                        const double coeff = 2.0 * err * inv_b;
                        auto& gw = model.head.fc.weight.grad.data;
                        for (std::size_t k = 0; k < gw.size(); ++k)
                            gw[k] += coeff * unit_grad[k];
                    }
                    if (!finite) break;
                    opt.step();
                }

                if (!finite) {
                    log.diverged = true;
                    log.stopped_epoch = epoch;
                    break;
                }

                EpochStats stats;
                stats.train_loss = sq_sum / static_cast<double>(train_units.size());
                stats.val_metric = val_rmse(model.head);
                log.history.push_back(stats);
                log.stopped_epoch = epoch;

                if (stats.val_metric < log.best_val_metric) {
                    log.best_val_metric = stats.val_metric;
                    log.best_epoch = epoch;
                    best_weights = model.head.fc.weight.value;
                    streak = 0;
                } else if (stats.val_metric == log.best_val_metric) {
                    log.best_epoch = epoch;
                    best_weights = model.head.fc.weight.value;
                    streak = 0;
                } else {
                    ++streak;
                    if (config.patience > 0 && streak >= config.patience) break;
                }
            }

            const bool winner_candidate = [&] {
                if (log.diverged || !best_weights) return false;
                if (!result || result->winner_index < 0) return true;
                const auto& cur = result->runs[static_cast<std::size_t>(result->winner_index)];
                if (log.best_val_metric != cur.best_val_metric)
                    return log.best_val_metric < cur.best_val_metric;
                if (log.learning_rate != cur.learning_rate)
                    return log.learning_rate < cur.learning_rate;
                return log.batch_size < cur.batch_size;
            }();

            if (!result) {
                result.emplace(GrowthResult{std::move(model), config, label_scale, -1, {}, {}});
            }
            result->runs.push_back(log);
            if (winner_candidate) {
                result->winner_index = static_cast<int>(result->runs.size()) - 1;
                result->model.head.output_scale = label_scale;
                result->model.head.fc.weight.value = std::move(*best_weights);
            }
        }
    }

    if (!result || result->winner_index < 0)
        throw std::runtime_error("growth training failed: all hyperparameter combinations diverged");

    const std::string encoder_hash_after = frozen_encoder.state_hash();
    if (encoder_hash_before != encoder_hash_after)
        throw std::logic_error("frozen encoder changed during growth training");
    result->frozen_encoder_hash = encoder_hash_after;
    return std::move(*result);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
void save_growth_checkpoint(const fs::path& path, const GrowthResult& result,
                            const fs::path& encoder_checkpoint_path) {
    json header;
    header["kind"] = "growth";
    header["format"] = 1;
    header["width"] = result.model.width;
    header["combine"] = feature_combine_tag(result.model.combine);
    header["label_scale"] = result.label_scale;
    header["train_config"] = train_config_to_json(result.config);
    header["winner_index"] = result.winner_index;
    json jruns = json::array();
    for (const auto& run : result.runs) jruns.push_back(search_run_log_to_json(run));
    header["runs"] = jruns;
    header["frozen_encoder_hash"] = result.frozen_encoder_hash;
    header["encoder_checkpoint_sha256"] = Sha256::hash_file_hex(encoder_checkpoint_path);

    std::vector<std::pair<std::string, const nn::Tensor*>> tensors = {
        {"growth_head.fc.weight", &result.model.head.fc.weight.value}};
    write_checkpoint(path, std::move(header), tensors);
}

GrowthResult load_growth_checkpoint(const fs::path& path,
                                    const fs::path& encoder_checkpoint_path) {
    CheckpointData data = read_checkpoint(path);
    if (data.header.at("kind").get<std::string>() != "growth")
        throw ValidationError("not a growth checkpoint: " + path.string());

    const std::string want = data.header.at("encoder_checkpoint_sha256").get<std::string>();
    const std::string got = Sha256::hash_file_hex(encoder_checkpoint_path);
    if (want != got)
        throw ValidationError("encoder checkpoint content hash mismatch: growth checkpoint was "
                              "trained against a different encoder (expected " +
                              want + ", got " + got + ")");

    PretrainResult pretrain = load_population_checkpoint(encoder_checkpoint_path);
    const auto combine = feature_combine_from_tag(data.header.at("combine").get<std::string>());

    GrowthResult result{GrowthModel(pretrain.model.encoder, combine, 0), TrainConfig{}, 1.0, -1,
                        {}, {}};
    result.label_scale = data.header.at("label_scale").get<double>();
    result.model.head.output_scale = result.label_scale;
    result.config = train_config_from_json(data.header.at("train_config"),
                                           "growth checkpoint train_config");
    result.winner_index = data.header.at("winner_index").get<int>();
    for (const auto& jr : data.header.at("runs"))
        result.runs.push_back(search_run_log_from_json(jr));
    result.frozen_encoder_hash = data.header.at("frozen_encoder_hash").get<std::string>();

    std::vector<std::pair<std::string, nn::Tensor*>> state = {
        {"growth_head.fc.weight", &result.model.head.fc.weight.value}};
    restore_state(data, state);
    return result;
}

}  // namespace popgrowth
