#pragma once

#include <map>

#include "popgrowth/encoder.hpp"

namespace popgrowth {

// How the two branch features are combined before the head. Difference gives
// the zero-change and antisymmetry guarantees; concat is a config alternative
// with no invariants claimed.
enum class FeatureCombine { Difference, Concat };

const char* feature_combine_tag(FeatureCombine combine);
FeatureCombine feature_combine_from_tag(const std::string& tag);

struct GrowthHead {
    nn::Linear fc;  // bias-free linear map; in = F (difference) or 2F (concat)
    double output_scale = 1.0;  // folded constant, set from train growth labels
};

// Siamese growth model: one encoder weight set serves both branches and stays
// frozen; only the head trains at census level.
struct GrowthModel {
    double width = 1.0;
    FeatureCombine combine = FeatureCombine::Difference;
    nn::EncoderModel encoder;
    GrowthHead head;

    GrowthModel(const nn::EncoderModel& pretrained_encoder, FeatureCombine combine,
                std::uint64_t head_init_seed);

    std::int64_t trainable_param_count() const { return head.fc.weight.value.numel(); }
};

double predict_patch_growth(const GrowthModel& model, const BitemporalSample& sample,
                            nn::ExecPolicy policy = nn::ExecPolicy::Parallel);
std::vector<double> predict_patch_growth_batch(const GrowthModel& model, const Dataset& dataset,
                                               const std::vector<std::string>& patch_ids,
                                               nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// Sum of patch growth predictions in patch_id-sorted order (bitwise equal to
// summing predict_patch_growth over the unit's patches).
double predict_unit_growth(const GrowthModel& model, const Dataset& dataset,
                           const std::string& unit_id,
                           nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// Post-Classification Comparison baseline: difference of the two summed
// uni-temporal population maps, same deterministic patch order.
double pcc_unit_growth(const PopulationModel& model, const Dataset& dataset,
                       const std::string& unit_id,
                       nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// ---------------------------------------------------------------------------
// Frozen-encoder feature cache: pure map over (patch, epoch, transform).
// ---------------------------------------------------------------------------
class FeatureCache {
public:
    FeatureCache(const nn::EncoderModel& encoder, const Dataset& dataset, nn::ExecPolicy policy);

    void precompute(const std::vector<std::string>& patch_ids, std::vector<Epoch> epochs,
                    const std::vector<int>& transforms);
    const std::vector<double>& features(const std::string& patch_id, Epoch epoch, int transform);

private:
    const nn::EncoderModel& encoder_;
    const Dataset& dataset_;
    nn::ExecPolicy policy_;
    std::map<std::tuple<std::string, int, int>, std::vector<double>> store_;
};

struct GrowthTrainOptions {
    FeatureCombine combine = FeatureCombine::Difference;
    bool cache_features = true;
};

struct GrowthResult {
    GrowthModel model;
    TrainConfig config;
    double label_scale = 1.0;
    int winner_index = -1;
    std::vector<SearchRunLog> runs;
    std::string frozen_encoder_hash;  // EncoderModel::state_hash before == after
};

// Census-level weakly supervised training: per step, a batch of census units;
// loss is the mean over units of (delta Y - D)^2 with D the sum of per-patch
// predictions; the same grid search / early stopping / augmentation regime as
// pretraining; per-patch dihedral transforms are drawn independently and
// applied to both epochs of a sample. Only the head receives gradients.
GrowthResult train_census_level(const nn::EncoderModel& frozen_encoder, const Dataset& dataset,
                                const DatasetSplit& split, const TrainConfig& config,
                                const GrowthTrainOptions& options,
                                nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// The growth checkpoint stores the head and references the encoder
// checkpoint by SHA-256 content hash; loading verifies the hash.
void save_growth_checkpoint(const fs::path& path, const GrowthResult& result,
                            const fs::path& encoder_checkpoint_path);
GrowthResult load_growth_checkpoint(const fs::path& path,
                                    const fs::path& encoder_checkpoint_path);

}  // namespace popgrowth
