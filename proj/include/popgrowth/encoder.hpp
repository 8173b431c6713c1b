#pragma once

#include <limits>
#include <optional>

#include "popgrowth/geodata.hpp"
#include "popgrowth/optimizer.hpp"
#include "popgrowth/resnet.hpp"

namespace popgrowth {

// ---------------------------------------------------------------------------
// Dihedral augmentation: index = rotation (0..3, counter-clockwise 90-degree
// steps) + 4 * flip, horizontal flip applied before the rotation. Transform 0
// is the identity; the 8 transforms form the symmetry group of the square.
// ---------------------------------------------------------------------------
constexpr int kNumTransforms = 8;

void augment_chw(const double* in, double* out, int channels, int size, int transform);
RasterPatch augment_patch(const RasterPatch& patch, int transform);

// ---------------------------------------------------------------------------
// Population model: encoder + fully connected head + rectifier.
// ---------------------------------------------------------------------------
struct PopulationHead {
    nn::Linear fc;  // feature_dim -> 1, with bias
    // Constant folded into the affine map (set to the std of the training
    // labels) so optimizer steps reach population scale quickly. Scale-only:
    // zero weights still give a zero prediction.
    double output_scale = 1.0;
};

struct PopulationModel {
    double width = 1.0;
    nn::EncoderModel encoder;
    PopulationHead head;

    PopulationModel(double width, std::uint64_t init_seed);

    void collect_params(std::vector<nn::Param*>& out);
    void collect_state(std::vector<std::pair<std::string, nn::Tensor*>>& out);
    void zero_grad();
};

// Batch eval-mode feature extraction; one row per patch. `transforms` may be
// empty (identity) or hold one dihedral index per patch.
nn::Tensor encode_batch(const nn::EncoderModel& encoder,
                        const std::vector<const RasterPatch*>& patches,
                        const std::vector<int>& transforms, nn::ExecPolicy policy);

// Feature vector of a single patch (eval mode, deterministic).
std::vector<double> encode(const nn::EncoderModel& encoder, const RasterPatch& patch,
                           nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

double predict_population(const PopulationModel& model, const RasterPatch& patch,
                          nn::ExecPolicy policy = nn::ExecPolicy::Parallel);
std::vector<double> predict_population_batch(const PopulationModel& model,
                                             const std::vector<const RasterPatch*>& patches,
                                             nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

// ---------------------------------------------------------------------------
// Training configuration shared by grid-level pretraining and census-level
// growth training. AdamW betas are fixed at 0.9/0.999.
// ---------------------------------------------------------------------------
struct TrainConfig {
    std::vector<double> learning_rates = {1e-5, 1e-4, 1e-3};
    std::vector<int> batch_sizes = {8, 16};
    int max_epochs = 100;
    int patience = 5;  // consecutive non-improving epochs; <= 0 disables
    double weight_decay = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

struct EpochStats {
    double train_loss = 0.0;  // epoch MSE over training samples
    double val_metric = 0.0;  // validation census-level RMSE
};

struct SearchRunLog {
    double learning_rate = 0.0;
    int batch_size = 0;
    bool diverged = false;
    int best_epoch = 0;    // 1-based; 0 if diverged before any epoch finished
    double best_val_metric = std::numeric_limits<double>::infinity();
    int stopped_epoch = 0;  // epochs completed
    std::vector<EpochStats> history;
};

struct PretrainResult {
    PopulationModel model;  // grid-search winner at its best epoch
    TrainConfig config;
    double label_scale = 1.0;
    int winner_index = -1;  // into runs
    std::vector<SearchRunLog> runs;
};

// Grid-level pretraining (needs the dataset oracle for patch labels): for
// each (lr, batch) pair trains with MSE on t2 patch populations, one random
// dihedral transform per sample per epoch, early-stops on validation
// census-level RMSE, and returns the winner plus the full search log.
PretrainResult pretrain_grid(const Dataset& dataset, const DatasetSplit& split,
                             const TrainConfig& config, double width,
                             nn::ExecPolicy policy = nn::ExecPolicy::Parallel);

std::string search_log_to_json_text(const std::vector<SearchRunLog>& runs, int winner_index);

// Binary checkpoint: JSON header (config, search log, scale) + raw f64
// tensors. Round-trips bit-exactly.
void save_population_checkpoint(const fs::path& path, const PretrainResult& result);
PretrainResult load_population_checkpoint(const fs::path& path);

}  // namespace popgrowth
