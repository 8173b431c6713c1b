#pragma once

#include <map>

#include <json.hpp>

#include "popgrowth/tensor.hpp"

namespace popgrowth {

// Checkpoint container: 8-byte magic, u64 little-endian header length, JSON
// header, then one raw little-endian f64 blob per tensor in header order.
// Doubles are stored verbatim, so save/load round-trips bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'P', 'G', 'C', 'K', 'P', 'T', '0', '1'};

void write_checkpoint(const fs::path& path, nlohmann::json header,
                      const std::vector<std::pair<std::string, const nn::Tensor*>>& tensors);

struct CheckpointData {
    nlohmann::json header;
    std::map<std::string, nn::Tensor> tensors;
};

CheckpointData read_checkpoint(const fs::path& path);

// Copies named tensors from a checkpoint into live model state; throws on
// missing names or shape mismatches.
void restore_state(const CheckpointData& data,
                   const std::vector<std::pair<std::string, nn::Tensor*>>& state);

}  // namespace popgrowth
