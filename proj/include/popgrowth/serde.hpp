#pragma once

#include <json.hpp>

#include "popgrowth/encoder.hpp"

namespace popgrowth {

// Strict-key helper shared by the config parsers: rejects unknown keys.
void require_only_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                       const std::string& ctx);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& ctx);

nlohmann::json search_run_log_to_json(const SearchRunLog& run);
SearchRunLog search_run_log_from_json(const nlohmann::json& j);

}  // namespace popgrowth
