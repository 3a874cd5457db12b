#pragma once

#include <string>

#include "mfv/model.hpp"

namespace mfv {

// JSON (de)serialization of ModelConfig; missing fields keep the base value.
ModelConfig config_from_json_text(const std::string& text, ModelConfig base);
std::string config_to_json_text(const ModelConfig& cfg);

ModelConfig load_config_file(const std::string& path, ModelConfig base);
void save_config_file(const std::string& path, const ModelConfig& cfg);  // temp + rename

}  // namespace mfv
