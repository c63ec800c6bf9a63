#pragma once

#include <map>
#include <string>

#include "xtra/model.hpp"
#include "xtra/trainer.hpp"

namespace xtra {

// Flat key = value TOML subset: strings, numbers, booleans, # comments.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_flat_toml(const std::string& text);
ConfigMap load_flat_toml(const std::string& path);

ModelConfig model_config_from(const ConfigMap& map);
TrainConfig train_config_from(const ConfigMap& map);

// Serializes both configs as one flat document, keys sorted.
std::string to_toml(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

}  // namespace xtra
