#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "scanet/model.hpp"
#include "scanet/tensor.hpp"

namespace scanet {

// Layout (little-endian): "SCKP" | u32 version=1, then one record per
// parameter in the model's registration order:
//   u32 name length | name bytes | u32 rank | u32 extents... | f32 payload
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<std::pair<std::string, Tensor>>& params);

// Reads every record; names, shapes, and order must match `params` exactly.
// Values are written into the existing tensors.
void load_checkpoint(const std::filesystem::path& path,
                     std::vector<std::pair<std::string, Tensor>>& params);

// Human-readable description of a model emitted beside each checkpoint.
std::string model_card(const ModelConfig& config, long long parameter_count);

}  // namespace scanet
