#pragma once

#include "vesseldg/nn/layers.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace vdg {

/// Versioned binary container of named parameter tensors plus a free-form
/// JSON config snapshot. load_checkpoint validates the shape table bit-exactly
/// against the destination parameters and returns the stored config.
void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<nn::ParamTensor<float>*>& params, const std::string& config_json);

std::string load_checkpoint(const std::filesystem::path& path,
                            const std::vector<nn::ParamTensor<float>*>& params);

}  // namespace vdg
