#pragma once

#include "vesseldg/tensor.hpp"

#include <filesystem>
#include <string>

namespace vdg {

/// Lossless grayscale image files. Single-channel tensors in [0,1] are stored
/// as 16-bit binary PGM (P5, maxval 65535); binary masks as 8-bit PGM with
/// maxval 1. Values outside [0,1] are clipped on write.
void write_pgm16(const std::filesystem::path& path, const Tensorf& image);
Tensorf read_pgm(const std::filesystem::path& path);

void write_pgm_binary(const std::filesystem::path& path, const Eigen::ArrayXX<unsigned char>& mask);
Eigen::ArrayXX<unsigned char> read_pgm_binary(const std::filesystem::path& path);

}  // namespace vdg
