#pragma once

#include <filesystem>

#include "jv/tensor.hpp"

namespace jv {

/// Binary PGM (P5, 1 channel) or PPM (P6, 3 channels), maxval <= 255.
/// Returns h x w x c with values in [0, 255].
Tensor read_pnm(const std::filesystem::path& path);

/// Writes P5 for 1 channel, P6 for 3. Values are rounded and clamped to [0, 255].
void write_pnm(const std::filesystem::path& path, const Tensor& img);

}  // namespace jv
