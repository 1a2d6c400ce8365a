#pragma once

#include <filesystem>

#include "stict/tensor.hpp"

namespace stict {

/// Little-endian float sentinel opening every .flo file.
inline constexpr float kFloSentinel = 202021.25f;

/// Binary P6, maxval 255. `frame` is 1 x 3 x H x W with values in [0, 1]; values are
/// rounded to the nearest 1/255 step.
void write_ppm(const std::filesystem::path& path, const Tensor<float>& frame);
/// Returns 1 x 3 x H x W with values k / 255.
Tensor<float> read_ppm(const std::filesystem::path& path);

/// Binary P5, maxval 255. `map` is 1 x 1 x H x W in [0, 1] (masks become 0/255).
void write_pgm(const std::filesystem::path& path, const Tensor<float>& map);
/// Returns 1 x 1 x H x W with values k / 255.
Tensor<float> read_pgm(const std::filesystem::path& path);
/// read_pgm, then requires every value to be 0 or 1 (stored as 0 or 255).
Tensor<float> read_mask(const std::filesystem::path& path);

/// Sentinel, int32 width, int32 height, then row-major interleaved (u, v) float32 pairs,
/// all little-endian. `flow` is 1 x 2 x H x W.
void write_flo(const std::filesystem::path& path, const Tensor<float>& flow);
Tensor<float> read_flo(const std::filesystem::path& path);

}  // namespace stict
