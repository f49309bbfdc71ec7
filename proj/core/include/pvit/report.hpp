#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pvit/tensor.hpp"

namespace pvit {

using Rgb = std::array<std::uint8_t, 3>;

/// Entry i of the 256-entry black→red→yellow→white saliency lookup:
/// r = min(255, 3i), g = clamp(3i − 255), b = clamp(3i − 510).
Rgb saliency_color(std::uint8_t index);

/// round(clamp(v, 0, 1)·255).
std::uint8_t quantize(double v);

/// Interleaved RGB rows for an image in [0, 1] mapped through the gray ramp or the lookup.
std::vector<std::uint8_t> gray_rgb(const Tensor& image);
std::vector<std::uint8_t> saliency_rgb(const Tensor& saliency);
/// 0.5·gray + 0.5·colormapped saliency per channel, rounded and clipped to 8 bits.
std::vector<std::uint8_t> composite_rgb(const Tensor& image, const Tensor& saliency);

/// 8-bit RGB PNG (color type 2, no interlace), one deflate stream.
std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height);

std::string base64(std::span<const std::uint8_t> bytes);

}  // namespace pvit
