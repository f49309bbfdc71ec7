#include "pvit/report.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <zlib.h>

namespace pvit {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_chunk(std::vector<std::uint8_t>& out, const char (&type)[5], std::span<const std::uint8_t> data) {
  put_u32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  // CRC covers the type and the data.
  const uLong crc = ::crc32(::crc32(0L, Z_NULL, 0), out.data() + start, static_cast<uInt>(out.size() - start));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

std::vector<std::uint8_t> map_pixels(const Tensor& image, Rgb (*color)(double)) {
  if (image.rank() != 2) throw DimensionError("image must be a matrix");
  std::vector<std::uint8_t> out;
  out.reserve(image.size() * 3);
  for (double v : image.data()) {
    const Rgb c = color(v);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

}  // namespace

Rgb saliency_color(std::uint8_t index) {
  const int i = 3 * index;
  auto clamp8 = [](int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); };
  return {clamp8(i), clamp8(i - 255), clamp8(i - 510)};
}

std::uint8_t quantize(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::vector<std::uint8_t> gray_rgb(const Tensor& image) {
  return map_pixels(image, [](double v) {
    const std::uint8_t g = quantize(v);
    return Rgb{g, g, g};
  });
}

std::vector<std::uint8_t> saliency_rgb(const Tensor& saliency) {
  return map_pixels(saliency, [](double v) { return saliency_color(quantize(v)); });
}

std::vector<std::uint8_t> composite_rgb(const Tensor& image, const Tensor& saliency) {
  if (image.shape() != saliency.shape()) throw DimensionError("composite: image and saliency shapes differ");
  const auto gray = gray_rgb(image), heat = saliency_rgb(saliency);
  std::vector<std::uint8_t> out(gray.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::min(255L, std::lround(0.5 * gray[i] + 0.5 * heat[i])));
  }
  return out;
}

std::vector<std::uint8_t> encode_png(std::span<const std::uint8_t> rgb, std::size_t width, std::size_t height) {
  if (rgb.size() != width * height * 3 || width == 0 || height == 0) {
    throw std::invalid_argument("encode_png: pixel buffer does not match width × height × 3");
  }
  // Filter type 0 on every scanline.
  std::vector<std::uint8_t> raw;
  raw.reserve(height * (1 + 3 * width));
  for (std::size_t r = 0; r < height; ++r) {
    raw.push_back(0);
    raw.insert(raw.end(), rgb.begin() + static_cast<std::ptrdiff_t>(r * 3 * width),
               rgb.begin() + static_cast<std::ptrdiff_t>((r + 1) * 3 * width));
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_len);
  if (compress2(packed.data(), &packed_len, raw.data(), static_cast<uLong>(raw.size()), Z_BEST_COMPRESSION) != Z_OK) {
    throw std::runtime_error("encode_png: deflate failed");
  }
  packed.resize(packed_len);

  std::vector<std::uint8_t> png{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width));
  put_u32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // depth 8, RGB, deflate, adaptive filters, no interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", packed);
  put_chunk(png, "IEND", {});
  return png;
}

std::string base64(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    const std::size_t n = std::min<std::size_t>(3, bytes.size() - i);
    std::uint32_t v = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (n > 1) v |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (n > 2) v |= bytes[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(n > 1 ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back(n > 2 ? kAlphabet[v & 63] : '=');
  }
  return out;
}

}  // namespace pvit
