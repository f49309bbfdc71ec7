#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>

#include "pvit/vit.hpp"

namespace pvit {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout: "PVIT1", u64 LE header length, UTF-8 JSON header (config + tensor index with
/// byte offsets into the payload), little-endian f64 payload, u32 LE CRC-32 of the payload.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);
/// As load_params, but every tensor must match the shapes induced by `expected`.
ModelParams load_params(const std::filesystem::path& path, const ViTConfig& expected);

std::uint32_t crc32(std::span<const unsigned char> bytes);

}  // namespace pvit
