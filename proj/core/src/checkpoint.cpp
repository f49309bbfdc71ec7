#include "pvit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

namespace pvit {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[5] = {'P', 'V', 'I', 'T', '1'};

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw CheckpointError("checkpoint truncated");
  T value;
  std::memcpy(&value, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - pos, 1u << 30));
    crc = ::crc32(crc, bytes.data() + pos, chunk);
    pos += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  nlohmann::json header;
  header["format"] = "PVIT1";
  header["config"] = params.config();
  std::string payload;
  payload.reserve(params.scalar_count() * sizeof(double));
  auto index = nlohmann::json::array();
  for (const auto& [name, value] : params.tensors()) {
    index.push_back({{"name", name}, {"shape", value.shape()}, {"offset", payload.size()}, {"count", value.size()}});
    for (double v : value.data()) put(payload, v);
  }
  header["tensors"] = index;
  const std::string header_text = header.dump();

  std::string file(kMagic, sizeof(kMagic));
  put<std::uint64_t>(file, header_text.size());
  file += header_text;
  file += payload;
  put<std::uint32_t>(file, crc32({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()}));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(file.data(), static_cast<std::streamsize>(file.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (file.size() < sizeof(kMagic) || std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": bad magic, not a PVIT1 checkpoint");
  }
  std::size_t pos = sizeof(kMagic);
  const auto header_len = take<std::uint64_t>(file, pos);
  if (header_len > file.size() - pos) throw CheckpointError(path.string() + ": checkpoint truncated in header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  pos += header_len;
  if (file.size() < pos + sizeof(std::uint32_t)) throw CheckpointError(path.string() + ": checkpoint truncated");
  const std::size_t payload_len = file.size() - pos - sizeof(std::uint32_t);
  const auto* payload = reinterpret_cast<const unsigned char*>(file.data() + pos);
  std::size_t crc_pos = pos + payload_len;
  const auto stored_crc = take<std::uint32_t>(file, crc_pos);
  if (crc32({payload, payload_len}) != stored_crc) {
    throw CheckpointError(path.string() + ": checksum mismatch (truncated or corrupt payload)");
  }

  ModelParams params(header.at("config").get<ViTConfig>());
  const auto& index = header.at("tensors");
  if (index.size() != params.tensors().size()) throw CheckpointError(path.string() + ": tensor count mismatch");
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto& target = params.tensors()[i];
    const auto& entry = index[i];
    if (entry.at("name").get<std::string>() != target.name ||
        entry.at("shape").get<Shape>() != target.value.shape()) {
      throw CheckpointError(path.string() + ": tensor " + entry.at("name").get<std::string>() +
                            " does not match its config");
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto count = entry.at("count").get<std::size_t>();
    if (count != target.value.size() || offset + count * sizeof(double) > payload_len) {
      throw CheckpointError(path.string() + ": tensor " + target.name + " exceeds payload");
    }
    std::memcpy(target.value.data().data(), payload + offset, count * sizeof(double));
  }
  return params;
}

ModelParams load_params(const std::filesystem::path& path, const ViTConfig& expected) {
  ModelParams loaded = load_params(path);
  const ModelParams reference(expected);
  const auto& got = loaded.tensors();
  const auto& want = reference.tensors();
  for (std::size_t i = 0; i < std::max(got.size(), want.size()); ++i) {
    if (i >= got.size() || i >= want.size() || got[i].name != want[i].name ||
        got[i].value.shape() != want[i].value.shape()) {
      const std::string name = i < want.size() ? want[i].name : got[i].name;
      const std::string have = i < got.size() ? shape_string(got[i].value.shape()) : "missing";
      const std::string need = i < want.size() ? shape_string(want[i].value.shape()) : "absent";
      throw CheckpointError("shape mismatch loading " + path.string() + ": " + name + " is " + have +
                            ", config expects " + need);
    }
  }
  if (!(loaded.config() == expected)) throw CheckpointError("config mismatch loading " + path.string());
  return loaded;
}

}  // namespace pvit
