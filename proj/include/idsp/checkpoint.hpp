#pragma once

// Checkpoint layout:
//   "IDSPCKPT1"
//   u64 little-endian manifest length, then the manifest as UTF-8 JSON:
//     {"meta": {...}, "tensors": [{"name": .., "rows": .., "cols": ..}, ...]}
//   every tensor's entries as little-endian IEEE-754 doubles, in manifest
//   order (lexicographic by name).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "idsp/error.hpp"
#include "idsp/tensor.hpp"

namespace idsp {

inline constexpr char kCheckpointMagic[] = "IDSPCKPT1";

struct Checkpoint {
  ParamStore params;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["meta"] = ck.meta;
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ck.params)
    manifest["tensors"].push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  const std::string text = manifest.dump();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  detail::write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : ck.params) {
    for (double v : t.values()) detail::write_u64(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw DataError("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic) - 1];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError("checkpoint: bad magic, expected IDSPCKPT1");
  const std::uint64_t len = detail::read_u64(is);
  if (len > (1ULL << 30)) throw DataError("checkpoint: implausible manifest length");
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len)))
    throw DataError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& entry : manifest.at("tensors")) {
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      std::vector<double> data(rows * cols);
      for (double& v : data) {
        unsigned char b[8];
        if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("checkpoint: truncated tensor data");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        v = std::bit_cast<double>(bits);
      }
      ck.params.add(entry.at("name").get<std::string>(), Tensor(rows, cols, std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace idsp
