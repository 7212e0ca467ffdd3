#pragma once

#include "vera/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>

namespace vera {

/// Versioned binary container of named tensors plus a JSON metadata block.
///
/// Byte layout (little-endian throughout):
///   magic "VERACKPT" (8 bytes)
///   u32   format version
///   u64   step counter
///   u64   metadata length, then that many bytes of UTF-8 JSON
///   u64   tensor count
///   per tensor, sorted by name:
///     u32 name length, name bytes
///     u64 rows, u64 cols
///     rows*cols f64 values, column-major
/// Save/load round trips are byte-exact: doubles are stored verbatim and the
/// map ordering fixes the entry order.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::uint32_t format_version = kFormatVersion;
  std::uint64_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Mat> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace vera
