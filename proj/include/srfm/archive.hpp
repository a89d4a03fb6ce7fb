#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "srfm/tensor.hpp"

namespace srfm {

/// Single-file container of named float64 arrays plus a JSON manifest.
///
/// Layout (all integers little-endian):
///
///     offset 0   8 bytes   magic "SRFMARC1"
///     offset 8   u64       header length L
///     offset 16  L bytes   UTF-8 JSON header
///     offset 16+L          payload: float64 arrays, back to back
///
/// The header is `{"manifest": {...}, "arrays": [{"name", "shape":[n,c,h,w],
/// "offset", "count"}, ...]}` where `offset` counts float64 elements from the
/// start of the payload. Arrays are listed in lexicographic name order.
struct Archive {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Tensor> arrays;

  [[nodiscard]] const Tensor& array(const std::string& name) const;
};

/// Write atomically (temp file in the same directory, then rename).
void write_archive(const std::filesystem::path& path, const Archive& archive);
/// Throws IoError on a missing, truncated or malformed file.
Archive read_archive(const std::filesystem::path& path);

}  // namespace srfm
