#include "srfm/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "srfm/errors.hpp"

namespace srfm {
namespace {

constexpr char kMagic[8] = {'S', 'R', 'F', 'M', 'A', 'R', 'C', '1'};

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

}  // namespace

const Tensor& Archive::array(const std::string& name) const {
  auto it = arrays.find(name);
  if (it == arrays.end()) throw IoError("archive has no array '" + name + "'");
  return it->second;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  nlohmann::json header;
  header["manifest"] = archive.manifest;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.arrays) {
    const Shape& s = t.shape();
    header["arrays"].push_back({{"name", name},
                                {"shape", {s.n, s.c, s.h, s.w}},
                                {"offset", offset},
                                {"count", t.size()}});
    offset += t.size();
  }
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.arrays) {
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  in.seekg(0, std::ios::end);
  const auto file_size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);

  char magic[8];
  std::uint64_t length = 0;
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError(path.string() + ": not an srfm archive (bad magic)");
  }
  if (!in.read(reinterpret_cast<char*>(&length), sizeof(length)) ||
      16 + length > file_size) {
    throw IoError(path.string() + ": truncated header");
  }
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }

  Archive archive;
  archive.manifest = header.value("manifest", nlohmann::json::object());
  const std::uint64_t payload_start = 16 + length;
  const std::uint64_t payload_elems = (file_size - payload_start) / sizeof(double);
  try {
    for (const auto& entry : header.at("arrays")) {
      const auto name = entry.at("name").get<std::string>();
      const auto dims = entry.at("shape").get<std::vector<int>>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (dims.size() != 4) throw IoError("array '" + name + "' is not 4-D");
      const Shape shape{dims[0], dims[1], dims[2], dims[3]};
      if (shape.numel() != count || offset + count > payload_elems) {
        throw IoError(path.string() + ": array '" + name +
                      "' exceeds payload or has inconsistent size");
      }
      Tensor t(shape);
      in.seekg(static_cast<std::streamoff>(payload_start + offset * sizeof(double)));
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
      if (!in) throw IoError(path.string() + ": short read for '" + name + "'");
      archive.arrays.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": malformed array table: " + e.what());
  }
  return archive;
}

}  // namespace srfm
