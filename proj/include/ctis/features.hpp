#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "ctis/error.hpp"
#include "ctis/hash.hpp"

namespace ctis {

namespace detail {

inline void le_put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void le_put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void le_put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void le_put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  le_put_u32(buf, bits);
}

inline void le_put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  le_put_u64(buf, bits);
}

inline void le_put_i32(std::string& buf, std::int32_t v) {
  le_put_u32(buf, static_cast<std::uint32_t>(v));
}

inline std::uint16_t le_get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::uint32_t le_get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint64_t le_get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline float le_get_f32(const unsigned char* p) {
  const std::uint32_t bits = le_get_u32(p);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline double le_get_f64(const unsigned char* p) {
  const std::uint64_t bits = le_get_u64(p);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::int32_t le_get_i32(const unsigned char* p) {
  return static_cast<std::int32_t>(le_get_u32(p));
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(!in.bad(), Errc::io_failure, "read failed on " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

} // namespace detail

// Per-slide patch embeddings, row-major float32, with optional patch grid
// coordinates. The canonical on-disk form is the CTISFEAT container.
struct PatchFeatureMatrix {
  std::string slide_id;
  std::size_t n_patches = 0;
  std::size_t dim = 0;
  std::vector<float> data;          // n_patches * dim, row-major
  std::vector<std::int32_t> coords; // empty, or 2 * n_patches (x, y per patch)

  bool has_coords() const { return !coords.empty(); }

  float at(std::size_t i, std::size_t j) const { return data[i * dim + j]; }
  float& at(std::size_t i, std::size_t j) { return data[i * dim + j]; }

  void validate() const {
    require(n_patches >= 1, Errc::invalid_shape, "n_patches must be >= 1");
    require(dim >= 1, Errc::invalid_shape, "dim must be >= 1");
    require(data.size() == n_patches * dim, Errc::invalid_shape,
            "data size " + std::to_string(data.size()) + " != n_patches*dim");
    for (std::size_t i = 0; i < data.size(); ++i) {
      require(std::isfinite(data[i]), Errc::non_finite_value,
              "non-finite element at flat index " + std::to_string(i));
    }
    if (!coords.empty()) {
      require(coords.size() == 2 * n_patches, Errc::invalid_shape,
              "coords must have exactly n_patches rows");
      for (std::size_t i = 0; i < coords.size(); ++i) {
        require(coords[i] >= 0, Errc::invalid_shape,
                "negative coord at flat index " + std::to_string(i));
      }
    }
  }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n_patches), static_cast<Eigen::Index>(dim));
    for (std::size_t i = 0; i < n_patches; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = at(i, j);
    return m;
  }
};

inline constexpr std::string_view kFeatureMagic = "CTISFEAT";
inline constexpr std::uint16_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderSize = 32;
inline constexpr std::uint32_t kFlagCoordsPresent = 1u;

// Serializes to: 32-byte header (magic, version u16, N u64, d u32, flags u32,
// 6 reserved zero bytes), float32 LE payload row-major, optional int32 LE
// coords block, u64 LE FNV-1a trailer over all preceding bytes.
inline std::uint64_t write_features(const PatchFeatureMatrix& m, const std::filesystem::path& path) {
  m.validate();
  std::string buf;
  buf.reserve(kFeatureHeaderSize + m.data.size() * 4 + m.coords.size() * 4 + 8);
  buf.append(kFeatureMagic);
  detail::le_put_u16(buf, kFeatureVersion);
  detail::le_put_u64(buf, m.n_patches);
  detail::le_put_u32(buf, static_cast<std::uint32_t>(m.dim));
  detail::le_put_u32(buf, m.has_coords() ? kFlagCoordsPresent : 0u);
  buf.append(6, '\0');
  for (float v : m.data) detail::le_put_f32(buf, v);
  for (std::int32_t c : m.coords) detail::le_put_i32(buf, c);
  const std::uint64_t checksum = fnv1a64(buf.data(), buf.size());
  detail::le_put_u64(buf, checksum);
  detail::write_file_bytes(path, buf);
  return checksum;
}

inline PatchFeatureMatrix read_features(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());

  require(bytes.size() >= kFeatureHeaderSize, Errc::truncated_payload,
          path.string() + ": file shorter than 32-byte header (size " +
              std::to_string(bytes.size()) + ")");
  require(std::memcmp(bytes.data(), kFeatureMagic.data(), 8) == 0, Errc::bad_magic,
          path.string() + ": bad magic at byte offset 0");
  const std::uint16_t version = detail::le_get_u16(p + 8);
  require(version == kFeatureVersion, Errc::version_mismatch,
          path.string() + ": unsupported version " + std::to_string(version) +
              " at byte offset 8");
  const std::uint64_t n = detail::le_get_u64(p + 10);
  const std::uint32_t d = detail::le_get_u32(p + 18);
  const std::uint32_t flags = detail::le_get_u32(p + 22);
  require(n >= 1 && d >= 1, Errc::invalid_shape,
          path.string() + ": invalid shape N=" + std::to_string(n) + " d=" + std::to_string(d));
  const bool with_coords = (flags & kFlagCoordsPresent) != 0;

  const std::size_t payload_bytes = static_cast<std::size_t>(n) * d * 4;
  const std::size_t coords_bytes = with_coords ? static_cast<std::size_t>(n) * 2 * 4 : 0;
  const std::size_t expected = kFeatureHeaderSize + payload_bytes + coords_bytes + 8;
  require(bytes.size() == expected, Errc::truncated_payload,
          path.string() + ": expected " + std::to_string(expected) + " bytes, got " +
              std::to_string(bytes.size()) + " (payload starts at byte offset 32)");

  const std::uint64_t stored = detail::le_get_u64(p + bytes.size() - 8);
  const std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
  require(stored == actual, Errc::checksum_mismatch,
          path.string() + ": checksum trailer at byte offset " +
              std::to_string(bytes.size() - 8) + " does not match contents");

  PatchFeatureMatrix m;
  m.slide_id = path.stem().string();
  m.n_patches = static_cast<std::size_t>(n);
  m.dim = d;
  m.data.resize(m.n_patches * m.dim);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const std::size_t off = kFeatureHeaderSize + i * 4;
    m.data[i] = detail::le_get_f32(p + off);
    require(std::isfinite(m.data[i]), Errc::non_finite_value,
            path.string() + ": non-finite value at byte offset " + std::to_string(off));
  }
  if (with_coords) {
    m.coords.resize(m.n_patches * 2);
    for (std::size_t i = 0; i < m.coords.size(); ++i) {
      const std::size_t off = kFeatureHeaderSize + payload_bytes + i * 4;
      m.coords[i] = detail::le_get_i32(p + off);
      require(m.coords[i] >= 0, Errc::invalid_shape,
              path.string() + ": negative coord at byte offset " + std::to_string(off));
    }
  }
  return m;
}

// --- slide manifest: one JSON object per line ---

struct ManifestEntry {
  std::string slide_id;
  std::string path; // relative to the manifest's directory, or absolute
  std::size_t n_patches = 0;
  std::size_t dim = 0;
  std::uint64_t checksum = 0;
};

using SlideManifest = std::vector<ManifestEntry>;

inline void write_slide_manifest(const SlideManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), Errc::io_failure, "cannot open " + path.string());
  for (const auto& e : manifest) {
    nlohmann::ordered_json j;
    j["slide_id"] = e.slide_id;
    j["path"] = e.path;
    j["n_patches"] = e.n_patches;
    j["dim"] = e.dim;
    j["checksum"] = to_hex(e.checksum);
    out << j.dump() << '\n';
  }
  require(out.good(), Errc::io_failure, "write failed on " + path.string());
}

inline SlideManifest read_slide_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), Errc::io_failure, "cannot open " + path.string());
  SlideManifest manifest;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::file_format, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ManifestEntry e;
    try {
      e.slide_id = j.at("slide_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.n_patches = j.at("n_patches").get<std::size_t>();
      e.dim = j.at("dim").get<std::size_t>();
      e.checksum = std::stoull(j.at("checksum").get<std::string>(), nullptr, 16);
    } catch (const std::exception& e2) {
      fail(Errc::file_format, path.string() + ":" + std::to_string(line_no) + ": " + e2.what());
    }
    require(seen.insert(e.slide_id).second, Errc::duplicate_key,
            path.string() + ":" + std::to_string(line_no) + ": duplicate slide_id " + e.slide_id);
    manifest.push_back(std::move(e));
  }
  return manifest;
}

inline std::filesystem::path resolve_manifest_path(const std::filesystem::path& manifest_path,
                                                   const std::string& entry_path) {
  std::filesystem::path p(entry_path);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

// Recomputes each file's checksum and compares with both the manifest entry
// and the file's own trailer.
inline void validate_slide_manifest(const SlideManifest& manifest,
                                    const std::filesystem::path& manifest_path) {
  for (const auto& e : manifest) {
    const auto file = resolve_manifest_path(manifest_path, e.path);
    const std::string bytes = detail::read_file_bytes(file);
    require(bytes.size() > 8, Errc::truncated_payload, file.string() + ": too short");
    const std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
    const std::uint64_t trailer =
        detail::le_get_u64(reinterpret_cast<const unsigned char*>(bytes.data()) + bytes.size() - 8);
    require(actual == trailer && actual == e.checksum, Errc::checksum_mismatch,
            file.string() + ": checksum does not match manifest entry for " + e.slide_id);
  }
}

} // namespace ctis
