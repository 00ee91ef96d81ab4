#include "rrt/descriptors.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <unordered_set>
#include <utility>

#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"

namespace rrt {

namespace {

constexpr char kMagic[4] = {'R', 'R', 'T', 'D'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::vector<float> default_scale_values() {
  std::vector<float> scales;
  for (int k = 0; k < 7; ++k) scales.push_back(static_cast<float>(0.25 * std::pow(std::sqrt(2.0), k)));
  return scales;
}

void l2_normalize_inplace(std::span<float> vec) {
  double sq = 0.0;
  for (float x : vec) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw ConfigError("l2_normalize: vector of length " + std::to_string(vec.size()) + " has zero or non-finite norm");
  }
  for (float& x : vec) x = static_cast<float>(x / norm);
}

std::vector<float> l2_normalize(std::span<const float> vec) {
  std::vector<float> out(vec.begin(), vec.end());
  l2_normalize_inplace(out);
  return out;
}

void normalize_records(std::vector<ImageRecord>& records) {
  for (auto& r : records) {
    if (!r.global.empty()) l2_normalize_inplace(r.global);
    for (auto& l : r.locals) l2_normalize_inplace(l.vec);
  }
}

void validate_records(std::span<const ImageRecord> records, const DatasetManifest& manifest) {
  if (manifest.scale_values.size() != manifest.n_scales) {
    throw FormatError("manifest lists " + std::to_string(manifest.scale_values.size()) + " scale values for " +
                      std::to_string(manifest.n_scales) + " scales");
  }
  std::unordered_set<std::uint32_t> ids;
  for (const auto& r : records) {
    const auto where = "image " + std::to_string(r.id);
    if (!ids.insert(r.id).second) throw FormatError("duplicate image id " + std::to_string(r.id));
    if (r.global.size() != manifest.d_g_raw) {
      throw FormatError(where + ": global has " + std::to_string(r.global.size()) + " dims, expected " +
                        std::to_string(manifest.d_g_raw));
    }
    if (r.locals.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError(where + ": too many locals");
    }
    for (const auto& l : r.locals) {
      if (l.vec.size() != manifest.d_l) {
        throw FormatError(where + ": local has " + std::to_string(l.vec.size()) + " dims, expected " +
                          std::to_string(manifest.d_l));
      }
      if (l.scale_index >= manifest.n_scales) {
        throw FormatError(where + ": scale index " + std::to_string(l.scale_index) + " out of range");
      }
      if (!(l.u >= 0.0f) || !(l.v >= 0.0f)) throw FormatError(where + ": negative or NaN keypoint position");
    }
  }
}

std::vector<std::uint8_t> encode_dataset(std::span<const ImageRecord> records, const DatasetManifest& manifest) {
  validate_records(records, manifest);
  io::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(manifest.d_g_raw);
  w.u16(manifest.d_l);
  w.u8(manifest.n_scales);
  for (float s : manifest.scale_values) w.f32(s);
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(r.id);
    w.u32(r.label);
    for (float x : r.global) w.f32(x);
    w.u16(static_cast<std::uint16_t>(r.locals.size()));
    for (const auto& l : r.locals) {
      for (float x : l.vec) w.f32(x);
      w.f32(l.u);
      w.f32(l.v);
      w.u8(l.scale_index);
    }
  }
  return w.take();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  const auto magic = r.str(4, "magic");
  if (magic != std::string(kMagic, 4)) throw FormatError("bad magic at byte offset 0: not a descriptor file");
  const auto version_offset = r.offset();
  const auto version = r.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported descriptor file version " + std::to_string(version) + " at byte offset " +
                      std::to_string(version_offset));
  }
  Dataset ds;
  auto& m = ds.manifest;
  m.d_g_raw = r.u32("d_g_raw");
  m.d_l = r.u16("d_l");
  m.n_scales = r.u8("n_scales");
  m.scale_values.clear();
  for (std::uint8_t i = 0; i < m.n_scales; ++i) m.scale_values.push_back(r.f32("scale value"));
  const auto n_images = r.u32("image count");
  // Cheapest possible image: id, label, global, zero locals.
  const std::size_t min_image_bytes = 4 + 4 + 4 * static_cast<std::size_t>(m.d_g_raw) + 2;
  r.need(std::min<std::size_t>(n_images, 1u << 20) * min_image_bytes, "image table");
  ds.records.reserve(n_images);
  for (std::uint32_t i = 0; i < n_images; ++i) {
    ImageRecord rec;
    rec.id = r.u32("image id");
    rec.label = r.u32("image label");
    rec.global.resize(m.d_g_raw);
    for (auto& x : rec.global) x = r.f32("global descriptor");
    const auto n_locals = r.u16("local count");
    rec.locals.resize(n_locals);
    for (auto& l : rec.locals) {
      l.vec.resize(m.d_l);
      for (auto& x : l.vec) x = r.f32("local descriptor");
      l.u = r.f32("local u");
      l.v = r.f32("local v");
      const auto scale_offset = r.offset();
      l.scale_index = r.u8("scale index");
      if (l.scale_index >= m.n_scales) {
        throw FormatError("scale index " + std::to_string(l.scale_index) + " out of range at byte offset " +
                          std::to_string(scale_offset));
      }
    }
    ds.records.push_back(std::move(rec));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after image table at byte offset " + std::to_string(r.offset()));
  m.n_gallery = n_images;
  return ds;
}

void save_dataset(const std::filesystem::path& path, std::span<const ImageRecord> records,
                  const DatasetManifest& manifest) {
  io::write_file(path, encode_dataset(records, manifest));
}

Dataset load_dataset(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  try {
    auto ds = decode_dataset(bytes);
    ds.manifest.name = path.stem().string();
    return ds;
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void truncate_locals(std::vector<ImageRecord>& records, std::size_t max_locals) {
  for (auto& r : records) {
    if (r.locals.size() > max_locals) r.locals.resize(max_locals);
  }
}

std::size_t grid_dedup_count(const ImageRecord& record, std::uint32_t stride) {
  if (stride == 0) throw ConfigError("grid_dedup_count: stride must be positive");
  std::set<std::pair<std::int64_t, std::int64_t>> cells;
  const double s = stride;
  for (const auto& l : record.locals) {
    cells.emplace(static_cast<std::int64_t>(std::floor(l.u / s)), static_cast<std::int64_t>(std::floor(l.v / s)));
  }
  return cells.size();
}

void write_labels_tsv(const std::filesystem::path& path, std::span<const ImageRecord> records) {
  std::string text;
  for (const auto& r : records) text += std::to_string(r.id) + "\t" + std::to_string(r.label) + "\n";
  io::write_text_file(path, text);
}

}  // namespace rrt
