#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rrt {

struct LocalDescriptor {
  std::vector<float> vec;
  float u = 0.0f;
  float v = 0.0f;
  std::uint8_t scale_index = 0;

  bool operator==(const LocalDescriptor&) const = default;
};

struct ImageRecord {
  std::uint32_t id = 0;
  std::uint32_t label = 0;  // instance identity
  std::vector<float> global;
  std::vector<LocalDescriptor> locals;

  bool operator==(const ImageRecord&) const = default;
};

// The seven multi-scale extraction factors, log-spaced from 0.25 to 2.0.
std::vector<float> default_scale_values();

struct DatasetManifest {
  std::string name = "dataset";
  std::uint32_t d_g_raw = 2048;
  std::uint16_t d_l = 128;
  std::uint8_t n_scales = 7;
  std::vector<float> scale_values = default_scale_values();
  std::uint32_t n_queries = 0;
  std::uint32_t n_gallery = 0;
  std::uint64_t seed = 0;  // generator seed, 0 when not synthetic

  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageRecord> records;
};

// Unit-norm copy. Throws ConfigError on a zero (or non-finite) vector.
std::vector<float> l2_normalize(std::span<const float> vec);
void l2_normalize_inplace(std::span<float> vec);

// Normalizes every global and local vector in place.
void normalize_records(std::vector<ImageRecord>& records);

// Checks record shapes against the manifest and id uniqueness. Throws
// FormatError naming the first offending record.
void validate_records(std::span<const ImageRecord> records, const DatasetManifest& manifest);

// Binary descriptor file ("RRTD", little-endian, version 1). Only the
// descriptor payload is persisted: d_g_raw, d_l, scale set and the records.
// The remaining manifest fields (name, counts, seed) are reconstructed as
// name = file stem, n_gallery = record count, seed = 0.
void save_dataset(const std::filesystem::path& path, std::span<const ImageRecord> records,
                  const DatasetManifest& manifest);
Dataset load_dataset(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_dataset(std::span<const ImageRecord> records, const DatasetManifest& manifest);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

// Truncates every record to at most max_locals locals, keeping file order.
void truncate_locals(std::vector<ImageRecord>& records, std::size_t max_locals);

// Number of distinct (floor(u/stride), floor(v/stride)) cells occupied by the
// record's locals, ignoring scale.
std::size_t grid_dedup_count(const ImageRecord& record, std::uint32_t stride);

// "id<TAB>label" lines.
void write_labels_tsv(const std::filesystem::path& path, std::span<const ImageRecord> records);

}  // namespace rrt
