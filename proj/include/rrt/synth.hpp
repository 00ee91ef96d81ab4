#pragma once

// Planted-part synthetic descriptor datasets.
//
// Every instance owns a set of unit "part" prototypes with canonical keypoint
// positions and a global prototype. Instances are optionally grouped in
// confusion pairs that share (almost) the same global prototype but have
// disjoint parts, so global retrieval cannot separate them while local
// descriptors can. Each image shows a random subset of its instance's parts
// under a random similarity warp, mixed with random distractor locals.

#include <cstdint>
#include <span>
#include <vector>

#include "rrt/descriptors.hpp"

namespace rrt {

struct SynthConfig {
  std::uint32_t n_instances = 60;
  std::uint32_t queries_per_instance = 1;
  std::uint32_t gallery_per_instance = 5;
  std::uint32_t parts_per_instance = 12;  // P
  std::uint32_t parts_per_image = 8;      // p <= P
  std::uint32_t locals_per_image = 40;    // L >= p
  std::uint16_t d_l = 32;
  std::uint32_t d_g_raw = 256;
  std::uint32_t confusion_pairs = 30;  // instances (2k, 2k+1) share a global prototype
  double local_noise = 0.3;            // relative perturbation of part descriptors
  double global_noise = 0.15;          // relative perturbation of image globals
  double confusion_noise = 0.05;       // offset between confused global prototypes
  double position_jitter_px = 0.5;
  bool warp = true;
  std::uint64_t seed = 1;
  std::uint32_t id_offset = 0;
  std::uint32_t label_offset = 0;

  void validate() const;
};

struct SynthSplit {
  std::vector<ImageRecord> queries;
  std::vector<ImageRecord> gallery;
  DatasetManifest manifest;
};

SynthSplit synth_generate(const SynthConfig& cfg);

// The part prototypes of a configuration, replayed from its seed. Prototype
// p of instance i has id i * parts_per_instance + p.
struct SynthPrototypes {
  std::uint16_t d_l = 0;
  std::vector<std::vector<float>> parts;
};

SynthPrototypes synth_prototypes(const SynthConfig& cfg);

// Random unit vectors in the default dimension rarely exceed 0.6 cosine
// with any prototype, while planted parts stay above 0.9.
inline constexpr double kOracleMinCosine = 0.75;

// Nearest-prototype id of every local whose cosine to that prototype is at
// least min_cosine; sorted and deduplicated.
std::vector<std::uint32_t> part_ids(const ImageRecord& record, const SynthPrototypes& prototypes,
                                    double min_cosine = kOracleMinCosine);

// Number of part ids two sorted id lists share.
std::size_t shared_part_count(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

}  // namespace rrt
