#pragma once

// Supervised pair training of the reranker: for every anchor one positive
// (uniform over same-label images) and one negative (uniform over the anchor's
// different-label global neighbors), binary cross-entropy, AdamW.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/model.hpp"
#include "rrt/retrieval.hpp"

namespace rrt {

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 4e-4;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;  // anchors per step; each contributes 2 pairs
  std::uint64_t seed = 0;
  std::optional<double> grad_clip_norm;
  std::size_t neg_pool_size = 100;
  std::size_t steps_per_epoch = 0;  // 0: one pass over the shuffled anchors
  bool step_schedule = false;       // lr x0.1 after 60% and again after 80% of epochs

  void validate() const;
};

struct PairSample {
  std::uint32_t anchor = 0;
  std::uint32_t partner = 0;
  int label = 0;  // 1 same instance, 0 different
  bool operator==(const PairSample&) const = default;
};

// Training images with their label groups and precomputed global neighbor
// lists (self excluded).
class TrainingSet {
 public:
  TrainingSet(std::vector<ImageRecord> images, std::size_t neg_pool_size);
  // The record map points into images_, so copies are not allowed.
  TrainingSet(const TrainingSet&) = delete;
  TrainingSet& operator=(const TrainingSet&) = delete;
  TrainingSet(TrainingSet&&) = default;

  const std::vector<ImageRecord>& images() const { return images_; }
  const ImageRecord& record(std::uint32_t id) const;
  const RecordMap& record_map() const { return map_; }
  const NeighborList& neighbors(std::uint32_t id) const;
  const std::vector<std::uint32_t>& label_members(std::uint32_t label) const;
  std::size_t neg_pool_size() const { return neg_pool_size_; }

 private:
  std::vector<ImageRecord> images_;
  RecordMap map_;
  std::unordered_map<std::uint32_t, NeighborList> neighbors_;
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> by_label_;
  std::size_t neg_pool_size_;
};

struct SampledPairs {
  PairSample positive;
  PairSample negative;
  bool negative_fallback = false;  // no different-label image among the top neighbors
};

// nullopt when the anchor has no same-label partner.
std::optional<SampledPairs> sample_pair(const TrainingSet& set, std::uint32_t anchor, std::mt19937_64& rng);

struct LossRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // after clipping
};

struct TrainResult {
  std::vector<LossRecord> history;
  std::size_t skipped_anchors = 0;
  std::size_t negative_fallbacks = 0;
};

// Called after every epoch with the 1-based epoch number.
using EpochCallback = std::function<void(std::size_t, const Model<float>&)>;

TrainResult train(const TrainingSet& set, const TrainConfig& cfg, Model<float>& model,
                  const EpochCallback& on_epoch = {});

// Full-batch optimization on a fixed pair list for `steps` steps.
TrainResult fit_pairs(const RecordMap& records, std::span<const PairSample> pairs, const TrainConfig& cfg,
                      Model<float>& model, std::size_t steps);

// Mean BCE over the pairs; the model is not modified.
double evaluate_loss(const RecordMap& records, const Model<float>& model, std::span<const PairSample> pairs);

std::string loss_csv(std::span<const LossRecord> history);
void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);

}  // namespace rrt
