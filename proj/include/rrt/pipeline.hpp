#pragma once

// End-to-end helpers shared by the CLI and the benchmark: batch retrieval,
// batch reranking, the part-overlap oracle scorer and the frozen synthetic
// benchmark.

#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "rrt/baselines.hpp"
#include "rrt/eval.hpp"
#include "rrt/model.hpp"
#include "rrt/retrieval.hpp"
#include "rrt/synth.hpp"
#include "rrt/trainer.hpp"

namespace rrt {

// Global top-k for every query (the query's own id is excluded).
std::vector<NeighborList> retrieve_all(const GlobalIndex& index, std::span<const ImageRecord> queries, std::size_t k,
                                       const Model<float>* projection = nullptr);

using ScorerFactory = std::function<BatchScorer(const ImageRecord& query)>;

// rerank_topk over every list; lists[i] must belong to queries[i].
std::vector<NeighborList> rerank_all(std::span<const NeighborList> lists, std::span<const ImageRecord> queries,
                                     const ScorerFactory& factory, std::size_t K, const std::string& method);

// Part ids of every gallery image, keyed by image id.
using PartIdTable = std::unordered_map<std::uint32_t, std::vector<std::uint32_t>>;
PartIdTable part_id_table(const SynthPrototypes& prototypes, const RecordMap& gallery,
                          double min_cosine = kOracleMinCosine);

// Number of synthetic part prototypes two images share.
BatchScorer make_oracle_scorer(const SynthPrototypes& prototypes, const ImageRecord& query,
                               const PartIdTable& gallery_parts, double min_cosine = kOracleMinCosine);

struct BenchmarkConfig {
  SynthConfig eval_data;   // queries + gallery that are scored
  SynthConfig train_data;  // disjoint instances used for training
  ModelConfig model;
  TrainConfig train;
  std::uint64_t model_seed = 0;
  std::size_t k = 100;  // rerank depth
  std::vector<std::size_t> ablation_counts;
};

// The committed benchmark configuration; `seed` varies data, init and
// sampling together.
BenchmarkConfig frozen_benchmark(std::uint64_t seed);

struct BenchmarkResult {
  double map_global = 0.0;
  double map_oracle = 0.0;
  double map_rrt = 0.0;
  double map_gv = 0.0;
  double map_aqe = 0.0;
  std::vector<AblationRow> ablation;
  std::vector<LossRecord> history;
};

struct BenchmarkOptions {
  bool run_baselines = false;
  bool run_ablation = false;
  unsigned threads = 1;
};

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const BenchmarkOptions& options);

}  // namespace rrt
