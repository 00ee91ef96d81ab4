#pragma once

// Retrieval metrics and report emission.
//
// AP = (1/|R|) sum over hits of precision@rank; relevant items missing from
// the ranking contribute 0. The truncated variant at K divides by min(|R|, K).
// Queries whose relevant set is empty are excluded from every aggregate and
// counted separately.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/retrieval.hpp"

namespace rrt {

using RelevantSet = std::unordered_set<std::uint32_t>;
using GroundTruth = std::unordered_map<std::uint32_t, RelevantSet>;

// Gallery images sharing the query's label (the query's own id excluded).
GroundTruth ground_truth_from_labels(std::span<const ImageRecord> queries, std::span<const ImageRecord> gallery);

// nullopt for an empty relevant set. Throws ConfigError on duplicate ids.
std::optional<double> average_precision(std::span<const std::uint32_t> ranked, const RelevantSet& relevant);
std::optional<double> average_precision_at(std::span<const std::uint32_t> ranked, const RelevantSet& relevant,
                                           std::size_t k);
// 1-based rank of the first relevant id.
std::optional<std::size_t> first_relevant_rank(std::span<const std::uint32_t> ranked, const RelevantSet& relevant);

std::vector<std::uint32_t> ranked_ids(const NeighborList& list);

double mean_average_precision(std::span<const NeighborList> lists, const GroundTruth& gt,
                              std::size_t* excluded = nullptr);
double map_at_k(std::span<const NeighborList> lists, const GroundTruth& gt, std::size_t k);
std::map<std::size_t, double> recall_at_k(std::span<const NeighborList> lists, const GroundTruth& gt,
                                          std::span<const std::size_t> ks);

struct QueryResult {
  std::uint32_t id = 0;
  std::optional<double> ap;
  std::optional<std::size_t> first_rank;
  bool operator==(const QueryResult&) const = default;
};

struct EvalReport {
  std::string method;
  std::string config_digest;
  double map = 0.0;
  std::map<std::size_t, double> map_at;
  std::map<std::size_t, double> recall_at;
  std::vector<QueryResult> per_query;
  std::size_t excluded_queries = 0;
  double wallclock_s = 0.0;
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  std::vector<std::size_t> map_at_ks{100};
  std::vector<std::size_t> recall_ks{1, 5, 10};
};

// Throws FormatError if a list's query is missing from the ground truth.
EvalReport evaluate(std::span<const NeighborList> lists, const GroundTruth& gt, const EvalOptions& options,
                    const std::string& method, const std::string& config_digest);

// Throws FormatError naming the first query or neighbor id that is not known.
void validate_neighbor_ids(std::span<const NeighborList> lists, const GroundTruth& gt,
                           std::span<const ImageRecord> gallery);

// JSON keys: method, config_digest, map, map_at, recall_at, per_query
// [{id, ap, first_rank}], excluded_queries, wallclock_s.
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
// Columns: id,ap,first_rank; one row per query then a final "mean" row with
// the mAP. Excluded queries have empty ap and first_rank cells.
std::string report_to_csv(const EvalReport& report);

enum class ReportFormat { kJson, kCsv };
void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format);

// FNV-1a over "key=value\n" lines in key order, as 16 hex digits.
std::string config_digest(const std::map<std::string, std::string>& config);

struct DedupStats {
  std::size_t images = 0;
  std::size_t total_locals = 0;
  std::size_t total_cells = 0;  // sum of grid_dedup_count over images
  std::size_t min_cells = 0;
  std::size_t max_cells = 0;
  bool operator==(const DedupStats&) const = default;
};

DedupStats dedup_stats(std::span<const ImageRecord> records, std::uint32_t stride);

struct AblationRow {
  std::size_t count = 0;
  double map = 0.0;
  DedupStats dedup;
};

// Reranks the (fixed) global lists of a query set against a gallery.
using RerankFn = std::function<std::vector<NeighborList>(std::span<const ImageRecord> queries,
                                                         std::span<const ImageRecord> gallery)>;

// For each count c: keep the first c locals of every image, rerank, report
// mAP and the grid dedup statistics of all truncated images.
std::vector<AblationRow> ablation_locals_sweep(std::span<const ImageRecord> queries,
                                               std::span<const ImageRecord> gallery,
                                               std::span<const std::size_t> counts, const RerankFn& rerank,
                                               const GroundTruth& gt, std::uint32_t dedup_stride = 16);

std::string ablation_to_csv(std::span<const AblationRow> rows);

}  // namespace rrt
