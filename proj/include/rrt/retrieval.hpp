#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/model.hpp"

namespace rrt {

struct Neighbor {
  std::uint32_t id = 0;
  double score = 0.0;
  bool operator==(const Neighbor&) const = default;
};

// Ranked gallery ids for one query. `method` is the provenance tag: global,
// rrt, gv, aqe, aqe+rrt or oracle.
struct NeighborList {
  std::uint32_t query_id = 0;
  std::string method = "global";
  std::vector<Neighbor> entries;
  bool truncated = false;  // requested k exceeded the gallery size

  bool operator==(const NeighborList& o) const {
    return query_id == o.query_id && method == o.method && entries == o.entries;
  }
};

// Exact inner-product index over unit-norm global descriptors.
class GlobalIndex {
 public:
  GlobalIndex() = default;
  // Rows must already be unit norm (within 1e-5) and ids unique.
  GlobalIndex(std::vector<std::uint32_t> ids, std::size_t dim, std::vector<float> rows);

  // Raw globals, L2-normalized.
  static GlobalIndex build(std::span<const ImageRecord> records);
  // Globals passed through the model's learned projection, then normalized.
  static GlobalIndex build_projected(std::span<const ImageRecord> records, const Model<float>& model);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::uint32_t>& ids() const { return ids_; }
  std::span<const float> row(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> position(std::uint32_t id) const;

  // Top-k rows by inner product, descending, ties by ascending id. A gallery
  // entry with id == exclude_id is skipped. If k exceeds the number of
  // candidates the full ranking is returned with `truncated` set.
  NeighborList search(std::span<const float> query, std::size_t k,
                      std::optional<std::uint32_t> exclude_id = std::nullopt) const;

  std::vector<std::uint8_t> encode() const;
  static GlobalIndex decode(std::span<const std::uint8_t> bytes);

 private:
  std::vector<std::uint32_t> ids_;
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  std::unordered_map<std::uint32_t, std::size_t> position_;
};

// The query's own global descriptor, normalized (or projected, matching the
// way `index` was built).
std::vector<float> query_vector(const ImageRecord& query, const Model<float>* projection = nullptr);

NeighborList knn_search(const GlobalIndex& index, std::span<const float> query, std::size_t k,
                        std::optional<std::uint32_t> exclude_id = std::nullopt);

// Scores a batch of gallery ids for a fixed query; higher is better.
using BatchScorer = std::function<std::vector<double>(std::span<const std::uint32_t>)>;

// Re-sorts the first min(K, len) entries by scorer output (descending, ties
// by prior rank); the remaining entries are copied unchanged.
NeighborList rerank_topk(const NeighborList& neighbors, const BatchScorer& scorer, std::size_t K,
                         const std::string& method);

using RecordMap = std::unordered_map<std::uint32_t, const ImageRecord*>;
RecordMap make_record_map(std::span<const ImageRecord> records);

BatchScorer make_rrt_scorer(const Model<float>& model, const ImageRecord& query, const RecordMap& gallery,
                            unsigned threads = 1);

// alpha-QE over the full gallery, then RRT reranking of its top K.
NeighborList aqe_then_rrt(const GlobalIndex& index, const ImageRecord& query, const Model<float>& model,
                          const RecordMap& gallery, std::size_t nqe, double alpha, std::size_t K,
                          unsigned threads = 1);

// JSON Lines: {"query": id, "method": tag, "neighbors": [[id, score], ...]}
std::string neighbors_to_jsonl(std::span<const NeighborList> lists);
std::vector<NeighborList> neighbors_from_jsonl(const std::string& text);
void write_neighbors(const std::filesystem::path& path, std::span<const NeighborList> lists);
std::vector<NeighborList> read_neighbors(const std::filesystem::path& path);

}  // namespace rrt
