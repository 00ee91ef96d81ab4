#include "rrt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rrt/baselines.hpp"
#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/parallel.hpp"

namespace rrt {

namespace {

constexpr char kIndexMagic[4] = {'R', 'R', 'T', 'I'};
constexpr std::uint32_t kIndexVersion = 1;

double dot(std::span<const float> a, std::span<const float> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return total;
}

std::vector<float> project_global(const ImageRecord& r, const Model<float>& model) {
  const auto& cfg = model.config;
  if (!cfg.use_global_token) throw ConfigError("model has no global projection");
  if (r.global.size() != cfg.d_g_raw) {
    throw DimensionError("image " + std::to_string(r.id) + ": global dimension does not match model");
  }
  const auto w = model.params.global_w.data();
  const auto b = model.params.global_b.data();
  std::vector<double> acc(b.begin(), b.end());
  for (std::size_t i = 0; i < cfg.d_g_raw; ++i) {
    const double x = r.global[i];
    for (std::size_t c = 0; c < cfg.d; ++c) acc[c] += x * w[i * cfg.d + c];
  }
  std::vector<float> out(acc.begin(), acc.end());
  l2_normalize_inplace(out);
  return out;
}

std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%#.17g", v);
  return buf;
}

}  // namespace

GlobalIndex::GlobalIndex(std::vector<std::uint32_t> ids, std::size_t dim, std::vector<float> rows)
    : ids_(std::move(ids)), dim_(dim), rows_(std::move(rows)) {
  if (rows_.size() != ids_.size() * dim_) throw DimensionError("GlobalIndex: row data does not match ids x dim");
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!position_.emplace(ids_[i], i).second) throw FormatError("GlobalIndex: duplicate id " + std::to_string(ids_[i]));
    const double n = std::sqrt(dot(row(i), row(i)));
    if (std::abs(n - 1.0) > 1e-5) {
      throw FormatError("GlobalIndex: row for id " + std::to_string(ids_[i]) + " is not unit norm");
    }
  }
}

GlobalIndex GlobalIndex::build(std::span<const ImageRecord> records) {
  std::vector<std::uint32_t> ids;
  std::vector<float> rows;
  const std::size_t dim = records.empty() ? 0 : records.front().global.size();
  for (const auto& r : records) {
    if (r.global.size() != dim) throw DimensionError("GlobalIndex: mixed global dimensions");
    ids.push_back(r.id);
    const auto unit = l2_normalize(r.global);
    rows.insert(rows.end(), unit.begin(), unit.end());
  }
  return GlobalIndex(std::move(ids), dim, std::move(rows));
}

GlobalIndex GlobalIndex::build_projected(std::span<const ImageRecord> records, const Model<float>& model) {
  std::vector<std::uint32_t> ids;
  std::vector<float> rows;
  for (const auto& r : records) {
    ids.push_back(r.id);
    const auto v = project_global(r, model);
    rows.insert(rows.end(), v.begin(), v.end());
  }
  return GlobalIndex(std::move(ids), model.config.d, std::move(rows));
}

std::optional<std::size_t> GlobalIndex::position(std::uint32_t id) const {
  const auto it = position_.find(id);
  if (it == position_.end()) return std::nullopt;
  return it->second;
}

NeighborList GlobalIndex::search(std::span<const float> query, std::size_t k,
                                 std::optional<std::uint32_t> exclude_id) const {
  if (query.size() != dim_) {
    throw DimensionError("search: query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                         std::to_string(dim_));
  }
  if (k == 0) throw ConfigError("search: k must be at least 1");
  std::vector<Neighbor> all;
  all.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (exclude_id && ids_[i] == *exclude_id) continue;
    all.push_back({ids_[i], dot(query, row(i))});
  }
  NeighborList out;
  out.method = "global";
  if (exclude_id) out.query_id = *exclude_id;
  if (k > all.size()) {
    out.truncated = true;
    k = all.size();
  }
  const auto better = [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  out.entries = std::move(all);
  return out;
}

std::vector<std::uint8_t> GlobalIndex::encode() const {
  io::ByteWriter w;
  w.bytes(kIndexMagic, 4);
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(ids_.size()));
  w.u32(static_cast<std::uint32_t>(dim_));
  for (auto id : ids_) w.u32(id);
  for (float x : rows_) w.f32(x);
  return w.take();
}

GlobalIndex GlobalIndex::decode(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.str(4, "magic") != std::string(kIndexMagic, 4)) throw FormatError("bad magic at byte offset 0: not an index file");
  const auto version = r.u32("version");
  if (version != kIndexVersion) throw FormatError("unsupported index version " + std::to_string(version));
  const auto n = r.u32("row count");
  const auto dim = r.u32("dimension");
  r.need(static_cast<std::size_t>(n) * 4 * (1 + static_cast<std::size_t>(dim)), "index payload");
  std::vector<std::uint32_t> ids(n);
  for (auto& id : ids) id = r.u32("id");
  std::vector<float> rows(static_cast<std::size_t>(n) * dim);
  for (auto& x : rows) x = r.f32("row data");
  if (!r.at_end()) throw FormatError("trailing bytes after index payload at byte offset " + std::to_string(r.offset()));
  return GlobalIndex(std::move(ids), dim, std::move(rows));
}

std::vector<float> query_vector(const ImageRecord& query, const Model<float>* projection) {
  if (projection) return project_global(query, *projection);
  return l2_normalize(query.global);
}

NeighborList knn_search(const GlobalIndex& index, std::span<const float> query, std::size_t k,
                        std::optional<std::uint32_t> exclude_id) {
  return index.search(query, k, exclude_id);
}

NeighborList rerank_topk(const NeighborList& neighbors, const BatchScorer& scorer, std::size_t K,
                         const std::string& method) {
  NeighborList out = neighbors;
  out.method = method;
  const std::size_t top = std::min(K, neighbors.entries.size());
  if (top == 0) return out;
  std::vector<std::uint32_t> ids(top);
  for (std::size_t i = 0; i < top; ++i) ids[i] = neighbors.entries[i].id;
  const auto scores = scorer(ids);
  if (scores.size() != top) throw DimensionError("rerank_topk: scorer returned the wrong number of scores");
  std::vector<std::size_t> order(top);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  for (std::size_t i = 0; i < top; ++i) out.entries[i] = {ids[order[i]], scores[order[i]]};
  return out;
}

RecordMap make_record_map(std::span<const ImageRecord> records) {
  RecordMap map;
  for (const auto& r : records) {
    if (!map.emplace(r.id, &r).second) throw FormatError("duplicate image id " + std::to_string(r.id));
  }
  return map;
}

namespace {

std::vector<const ImageRecord*> lookup(const RecordMap& gallery, std::span<const std::uint32_t> ids) {
  std::vector<const ImageRecord*> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    const auto it = gallery.find(id);
    if (it == gallery.end()) throw FormatError("unknown gallery id " + std::to_string(id));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

BatchScorer make_rrt_scorer(const Model<float>& model, const ImageRecord& query, const RecordMap& gallery,
                            unsigned threads) {
  return [&model, &query, &gallery, threads](std::span<const std::uint32_t> ids) {
    const auto candidates = lookup(gallery, ids);
    return score_batch(model, query, candidates, threads);
  };
}

BatchScorer make_gv_scorer(const ImageRecord& query, const RecordMap& gallery, const GvConfig& cfg, unsigned threads) {
  return [&query, &gallery, cfg, threads](std::span<const std::uint32_t> ids) {
    const auto candidates = lookup(gallery, ids);
    std::vector<double> out(candidates.size());
    parallel_for(candidates.size(), threads,
                 [&](std::size_t i) { out[i] = static_cast<double>(gv_score(query, *candidates[i], cfg)); });
    return out;
  };
}

NeighborList aqe_then_rrt(const GlobalIndex& index, const ImageRecord& query, const Model<float>& model,
                          const RecordMap& gallery, std::size_t nqe, double alpha, std::size_t K, unsigned threads) {
  const auto q = query_vector(query);
  auto expanded = aqe_search(index, q, {nqe, alpha}, query.id);
  expanded.query_id = query.id;
  return rerank_topk(expanded, make_rrt_scorer(model, query, gallery, threads), K, "aqe+rrt");
}

// -- JSON Lines ------------------------------------------------------------------

std::string neighbors_to_jsonl(std::span<const NeighborList> lists) {
  std::string out;
  for (const auto& list : lists) {
    out += "{\"query\": " + std::to_string(list.query_id) + ", \"method\": " + nlohmann::json(list.method).dump() +
           ", \"neighbors\": [";
    for (std::size_t i = 0; i < list.entries.size(); ++i) {
      if (i) out += ", ";
      out += "[" + std::to_string(list.entries[i].id) + ", " + format_score(list.entries[i].score) + "]";
    }
    out += "]}\n";
  }
  return out;
}

std::vector<NeighborList> neighbors_from_jsonl(const std::string& text) {
  std::vector<NeighborList> lists;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      NeighborList list;
      list.query_id = j.at("query").get<std::uint32_t>();
      list.method = j.at("method").get<std::string>();
      for (const auto& e : j.at("neighbors")) {
        if (!e.is_array() || e.size() != 2) throw FormatError("neighbor entry is not an [id, score] pair");
        list.entries.push_back({e[0].get<std::uint32_t>(), e[1].get<double>()});
      }
      lists.push_back(std::move(list));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("neighbor list line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("neighbor list line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return lists;
}

void write_neighbors(const std::filesystem::path& path, std::span<const NeighborList> lists) {
  io::write_text_file(path, neighbors_to_jsonl(lists));
}

std::vector<NeighborList> read_neighbors(const std::filesystem::path& path) {
  return neighbors_from_jsonl(io::read_text_file(path));
}

}  // namespace rrt
