#include "rrt/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"

namespace rrt {

using nlohmann::json;

GroundTruth ground_truth_from_labels(std::span<const ImageRecord> queries, std::span<const ImageRecord> gallery) {
  std::unordered_map<std::uint32_t, std::vector<std::uint32_t>> by_label;
  for (const auto& g : gallery) by_label[g.label].push_back(g.id);
  GroundTruth gt;
  for (const auto& q : queries) {
    auto& rel = gt[q.id];
    const auto it = by_label.find(q.label);
    if (it == by_label.end()) continue;
    for (auto id : it->second)
      if (id != q.id) rel.insert(id);
  }
  return gt;
}

namespace {

void check_unique(std::span<const std::uint32_t> ranked) {
  std::unordered_set<std::uint32_t> seen;
  for (auto id : ranked)
    if (!seen.insert(id).second) throw ConfigError("ranked list contains id " + std::to_string(id) + " twice");
}

// Sum of precision at every hit within the first `depth` ranks.
double hit_precision_sum(std::span<const std::uint32_t> ranked, const RelevantSet& relevant, std::size_t depth) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(depth, ranked.size()); ++i) {
    if (relevant.count(ranked[i])) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return sum;
}

const RelevantSet& relevant_for(const GroundTruth& gt, std::uint32_t query) {
  const auto it = gt.find(query);
  if (it == gt.end()) throw FormatError("query id " + std::to_string(query) + " has no ground truth");
  return it->second;
}

}  // namespace

std::optional<double> average_precision(std::span<const std::uint32_t> ranked, const RelevantSet& relevant) {
  check_unique(ranked);
  if (relevant.empty()) return std::nullopt;
  return hit_precision_sum(ranked, relevant, ranked.size()) / static_cast<double>(relevant.size());
}

std::optional<double> average_precision_at(std::span<const std::uint32_t> ranked, const RelevantSet& relevant,
                                           std::size_t k) {
  if (k == 0) throw ConfigError("mAP@K: K must be positive");
  check_unique(ranked);
  if (relevant.empty()) return std::nullopt;
  return hit_precision_sum(ranked, relevant, k) / static_cast<double>(std::min(relevant.size(), k));
}

std::optional<std::size_t> first_relevant_rank(std::span<const std::uint32_t> ranked, const RelevantSet& relevant) {
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (relevant.count(ranked[i])) return i + 1;
  return std::nullopt;
}

std::vector<std::uint32_t> ranked_ids(const NeighborList& list) {
  std::vector<std::uint32_t> ids;
  ids.reserve(list.entries.size());
  for (const auto& e : list.entries) ids.push_back(e.id);
  return ids;
}

double mean_average_precision(std::span<const NeighborList> lists, const GroundTruth& gt, std::size_t* excluded) {
  double sum = 0.0;
  std::size_t n = 0, skipped = 0;
  for (const auto& list : lists) {
    const auto ap = average_precision(ranked_ids(list), relevant_for(gt, list.query_id));
    if (!ap) {
      ++skipped;
      continue;
    }
    sum += *ap;
    ++n;
  }
  if (excluded) *excluded = skipped;
  return n ? sum / static_cast<double>(n) : 0.0;
}

double map_at_k(std::span<const NeighborList> lists, const GroundTruth& gt, std::size_t k) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& list : lists) {
    const auto ap = average_precision_at(ranked_ids(list), relevant_for(gt, list.query_id), k);
    if (!ap) continue;
    sum += *ap;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::map<std::size_t, double> recall_at_k(std::span<const NeighborList> lists, const GroundTruth& gt,
                                          std::span<const std::size_t> ks) {
  std::map<std::size_t, double> out;
  for (auto k : ks) {
    if (k == 0) throw ConfigError("R@K: K must be positive");
    std::size_t hits = 0, n = 0;
    for (const auto& list : lists) {
      const auto& rel = relevant_for(gt, list.query_id);
      if (rel.empty()) continue;
      ++n;
      const auto rank = first_relevant_rank(ranked_ids(list), rel);
      if (rank && *rank <= k) ++hits;
    }
    out[k] = n ? static_cast<double>(hits) / static_cast<double>(n) : 0.0;
  }
  return out;
}

EvalReport evaluate(std::span<const NeighborList> lists, const GroundTruth& gt, const EvalOptions& options,
                    const std::string& method, const std::string& config_digest) {
  EvalReport report;
  report.method = method;
  report.config_digest = config_digest;
  for (const auto& list : lists) {
    const auto ids = ranked_ids(list);
    const auto& rel = relevant_for(gt, list.query_id);
    QueryResult q;
    q.id = list.query_id;
    q.ap = average_precision(ids, rel);
    if (q.ap) q.first_rank = first_relevant_rank(ids, rel);
    report.per_query.push_back(q);
  }
  report.map = mean_average_precision(lists, gt, &report.excluded_queries);
  for (auto k : options.map_at_ks) report.map_at[k] = map_at_k(lists, gt, k);
  report.recall_at = recall_at_k(lists, gt, options.recall_ks);
  return report;
}

void validate_neighbor_ids(std::span<const NeighborList> lists, const GroundTruth& gt,
                           std::span<const ImageRecord> gallery) {
  std::unordered_set<std::uint32_t> known;
  for (const auto& g : gallery) known.insert(g.id);
  for (const auto& list : lists) {
    if (!gt.count(list.query_id)) throw FormatError("unknown query id " + std::to_string(list.query_id));
    for (const auto& e : list.entries) {
      if (!known.count(e.id)) {
        throw FormatError("unknown gallery id " + std::to_string(e.id) + " in the neighbors of query " +
                          std::to_string(list.query_id));
      }
    }
  }
}

// -- serialization -----------------------------------------------------------------

std::string report_to_json(const EvalReport& r) {
  json j;
  j["method"] = r.method;
  j["config_digest"] = r.config_digest;
  j["map"] = r.map;
  j["map_at"] = json::object();
  for (const auto& [k, v] : r.map_at) j["map_at"][std::to_string(k)] = v;
  j["recall_at"] = json::object();
  for (const auto& [k, v] : r.recall_at) j["recall_at"][std::to_string(k)] = v;
  j["per_query"] = json::array();
  for (const auto& q : r.per_query) {
    json e;
    e["id"] = q.id;
    e["ap"] = q.ap ? json(*q.ap) : json(nullptr);
    e["first_rank"] = q.first_rank ? json(*q.first_rank) : json(nullptr);
    j["per_query"].push_back(e);
  }
  j["excluded_queries"] = r.excluded_queries;
  j["wallclock_s"] = r.wallclock_s;
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = json::parse(text);
    EvalReport r;
    r.method = j.at("method").get<std::string>();
    r.config_digest = j.at("config_digest").get<std::string>();
    r.map = j.at("map").get<double>();
    for (const auto& [k, v] : j.at("map_at").items()) r.map_at[std::stoull(k)] = v.get<double>();
    for (const auto& [k, v] : j.at("recall_at").items()) r.recall_at[std::stoull(k)] = v.get<double>();
    for (const auto& e : j.at("per_query")) {
      QueryResult q;
      q.id = e.at("id").get<std::uint32_t>();
      if (!e.at("ap").is_null()) q.ap = e.at("ap").get<double>();
      if (!e.at("first_rank").is_null()) q.first_rank = e.at("first_rank").get<std::size_t>();
      r.per_query.push_back(q);
    }
    r.excluded_queries = j.at("excluded_queries").get<std::size_t>();
    r.wallclock_s = j.at("wallclock_s").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("report: bad K key: ") + e.what());
  }
}

std::string report_to_csv(const EvalReport& r) {
  std::string out = "id,ap,first_rank\n";
  char buf[96];
  for (const auto& q : r.per_query) {
    out += std::to_string(q.id) + ",";
    if (q.ap) {
      std::snprintf(buf, sizeof buf, "%.17g", *q.ap);
      out += buf;
    }
    out += ",";
    if (q.first_rank) out += std::to_string(*q.first_rank);
    out += "\n";
  }
  std::snprintf(buf, sizeof buf, "mean,%.17g,\n", r.map);
  return out + buf;
}

void emit_report(const EvalReport& report, const std::filesystem::path& path, ReportFormat format) {
  io::write_text_file(path, format == ReportFormat::kJson ? report_to_json(report) : report_to_csv(report));
}

std::string config_digest(const std::map<std::string, std::string>& config) {
  std::uint64_t h = 14695981039346656037ull;
  const auto feed = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ull;
    }
  };
  for (const auto& [k, v] : config) feed(k + "=" + v + "\n");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DedupStats dedup_stats(std::span<const ImageRecord> records, std::uint32_t stride) {
  DedupStats s;
  s.min_cells = records.empty() ? 0 : std::numeric_limits<std::size_t>::max();
  for (const auto& r : records) {
    const auto cells = grid_dedup_count(r, stride);
    ++s.images;
    s.total_locals += r.locals.size();
    s.total_cells += cells;
    s.min_cells = std::min(s.min_cells, cells);
    s.max_cells = std::max(s.max_cells, cells);
  }
  return s;
}

std::vector<AblationRow> ablation_locals_sweep(std::span<const ImageRecord> queries,
                                               std::span<const ImageRecord> gallery,
                                               std::span<const std::size_t> counts, const RerankFn& rerank,
                                               const GroundTruth& gt, std::uint32_t dedup_stride) {
  std::vector<AblationRow> rows;
  for (auto c : counts) {
    std::vector<ImageRecord> q(queries.begin(), queries.end());
    std::vector<ImageRecord> g(gallery.begin(), gallery.end());
    truncate_locals(q, c);
    truncate_locals(g, c);
    const auto lists = rerank(q, g);
    AblationRow row;
    row.count = c;
    row.map = mean_average_precision(lists, gt);
    std::vector<ImageRecord> all = q;
    all.insert(all.end(), g.begin(), g.end());
    row.dedup = dedup_stats(all, dedup_stride);
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_to_csv(std::span<const AblationRow> rows) {
  std::string out = "locals,map,images,total_locals,total_cells,min_cells,max_cells\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu,%zu,%zu,%zu,%zu\n", r.count, r.map, r.dedup.images,
                  r.dedup.total_locals, r.dedup.total_cells, r.dedup.min_cells, r.dedup.max_cells);
    out += buf;
  }
  return out;
}

}  // namespace rrt
