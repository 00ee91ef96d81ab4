#include "rrt/pipeline.hpp"

#include <algorithm>
#include <unordered_map>

#include "rrt/errors.hpp"

namespace rrt {

std::vector<NeighborList> retrieve_all(const GlobalIndex& index, std::span<const ImageRecord> queries, std::size_t k,
                                       const Model<float>* projection) {
  std::vector<NeighborList> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    auto list = index.search(query_vector(q, projection), k, q.id);
    list.query_id = q.id;
    out.push_back(std::move(list));
  }
  return out;
}

std::vector<NeighborList> rerank_all(std::span<const NeighborList> lists, std::span<const ImageRecord> queries,
                                     const ScorerFactory& factory, std::size_t K, const std::string& method) {
  if (lists.size() != queries.size()) throw DimensionError("rerank_all: one neighbor list per query is required");
  std::vector<NeighborList> out;
  out.reserve(lists.size());
  for (std::size_t i = 0; i < lists.size(); ++i) {
    if (lists[i].query_id != queries[i].id) {
      throw FormatError("rerank_all: neighbor list for query " + std::to_string(lists[i].query_id) +
                        " is not aligned with query " + std::to_string(queries[i].id));
    }
    out.push_back(rerank_topk(lists[i], factory(queries[i]), K, method));
  }
  return out;
}

PartIdTable part_id_table(const SynthPrototypes& prototypes, const RecordMap& gallery, double min_cosine) {
  PartIdTable table;
  for (const auto& [id, record] : gallery) table.emplace(id, part_ids(*record, prototypes, min_cosine));
  return table;
}

BatchScorer make_oracle_scorer(const SynthPrototypes& prototypes, const ImageRecord& query,
                               const PartIdTable& gallery_parts, double min_cosine) {
  auto query_parts = part_ids(query, prototypes, min_cosine);
  return [&gallery_parts, query_parts = std::move(query_parts)](std::span<const std::uint32_t> ids) {
    std::vector<double> out;
    out.reserve(ids.size());
    for (auto id : ids) {
      const auto it = gallery_parts.find(id);
      if (it == gallery_parts.end()) throw FormatError("unknown gallery id " + std::to_string(id));
      out.push_back(static_cast<double>(shared_part_count(query_parts, it->second)));
    }
    return out;
  };
}

BenchmarkConfig frozen_benchmark(std::uint64_t seed) {
  BenchmarkConfig cfg;
  // Few locals but many visible parts: the global stage is noisy enough to
  // leave room above it, and every relevant pair still shares several parts.
  cfg.eval_data.n_instances = 600;
  cfg.eval_data.confusion_pairs = 300;
  cfg.eval_data.parts_per_instance = 20;
  cfg.eval_data.parts_per_image = 16;
  cfg.eval_data.locals_per_image = 16;
  cfg.eval_data.global_noise = 0.2;
  cfg.eval_data.seed = seed;

  // Many instances with few images each; with a few hundred instances the
  // model memorizes them instead of learning to match.
  cfg.train_data = cfg.eval_data;
  cfg.train_data.n_instances = 2000;
  cfg.train_data.confusion_pairs = 1000;
  cfg.train_data.queries_per_instance = 0;
  cfg.train_data.gallery_per_instance = 4;
  cfg.train_data.seed = seed + 1000;
  cfg.train_data.id_offset = 1000000;
  cfg.train_data.label_offset = 100000;

  cfg.model.L = cfg.eval_data.locals_per_image;
  cfg.model.d = cfg.eval_data.d_l;
  cfg.model.h = 1;
  cfg.model.d_h = static_cast<std::uint8_t>(cfg.model.d / cfg.model.h);
  cfg.model.C = 4;
  cfg.model.d_c = 64;
  // Without it the deeper stacks fit the training instances but do not
  // generalize to new ones.
  cfg.model.mlp_residual = true;
  cfg.model.d_g_raw = cfg.eval_data.d_g_raw;
  cfg.model_seed = seed;

  cfg.train.lr = 1e-3;
  cfg.train.epochs = 80;
  cfg.train.steps_per_epoch = 100;
  cfg.train.batch_size = 16;
  cfg.train.neg_pool_size = 100;
  cfg.train.step_schedule = true;
  cfg.train.seed = seed;

  const std::size_t L = cfg.model.L;
  cfg.ablation_counts = {0, L / 8, L / 4, L / 2, L};
  return cfg;
}

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const BenchmarkOptions& options) {
  BenchmarkResult result;
  const auto split = synth_generate(cfg.eval_data);
  const auto& queries = split.queries;
  const auto& gallery = split.gallery;
  const auto gt = ground_truth_from_labels(queries, gallery);
  const auto gallery_map = make_record_map(gallery);
  const auto index = GlobalIndex::build(gallery);
  const auto lists = retrieve_all(index, queries, cfg.k);
  result.map_global = mean_average_precision(lists, gt);

  const auto prototypes = synth_prototypes(cfg.eval_data);
  const auto gallery_parts = part_id_table(prototypes, gallery_map);
  const auto oracle = rerank_all(
      lists, queries, [&](const ImageRecord& q) { return make_oracle_scorer(prototypes, q, gallery_parts); }, cfg.k,
      "oracle");
  result.map_oracle = mean_average_precision(oracle, gt);

  auto train_split = synth_generate(cfg.train_data);
  std::vector<ImageRecord> train_images = std::move(train_split.queries);
  train_images.insert(train_images.end(), train_split.gallery.begin(), train_split.gallery.end());
  const TrainingSet set(std::move(train_images), cfg.train.neg_pool_size);
  auto model = Model<float>::init(cfg.model, cfg.model_seed);
  result.history = train(set, cfg.train, model).history;

  const auto rrt_factory = [&](const RecordMap& map) {
    return [&model, &map, threads = options.threads](const ImageRecord& q) {
      return make_rrt_scorer(model, q, map, threads);
    };
  };
  const auto reranked = rerank_all(lists, queries, rrt_factory(gallery_map), cfg.k, "rrt");
  result.map_rrt = mean_average_precision(reranked, gt);

  if (options.run_baselines) {
    const GvConfig gv;
    const auto gv_lists = rerank_all(
        lists, queries, [&](const ImageRecord& q) { return make_gv_scorer(q, gallery_map, gv, options.threads); },
        cfg.k, "gv");
    result.map_gv = mean_average_precision(gv_lists, gt);
    std::vector<NeighborList> aqe;
    for (const auto& q : queries) aqe.push_back(aqe_search(index, query_vector(q), AqeConfig{}, q.id));
    result.map_aqe = mean_average_precision(aqe, gt);
  }

  if (options.run_ablation) {
    const RerankFn rerank = [&](std::span<const ImageRecord> q, std::span<const ImageRecord> g) {
      const auto map = make_record_map(g);
      return rerank_all(lists, q, rrt_factory(map), cfg.k, "rrt");
    };
    result.ablation = ablation_locals_sweep(queries, gallery, cfg.ablation_counts, rerank, gt);
  }
  return result;
}

}  // namespace rrt
