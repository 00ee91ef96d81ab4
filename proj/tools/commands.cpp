#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <json.hpp>
#include <unordered_set>

#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/pipeline.hpp"

namespace rrt::cli {

namespace {

using nlohmann::ordered_json;

template <typename T>
std::string num(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else {
    return std::to_string(v);
  }
}

// ---- shared loading ------------------------------------------------------

std::vector<ImageRecord> load_records(const FlagSet& f, const std::string& flag, DatasetManifest* manifest = nullptr) {
  auto ds = load_dataset(f.path(flag));
  validate_records(ds.records, ds.manifest);
  if (f.has("locals-max") && f.unsigned_integer("locals-max") > 0) truncate_locals(ds.records, f.unsigned_integer("locals-max"));
  if (manifest) *manifest = ds.manifest;
  return std::move(ds.records);
}

const ImageRecord& find_query(const std::unordered_map<std::uint32_t, const ImageRecord*>& queries, std::uint32_t id) {
  const auto it = queries.find(id);
  if (it == queries.end()) throw FormatError("neighbor list for query " + std::to_string(id) + " has no query record");
  return *it->second;
}

// Query records aligned with the neighbor lists.
std::vector<ImageRecord> aligned_queries(std::span<const NeighborList> lists, std::span<const ImageRecord> queries) {
  const auto map = make_record_map(queries);
  std::vector<ImageRecord> out;
  for (const auto& l : lists) out.push_back(find_query(map, l.query_id));
  return out;
}

void check_neighbor_ids(std::span<const NeighborList> lists, const RecordMap& gallery) {
  for (const auto& l : lists)
    for (const auto& e : l.entries)
      if (!gallery.count(e.id)) {
        throw FormatError("unknown gallery id " + std::to_string(e.id) + " in the neighbors of query " +
                          std::to_string(l.query_id));
      }
}

void write_lists(const FlagSet& f, std::span<const NeighborList> lists) {
  const auto out = f.path("out");
  write_neighbors(out, lists);
  f.write_meta(out);
}

// ---- synthetic configuration <-> JSON ------------------------------------

ordered_json synth_to_json(const SynthConfig& c) {
  ordered_json j;
  j["n_instances"] = c.n_instances;
  j["queries_per_instance"] = c.queries_per_instance;
  j["gallery_per_instance"] = c.gallery_per_instance;
  j["parts_per_instance"] = c.parts_per_instance;
  j["parts_per_image"] = c.parts_per_image;
  j["locals_per_image"] = c.locals_per_image;
  j["d_l"] = c.d_l;
  j["d_g_raw"] = c.d_g_raw;
  j["confusion_pairs"] = c.confusion_pairs;
  j["local_noise"] = c.local_noise;
  j["global_noise"] = c.global_noise;
  j["confusion_noise"] = c.confusion_noise;
  j["position_jitter_px"] = c.position_jitter_px;
  j["warp"] = c.warp;
  j["seed"] = c.seed;
  j["id_offset"] = c.id_offset;
  j["label_offset"] = c.label_offset;
  return j;
}

SynthConfig synth_from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    SynthConfig c;
    c.n_instances = j.at("n_instances");
    c.queries_per_instance = j.at("queries_per_instance");
    c.gallery_per_instance = j.at("gallery_per_instance");
    c.parts_per_instance = j.at("parts_per_instance");
    c.parts_per_image = j.at("parts_per_image");
    c.locals_per_image = j.at("locals_per_image");
    c.d_l = j.at("d_l");
    c.d_g_raw = j.at("d_g_raw");
    c.confusion_pairs = j.at("confusion_pairs");
    c.local_noise = j.at("local_noise");
    c.global_noise = j.at("global_noise");
    c.confusion_noise = j.at("confusion_noise");
    c.position_jitter_px = j.at("position_jitter_px");
    c.warp = j.at("warp");
    c.seed = j.at("seed");
    c.id_offset = j.at("id_offset");
    c.label_offset = j.at("label_offset");
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synthetic config: ") + e.what());
  }
}

// ---- synth -----------------------------------------------------------------

// Defaults reproduce the benchmark's evaluation data.
std::vector<FlagSpec> synth_flags() {
  const SynthConfig d = frozen_benchmark(1).eval_data;
  return {
      {"out", "", "output directory (queries.rrtd, gallery.rrtd, labels.tsv, synth.json)", false},
      {"seed", num(d.seed), "generator seed"},
      {"instances", num(d.n_instances), "number of instances"},
      {"queries-per-instance", num(d.queries_per_instance), "query images per instance"},
      {"gallery-per-instance", num(d.gallery_per_instance), "gallery images per instance"},
      {"parts-per-instance", num(d.parts_per_instance), "part prototypes owned by each instance"},
      {"parts-per-image", num(d.parts_per_image), "parts visible in each image"},
      {"locals", num(d.locals_per_image), "local descriptors per image (parts plus distractors)"},
      {"dl", num(d.d_l), "local descriptor dimension"},
      {"dg", num(d.d_g_raw), "raw global descriptor dimension"},
      {"confusion-pairs", num(d.confusion_pairs), "instance pairs sharing a global prototype"},
      {"local-noise", num(d.local_noise), "relative noise on part descriptors"},
      {"global-noise", num(d.global_noise), "relative noise on image globals"},
      {"confusion-noise", num(d.confusion_noise), "offset between confused global prototypes"},
      {"jitter", num(d.position_jitter_px), "keypoint position jitter in pixels"},
      {"warp", d.warp ? "true" : "false", "apply a random similarity warp per image"},
      {"id-offset", num(d.id_offset), "first image id"},
      {"label-offset", num(d.label_offset), "first instance label"},
  };
}

int run_synth(const FlagSet& f) {
  SynthConfig c;
  c.seed = f.unsigned_integer("seed");
  c.n_instances = static_cast<std::uint32_t>(f.unsigned_integer("instances"));
  c.queries_per_instance = static_cast<std::uint32_t>(f.unsigned_integer("queries-per-instance"));
  c.gallery_per_instance = static_cast<std::uint32_t>(f.unsigned_integer("gallery-per-instance"));
  c.parts_per_instance = static_cast<std::uint32_t>(f.unsigned_integer("parts-per-instance"));
  c.parts_per_image = static_cast<std::uint32_t>(f.unsigned_integer("parts-per-image"));
  c.locals_per_image = static_cast<std::uint32_t>(f.unsigned_integer("locals"));
  c.d_l = static_cast<std::uint16_t>(f.unsigned_integer("dl"));
  c.d_g_raw = static_cast<std::uint32_t>(f.unsigned_integer("dg"));
  c.confusion_pairs = static_cast<std::uint32_t>(f.unsigned_integer("confusion-pairs"));
  c.local_noise = f.real("local-noise");
  c.global_noise = f.real("global-noise");
  c.confusion_noise = f.real("confusion-noise");
  c.position_jitter_px = f.real("jitter");
  c.warp = f.boolean("warp");
  c.id_offset = static_cast<std::uint32_t>(f.unsigned_integer("id-offset"));
  c.label_offset = static_cast<std::uint32_t>(f.unsigned_integer("label-offset"));
  const auto split = synth_generate(c);

  const auto dir = f.path("out");
  std::filesystem::create_directories(dir);
  const auto emit = [&](const std::filesystem::path& p, const auto& write) {
    write(p);
    f.write_meta(p);
  };
  emit(dir / "queries.rrtd", [&](const auto& p) { save_dataset(p, split.queries, split.manifest); });
  emit(dir / "gallery.rrtd", [&](const auto& p) { save_dataset(p, split.gallery, split.manifest); });
  std::vector<ImageRecord> all = split.queries;
  all.insert(all.end(), split.gallery.begin(), split.gallery.end());
  emit(dir / "labels.tsv", [&](const auto& p) { write_labels_tsv(p, all); });
  emit(dir / "synth.json", [&](const auto& p) { io::write_text_file(p, synth_to_json(c).dump(2) + "\n"); });
  return 0;
}

// ---- index / retrieve -------------------------------------------------------

int run_index(const FlagSet& f) {
  const auto gallery = load_records(f, "gallery");
  GlobalIndex index;
  if (f.str("checkpoint").empty()) {
    index = GlobalIndex::build(gallery);
  } else {
    index = GlobalIndex::build_projected(gallery, load_checkpoint(f.path("checkpoint")));
  }
  const auto out = f.path("out");
  io::write_file(out, index.encode());
  f.write_meta(out);
  return 0;
}

int run_retrieve(const FlagSet& f) {
  const auto queries = load_records(f, "queries");
  std::optional<Model<float>> projection;
  if (!f.str("checkpoint").empty()) projection = load_checkpoint(f.path("checkpoint"));
  GlobalIndex index;
  if (!f.str("index").empty()) {
    index = GlobalIndex::decode(io::read_file(f.path("index")));
  } else {
    const auto gallery = load_records(f, "gallery");
    index = projection ? GlobalIndex::build_projected(gallery, *projection) : GlobalIndex::build(gallery);
  }
  const auto depth = f.unsigned_integer("depth");
  write_lists(f, retrieve_all(index, queries, depth, projection ? &*projection : nullptr));
  return 0;
}

// ---- train -------------------------------------------------------------------

std::vector<FlagSpec> train_flags() {
  const auto b = frozen_benchmark(1);
  const auto bool_str = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"data", "", "training descriptors (.rrtd); every image is an anchor candidate"},
      {"out", "", "checkpoint path, rewritten after every epoch", false},
      {"loss-csv", "", "per-step loss log; defaults to <out>.loss.csv", false},
      {"seed", "1", "seed for initialization and pair sampling"},
      {"locals-max", "0", "keep only the first N locals of every image (0 keeps all)"},
      {"L", "0", "local slots per image; 0 uses the largest local count in the data"},
      {"heads", num(b.model.h), "attention heads (must divide the local dimension)"},
      {"layers", num(b.model.C), "transformer layers"},
      {"dc", num(b.model.d_c), "MLP hidden width"},
      {"mlp-residual", bool_str(b.model.mlp_residual), "add a residual around each layer's MLP"},
      {"pos-embed", bool_str(b.model.use_pos_embed), "add a 2-D sinusoidal position encoding to locals"},
      {"global-token", bool_str(b.model.use_global_token), "feed each image's projected global as a token"},
      {"scale-embed", bool_str(b.model.use_scale_embed), "add the learned scale embedding to locals"},
      {"lr", num(b.train.lr), "AdamW learning rate"},
      {"weight-decay", num(b.train.weight_decay), "AdamW decoupled weight decay"},
      {"epochs", num(b.train.epochs), "training epochs"},
      {"batch-size", num(b.train.batch_size), "anchors per step (two pairs each)"},
      {"steps-per-epoch", num(b.train.steps_per_epoch), "optimizer steps per epoch; 0 is one pass over the anchors"},
      {"neg-pool", num(b.train.neg_pool_size), "negatives are drawn from this many global neighbors"},
      {"step-schedule", bool_str(b.train.step_schedule), "divide lr by 10 after 60% and again after 80% of epochs"},
      {"clip", "0", "global gradient norm clip; 0 disables"},
  };
}

int run_train(const FlagSet& f) {
  DatasetManifest manifest;
  auto images = load_records(f, "data", &manifest);
  ModelConfig m;
  std::size_t max_locals = 0;
  for (const auto& r : images) max_locals = std::max(max_locals, r.locals.size());
  m.L = static_cast<std::uint32_t>(f.unsigned_integer("L") ? f.unsigned_integer("L") : max_locals);
  if (max_locals > m.L) truncate_locals(images, m.L);
  m.d = manifest.d_l;
  m.h = static_cast<std::uint8_t>(f.unsigned_integer("heads"));
  if (m.h == 0 || m.d % m.h != 0) throw ConfigError("--heads must divide the local dimension " + std::to_string(m.d));
  m.d_h = static_cast<std::uint8_t>(m.d / m.h);
  m.C = static_cast<std::uint8_t>(f.unsigned_integer("layers"));
  m.d_c = static_cast<std::uint16_t>(f.unsigned_integer("dc"));
  m.n_scales = manifest.n_scales;
  m.d_g_raw = manifest.d_g_raw;
  m.mlp_residual = f.boolean("mlp-residual");
  m.use_pos_embed = f.boolean("pos-embed");
  m.use_global_token = f.boolean("global-token");
  m.use_scale_embed = f.boolean("scale-embed");
  m.validate();

  TrainConfig t;
  t.lr = f.real("lr");
  t.weight_decay = f.real("weight-decay");
  t.epochs = f.unsigned_integer("epochs");
  t.batch_size = f.unsigned_integer("batch-size");
  t.steps_per_epoch = f.unsigned_integer("steps-per-epoch");
  t.neg_pool_size = f.unsigned_integer("neg-pool");
  t.step_schedule = f.boolean("step-schedule");
  t.seed = f.unsigned_integer("seed");
  if (f.real("clip") > 0) t.grad_clip_norm = f.real("clip");
  t.validate();

  const auto out = f.path("out");
  const std::filesystem::path loss_path = f.str("loss-csv").empty() ? std::filesystem::path(out.string() + ".loss.csv") : f.path("loss-csv");
  const TrainingSet set(std::move(images), t.neg_pool_size);
  auto model = Model<float>::init(m, t.seed);
  const auto result = train(set, t, model, [&](std::size_t, const Model<float>& current) {
    save_checkpoint(out, current);
  });
  f.write_meta(out);
  write_loss_csv(loss_path, result.history);
  f.write_meta(loss_path);
  std::fprintf(stderr, "trained %zu steps; final loss %.6g; %zu anchors skipped, %zu fallback negatives\n",
               result.history.size(), result.history.empty() ? 0.0 : result.history.back().loss,
               result.skipped_anchors, result.negative_fallbacks);
  return 0;
}

// ---- rerank ------------------------------------------------------------------

std::vector<FlagSpec> scorer_flags() {
  return {
      {"scorer", "rrt", "rrt, gv, aqe, aqe+rrt or oracle"},
      {"checkpoint", "", "trained model (rrt and aqe+rrt)"},
      {"k", "100", "rerank depth: only the first k neighbors are re-scored"},
      {"nqe", "2", "alpha-QE: neighbors folded into the query"},
      {"alpha", "0.3", "alpha-QE: similarity exponent"},
      {"ransac-iters", "2000", "geometric verification: RANSAC iterations"},
      {"ransac-thresh", "3", "geometric verification: inlier threshold in pixels"},
      {"ratio", "0", "geometric verification: Lowe ratio for mutual matches; 0 disables"},
      {"seed", "0", "geometric verification: RANSAC seed"},
      {"synth", "", "oracle: synth.json of the generated data; defaults to the one next to --gallery"},
      {"oracle-cosine", num(kOracleMinCosine), "oracle: minimum cosine for a local to count as a part"},
      {"locals-max", "0", "keep only the first N locals of every image (0 keeps all)"},
  };
}


struct ScorerContext {
  std::string scorer;
  std::optional<Model<float>> model;
  std::optional<SynthPrototypes> prototypes;
  AqeConfig aqe;
  GvConfig gv;
  double oracle_cosine = kOracleMinCosine;
  unsigned threads = 1;
};

ScorerContext make_context(const FlagSet& f, bool allow_aqe) {
  ScorerContext c;
  c.scorer = f.str("scorer");
  static const std::unordered_set<std::string> known{"rrt", "gv", "aqe", "aqe+rrt", "oracle"};
  if (!known.count(c.scorer)) throw ConfigError("--scorer must be one of rrt, gv, aqe, aqe+rrt, oracle");
  if (!allow_aqe && c.scorer.rfind("aqe", 0) == 0) throw ConfigError("--scorer " + c.scorer + " is not a pairwise scorer");
  if (c.scorer == "rrt" || c.scorer == "aqe+rrt") c.model = load_checkpoint(f.path("checkpoint"));
  if (c.scorer == "oracle") {
    const auto synth = f.str("synth").empty() ? f.path("gallery").parent_path() / "synth.json" : f.path("synth");
    c.prototypes = synth_prototypes(synth_from_json(io::read_text_file(synth)));
  }
  c.aqe.nqe = f.unsigned_integer("nqe");
  c.aqe.alpha = f.real("alpha");
  c.gv.iterations = f.unsigned_integer("ransac-iters");
  c.gv.threshold_px = f.real("ransac-thresh");
  if (f.real("ratio") > 0) c.gv.ratio = f.real("ratio");
  c.gv.seed = f.unsigned_integer("seed");
  c.oracle_cosine = f.real("oracle-cosine");
  c.threads = f.threads();
  return c;
}

// Pairwise scorers (rrt, gv, oracle) re-sort the first k entries of each
// list. The alpha-QE variants re-query the whole gallery with the expanded
// query (aqe+rrt then reranks its first k) and keep the input list depth.
std::vector<NeighborList> rerank_lists(const ScorerContext& c, std::span<const NeighborList> lists,
                                       std::span<const ImageRecord> queries, std::span<const ImageRecord> gallery,
                                       std::size_t k) {
  const auto gallery_map = make_record_map(gallery);
  check_neighbor_ids(lists, gallery_map);
  const auto aligned = aligned_queries(lists, queries);
  if (c.scorer == "aqe" || c.scorer == "aqe+rrt") {
    const auto index = GlobalIndex::build(gallery);
    std::vector<NeighborList> out;
    for (std::size_t i = 0; i < lists.size(); ++i) {
      const auto& q = aligned[i];
      auto l = c.scorer == "aqe"
                   ? aqe_search(index, query_vector(q), c.aqe, q.id)
                   : aqe_then_rrt(index, q, *c.model, gallery_map, c.aqe.nqe, c.aqe.alpha, k, c.threads);
      l.query_id = q.id;
      if (l.entries.size() > lists[i].entries.size()) l.entries.resize(lists[i].entries.size());
      out.push_back(std::move(l));
    }
    return out;
  }
  ScorerFactory factory;
  if (c.scorer == "rrt") {
    factory = [&](const ImageRecord& q) { return make_rrt_scorer(*c.model, q, gallery_map, c.threads); };
  } else if (c.scorer == "gv") {
    factory = [&](const ImageRecord& q) { return make_gv_scorer(q, gallery_map, c.gv, c.threads); };
  } else {
    const auto table = part_id_table(*c.prototypes, gallery_map, c.oracle_cosine);
    factory = [&, table](const ImageRecord& q) { return make_oracle_scorer(*c.prototypes, q, table, c.oracle_cosine); };
  }
  return rerank_all(lists, aligned, factory, k, c.scorer);
}

// Images longer than the model's slot count keep their first L locals, as in
// training.
void fit_to_model(const ScorerContext& c, std::vector<ImageRecord>& records) {
  if (c.model) truncate_locals(records, c.model->config.L);
}

std::vector<FlagSpec> rerank_flags() {
  auto specs = scorer_flags();
  specs.insert(specs.begin(), {{"neighbors", "", "input neighbor lists (JSON Lines)"},
                               {"queries", "", "query descriptors (.rrtd)"},
                               {"gallery", "", "gallery descriptors (.rrtd)"},
                               {"out", "", "output neighbor lists (JSON Lines)", false}});
  return specs;
}

int run_rerank(const FlagSet& f) {
  const auto ctx = make_context(f, true);
  auto queries = load_records(f, "queries");
  auto gallery = load_records(f, "gallery");
  fit_to_model(ctx, queries);
  fit_to_model(ctx, gallery);
  const auto lists = read_neighbors(f.path("neighbors"));
  write_lists(f, rerank_lists(ctx, lists, queries, gallery, f.unsigned_integer("k")));
  return 0;
}

// ---- eval / compare ------------------------------------------------------------

EvalOptions eval_options(const FlagSet& f) {
  EvalOptions o;
  o.map_at_ks = f.size_list("map-at");
  o.recall_ks = f.size_list("recall-at");
  return o;
}

EvalReport evaluate_file(const FlagSet& f, const std::filesystem::path& file, std::span<const ImageRecord> queries,
                         std::span<const ImageRecord> gallery, const std::string& method) {
  const auto lists = read_neighbors(file);
  const auto gt = ground_truth_from_labels(queries, gallery);
  validate_neighbor_ids(lists, gt, gallery);
  std::string tag = method;
  if (tag.empty()) tag = lists.empty() ? "none" : lists.front().method;
  return evaluate(lists, gt, eval_options(f), tag, f.digest());
}

int run_eval(const FlagSet& f) {
  const auto queries = load_records(f, "queries");
  const auto gallery = load_records(f, "gallery");
  const auto report = evaluate_file(f, f.path("neighbors"), queries, gallery, f.str("method"));
  const auto out = f.path("out");
  auto format = f.str("format");
  if (format == "auto") format = out.extension() == ".csv" ? "csv" : "json";
  if (format != "json" && format != "csv") throw ConfigError("--format must be auto, json or csv");
  emit_report(report, out, format == "csv" ? ReportFormat::kCsv : ReportFormat::kJson);
  f.write_meta(out);
  std::fprintf(stderr, "%s: mAP %.4f over %zu queries (%zu without relevant items)\n", report.method.c_str(), report.map,
               report.per_query.size() - report.excluded_queries, report.excluded_queries);
  return 0;
}

int run_compare(const FlagSet& f) {
  const auto queries = load_records(f, "queries");
  const auto gallery = load_records(f, "gallery");
  const auto files = f.string_list("neighbors");
  if (files.empty()) throw ConfigError("--neighbors needs at least one file");
  const auto opts = eval_options(f);
  std::string out = "method";
  out += ",map";
  for (auto k : opts.map_at_ks) out += ",map@" + std::to_string(k);
  for (auto k : opts.recall_ks) out += ",recall@" + std::to_string(k);
  out += "\n";
  char buf[64];
  for (const auto& file : files) {
    const auto r = evaluate_file(f, file, queries, gallery, "");
    out += r.method;
    std::snprintf(buf, sizeof buf, ",%.6f", r.map);
    out += buf;
    for (const auto& [k, v] : r.map_at) {
      std::snprintf(buf, sizeof buf, ",%.6f", v);
      out += buf;
    }
    for (const auto& [k, v] : r.recall_at) {
      std::snprintf(buf, sizeof buf, ",%.6f", v);
      out += buf;
    }
    out += "\n";
  }
  if (f.str("out").empty()) {
    std::cout << out;
  } else {
    io::write_text_file(f.path("out"), out);
    f.write_meta(f.path("out"));
  }
  return 0;
}

std::vector<FlagSpec> eval_flags(bool many) {
  return {
      {"neighbors", "", many ? "comma-separated neighbor files, one table row each" : "neighbor lists (JSON Lines)"},
      {"queries", "", "query descriptors (.rrtd); labels define relevance"},
      {"gallery", "", "gallery descriptors (.rrtd)"},
      {"out", "", many ? "output CSV table; printed to stdout when empty" : "report path", false},
      {"map-at", "100", "comma-separated K values for truncated mAP"},
      {"recall-at", "1,5,10", "comma-separated K values for recall"},
  };
}

// ---- ablate --------------------------------------------------------------------

int run_ablate(const FlagSet& f) {
  const auto ctx = make_context(f, false);
  auto queries = load_records(f, "queries");
  auto gallery = load_records(f, "gallery");
  fit_to_model(ctx, queries);
  fit_to_model(ctx, gallery);
  const auto lists = read_neighbors(f.path("neighbors"));
  const auto gt = ground_truth_from_labels(queries, gallery);
  validate_neighbor_ids(lists, gt, gallery);
  auto counts = f.size_list("counts");
  if (counts.empty()) {
    std::size_t L = 0;
    for (const auto& r : gallery) L = std::max(L, r.locals.size());
    counts = {0, L / 8, L / 4, L / 2, L};
  }
  const auto k = f.unsigned_integer("k");
  const RerankFn rerank = [&](std::span<const ImageRecord> q, std::span<const ImageRecord> g) {
    return rerank_lists(ctx, lists, q, g, k);
  };
  const auto stride = static_cast<std::uint32_t>(f.unsigned_integer("stride"));
  if (stride == 0) throw ConfigError("--stride must be positive");
  const auto rows = ablation_locals_sweep(queries, gallery, counts, rerank, gt, stride);
  const auto out = f.path("out");
  io::write_text_file(out, ablation_to_csv(rows));
  f.write_meta(out);
  return 0;
}

std::vector<FlagSpec> ablate_flags() {
  auto specs = scorer_flags();
  specs.insert(specs.begin(), {{"neighbors", "", "first-stage neighbor lists (JSON Lines)"},
                               {"queries", "", "query descriptors (.rrtd)"},
                               {"gallery", "", "gallery descriptors (.rrtd)"},
                               {"out", "", "output CSV", false},
                               {"counts", "", "comma-separated local counts; empty uses 0,L/8,L/4,L/2,L"},
                               {"stride", "16", "grid cell size in pixels for the dedup statistics"}});
  specs.front().help = "first-stage neighbor lists (JSON Lines); the scorer must be rrt, gv or oracle";
  return specs;
}

// ---- correspond ------------------------------------------------------------------

int run_correspond(const FlagSet& f) {
  const auto model = load_checkpoint(f.path("checkpoint"));
  std::vector<ImageRecord> all = load_records(f, "queries");
  if (!f.str("gallery").empty()) {
    auto g = load_records(f, "gallery");
    all.insert(all.end(), g.begin(), g.end());
  }
  truncate_locals(all, model.config.L);
  const auto find = [&](const std::string& flag) -> const ImageRecord& {
    const auto id = f.unsigned_integer(flag);
    for (const auto& r : all)
      if (r.id == id) return r;
    throw FormatError("--" + flag + ": unknown image id " + std::to_string(id));
  };
  const auto& a = find("a");
  const auto& b = find("b");
  ordered_json j;
  j["config_digest"] = f.digest();
  j["a"] = a.id;
  j["b"] = b.id;
  j["similarity"] = score_pair(model, a, b).similarity;
  j["matches"] = ordered_json::array();
  for (const auto& c : attention_correspondences(model, a, b)) {
    const auto& la = a.locals[c.index_a];
    const auto& lb = b.locals[c.index_b];
    ordered_json m;
    m["a_index"] = c.index_a;
    m["b_index"] = c.index_b;
    m["weight"] = c.weight;
    m["a_uv"] = {la.u, la.v};
    m["b_uv"] = {lb.u, lb.v};
    m["a_scale"] = la.scale_index;
    m["b_scale"] = lb.scale_index;
    j["matches"].push_back(m);
  }
  const auto out = f.path("out");
  io::write_text_file(out, j.dump(2) + "\n");
  f.write_meta(out);
  return 0;
}

// ---- bench -----------------------------------------------------------------------

int run_bench(const FlagSet& f) {
  const auto cfg = frozen_benchmark(f.unsigned_integer("seed"));
  BenchmarkOptions opts;
  opts.run_baselines = f.boolean("baselines");
  opts.run_ablation = f.boolean("ablation");
  opts.threads = f.threads();
  const auto r = run_benchmark(cfg, opts);
  ordered_json j;
  j["config_digest"] = f.digest();
  j["map_global"] = r.map_global;
  j["map_oracle"] = r.map_oracle;
  j["map_rrt"] = r.map_rrt;
  if (opts.run_baselines) {
    j["map_gv"] = r.map_gv;
    j["map_aqe"] = r.map_aqe;
  }
  if (opts.run_ablation) {
    j["ablation"] = ordered_json::array();
    for (const auto& row : r.ablation) j["ablation"].push_back({{"locals", row.count}, {"map", row.map}});
  }
  j["train_steps"] = r.history.size();
  j["final_loss"] = r.history.empty() ? 0.0 : r.history.back().loss;
  const auto text = j.dump(2) + "\n";
  if (f.str("out").empty()) {
    std::cout << text;
  } else {
    io::write_text_file(f.path("out"), text);
    f.write_meta(f.path("out"));
  }
  return 0;
}

struct Command {
  std::string name;
  std::string description;
  std::vector<FlagSpec> flags;
  int (*run)(const FlagSet&);
};

std::vector<Command> commands() {
  return {
      {"synth", "generate a planted-part synthetic dataset", synth_flags(), run_synth},
      {"index",
       "build and save the exact global index",
       {{"gallery", "", "gallery descriptors (.rrtd)"},
        {"checkpoint", "", "index projected globals of this model instead of raw globals"},
        {"out", "", "index file", false}},
       run_index},
      {"retrieve",
       "global k-NN search for every query",
       {{"queries", "", "query descriptors (.rrtd)"},
        {"gallery", "", "gallery descriptors (.rrtd); ignored when --index is given"},
        {"index", "", "saved index from `rrt index`"},
        {"checkpoint", "", "search with this model's projected globals"},
        {"depth", "100", "neighbors kept per query"},
        {"out", "", "output neighbor lists (JSON Lines)", false}},
       run_retrieve},
      {"train", "train the reranker on labeled descriptors", train_flags(), run_train},
      {"rerank", "rerank neighbor lists", rerank_flags(), run_rerank},
      {"eval",
       "score neighbor lists against label ground truth",
       [] {
         auto s = eval_flags(false);
         s.push_back({"format", "auto", "json or csv; auto picks csv for a .csv path"});
         s.push_back({"method", "", "method name in the report; defaults to the lists' tag"});
         return s;
       }(),
       run_eval},
      {"compare", "evaluate several neighbor files into one method x metric table", eval_flags(true), run_compare},
      {"ablate", "rerank mAP as a function of the number of locals per image", ablate_flags(), run_ablate},
      {"correspond",
       "dump attention correspondences between two images as JSON",
       {{"queries", "", "descriptors (.rrtd) containing the images"},
        {"gallery", "", "optional second descriptor file"},
        {"checkpoint", "", "trained model"},
        {"a", "0", "id of the first image"},
        {"b", "0", "id of the second image"},
        {"out", "", "output JSON", false}},
       run_correspond},
      {"bench",
       "run the frozen synthetic benchmark end to end",
       {{"seed", "1", "benchmark seed (data, initialization and sampling)"},
        {"baselines", "false", "also run geometric verification and alpha-QE"},
        {"ablation", "false", "also run the locals-count ablation"},
        {"out", "", "output JSON; printed to stdout when empty", false}},
       run_bench},
  };
}

}  // namespace

std::vector<CommandFlags> command_registry() {
  std::vector<CommandFlags> out;
  for (auto& c : commands()) out.push_back({c.name, c.flags});
  return out;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"rrt: global retrieval followed by transformer reranking of local descriptors"};
  app.require_subcommand(1);
  app.fallthrough(false);
  const auto table = commands();
  std::vector<std::pair<CLI::App*, std::unique_ptr<FlagSet>>> subs;
  for (const auto& c : table) {
    auto* sub = app.add_subcommand(c.name, c.description);
    subs.emplace_back(sub, std::make_unique<FlagSet>(*sub, c.name, c.flags));
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!subs[i].first->parsed()) continue;
    auto& flags = *subs[i].second;
    try {
      flags.resolve();
      return table[i].run(flags);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "config error: %s\n", e.what());
      return 2;
    } catch (const NumericalError& e) {
      std::fprintf(stderr, "numerical error: %s\n", e.what());
      return 4;
    } catch (const FormatError& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return 3;
    } catch (const DimensionError& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return 3;
    } catch (const std::filesystem::filesystem_error& e) {
      std::fprintf(stderr, "data error: %s\n", e.what());
      return 3;
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 1;
    }
  }
  return 2;
}

}  // namespace rrt::cli
