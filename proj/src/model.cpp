#include "rrt/model.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "rrt/assignment.hpp"
#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/parallel.hpp"

namespace rrt {

using ag::Tensor;

namespace {

enum class Init { kWeight, kZero, kOne, kEmbed };

// Enumerates every learnable tensor of `cfg` in canonical order as
// fn(name, shape, slot, init).
template <typename T, typename Fn>
void visit_params(const ModelConfig& cfg, ModelParams<T>& p, Fn&& fn) {
  const std::size_t d = cfg.d, dc = cfg.d_c;
  p.layers.resize(cfg.C);
  for (std::size_t i = 0; i < cfg.C; ++i) {
    auto& l = p.layers[i];
    const auto pre = "layer" + std::to_string(i) + ".";
    fn(pre + "q.weight", ag::Shape{d, d}, l.wq, Init::kWeight);
    fn(pre + "q.bias", ag::Shape{d}, l.bq, Init::kZero);
    fn(pre + "k.weight", ag::Shape{d, d}, l.wk, Init::kWeight);
    fn(pre + "k.bias", ag::Shape{d}, l.bk, Init::kZero);
    fn(pre + "v.weight", ag::Shape{d, d}, l.wv, Init::kWeight);
    fn(pre + "v.bias", ag::Shape{d}, l.bv, Init::kZero);
    fn(pre + "o.weight", ag::Shape{d, d}, l.wo, Init::kWeight);
    fn(pre + "o.bias", ag::Shape{d}, l.bo, Init::kZero);
    fn(pre + "mlp1.weight", ag::Shape{d, dc}, l.w1, Init::kWeight);
    fn(pre + "mlp1.bias", ag::Shape{dc}, l.b1, Init::kZero);
    fn(pre + "mlp2.weight", ag::Shape{dc, d}, l.w2, Init::kWeight);
    fn(pre + "mlp2.bias", ag::Shape{d}, l.b2, Init::kZero);
    fn(pre + "ln1.gain", ag::Shape{d}, l.ln1_gain, Init::kOne);
    fn(pre + "ln1.bias", ag::Shape{d}, l.ln1_bias, Init::kZero);
    fn(pre + "ln2.gain", ag::Shape{d}, l.ln2_gain, Init::kOne);
    fn(pre + "ln2.bias", ag::Shape{d}, l.ln2_bias, Init::kZero);
  }
  if (cfg.use_global_token) {
    fn("global_proj.weight", ag::Shape{cfg.d_g_raw, d}, p.global_w, Init::kWeight);
    fn("global_proj.bias", ag::Shape{d}, p.global_b, Init::kZero);
  }
  fn("head.weight", ag::Shape{d}, p.head_w, Init::kWeight);
  fn("head.bias", ag::Shape{1}, p.head_b, Init::kZero);
  fn("token.cls", ag::Shape{d}, p.cls, Init::kEmbed);
  fn("token.sep", ag::Shape{d}, p.sep, Init::kEmbed);
  if (cfg.use_global_token) {
    fn("segment.global_a", ag::Shape{d}, p.seg_global_a, Init::kEmbed);
    fn("segment.global_b", ag::Shape{d}, p.seg_global_b, Init::kEmbed);
  }
  fn("segment.local_a", ag::Shape{d}, p.seg_local_a, Init::kEmbed);
  fn("segment.local_b", ag::Shape{d}, p.seg_local_b, Init::kEmbed);
  if (cfg.use_scale_embed) fn("scale_embed", ag::Shape{cfg.n_scales, d}, p.scale_table, Init::kEmbed);
}

void check_record(const ModelConfig& cfg, const ImageRecord& r) {
  if (r.locals.size() > cfg.L) {
    throw ConfigError("image " + std::to_string(r.id) + " has " + std::to_string(r.locals.size()) +
                      " locals, model accepts at most " + std::to_string(cfg.L));
  }
  if (cfg.use_global_token && r.global.size() != cfg.d_g_raw) {
    throw DimensionError("image " + std::to_string(r.id) + ": global dimension " + std::to_string(r.global.size()) +
                         " does not match model d_g_raw " + std::to_string(cfg.d_g_raw));
  }
  for (const auto& l : r.locals) {
    if (l.vec.size() != cfg.d) {
      throw DimensionError("image " + std::to_string(r.id) + ": local dimension " + std::to_string(l.vec.size()) +
                           " does not match model dimension " + std::to_string(cfg.d));
    }
    if (l.scale_index >= cfg.n_scales) {
      throw FormatError("image " + std::to_string(r.id) + ": scale index " + std::to_string(l.scale_index) +
                        " out of range for " + std::to_string(cfg.n_scales) + " scales");
    }
  }
}

}  // namespace

// -- config ------------------------------------------------------------------

void ModelConfig::validate() const {
  if (L == 0 || d == 0 || h == 0 || d_h == 0 || C == 0 || d_c == 0 || n_scales == 0 || d_g_raw == 0) {
    throw ConfigError("model config: all extents must be positive");
  }
  if (static_cast<std::uint32_t>(h) * d_h != d) {
    throw ConfigError("model config: heads (" + std::to_string(h) + ") x head dim (" + std::to_string(d_h) +
                      ") must equal d (" + std::to_string(d) + ")");
  }
  if (use_pos_embed && d % 4 != 0) throw ConfigError("model config: position embedding needs d divisible by 4");
}

std::size_t ModelConfig::sequence_length() const {
  return 2 + 2 * (static_cast<std::size_t>(L) + (use_global_token ? 1 : 0));
}

std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams<float> scratch;
  std::vector<ParamSpec> specs;
  visit_params(cfg, scratch, [&](const std::string& name, const ag::Shape& shape, auto&, Init) {
    specs.push_back({name, shape});
  });
  return specs;
}

std::uint64_t param_count(const ModelConfig& cfg) {
  std::uint64_t total = 0;
  for (const auto& s : parameter_specs(cfg)) total += ag::shape_numel(s.shape);
  return total;
}

// -- parameters ----------------------------------------------------------------

template <typename T>
Model<T> Model<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model<T> model;
  model.config = cfg;
  std::mt19937_64 rng(seed);
  visit_params(cfg, model.params, [&](const std::string&, const ag::Shape& shape, Tensor<T>& slot, Init init) {
    const auto n = ag::shape_numel(shape);
    std::vector<T> values(n, T(0));
    switch (init) {
      case Init::kWeight: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : values) v = static_cast<T>(dist(rng));
        break;
      }
      case Init::kEmbed: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : values) v = static_cast<T>(dist(rng));
        break;
      }
      case Init::kOne:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case Init::kZero:
        break;
    }
    slot = Tensor<T>::from(shape, std::move(values), true);
  });
  return model;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto& params_ref = const_cast<ModelParams<T>&>(params);
  visit_params(config, params_ref, [&](const std::string& name, const ag::Shape&, Tensor<T>& slot, Init) {
    out.emplace_back(name, slot);
  });
  return out;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out;
  out.config = config;
  auto src = named_parameters();
  std::size_t i = 0;
  visit_params(config, out.params, [&](const std::string&, const ag::Shape& shape, Tensor<U>& slot, Init) {
    const auto data = src[i++].second.data();
    std::vector<U> values(data.begin(), data.end());
    slot = Tensor<U>::from(shape, std::move(values), true);
  });
  return out;
}

// -- forward -------------------------------------------------------------------

std::vector<double> position_encoding(double u, double v, std::size_t d) {
  if (d % 4 != 0) throw ConfigError("position_encoding: dimension must be divisible by 4");
  const std::size_t half = d / 2;
  std::vector<double> out(d);
  const double coords[2] = {v / 1024.0 * 2.0 * std::numbers::pi, u / 1024.0 * 2.0 * std::numbers::pi};
  for (std::size_t axis = 0; axis < 2; ++axis) {
    for (std::size_t i = 0; i < half / 2; ++i) {
      const double freq = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(half));
      out[axis * half + 2 * i] = std::sin(coords[axis] / freq);
      out[axis * half + 2 * i + 1] = std::cos(coords[axis] / freq);
    }
  }
  return out;
}

template <typename T>
TokenSequence<T> assemble_input(const Model<T>& model, const ImageRecord& a, const ImageRecord& b, Padding padding) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  check_record(cfg, a);
  check_record(cfg, b);
  const std::size_t d = cfg.d;

  TokenSequence<T> seq;
  std::vector<Tensor<T>> rows;
  auto push_slots = [&](SlotKind kind, std::size_t count, bool valid) {
    for (std::size_t i = 0; i < count; ++i) {
      seq.slots.push_back({kind, static_cast<std::uint32_t>(i)});
      seq.valid_mask.push_back(valid ? 1 : 0);
    }
  };

  auto add_image = [&](const ImageRecord& r, const Tensor<T>& seg_global, const Tensor<T>& seg_local,
                       SlotKind global_kind, SlotKind local_kind) {
    if (cfg.use_global_token) {
      auto g = Tensor<T>::from({1, cfg.d_g_raw}, std::vector<T>(r.global.begin(), r.global.end()));
      rows.push_back(ag::add_row(ag::linear(g, p.global_w, p.global_b), seg_global));
      push_slots(global_kind, 1, true);
    }
    const std::size_t n = r.locals.size();
    if (n > 0) {
      std::vector<T> x(n * d);
      std::vector<std::size_t> scales(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& l = r.locals[i];
        for (std::size_t c = 0; c < d; ++c) x[i * d + c] = static_cast<T>(l.vec[c]);
        if (cfg.use_pos_embed) {
          const auto pe = position_encoding(l.u, l.v, d);
          for (std::size_t c = 0; c < d; ++c) x[i * d + c] += static_cast<T>(pe[c]);
        }
        scales[i] = l.scale_index;
      }
      auto block = Tensor<T>::from({n, d}, std::move(x));
      if (cfg.use_scale_embed) block = ag::add(block, ag::embedding(p.scale_table, scales));
      rows.push_back(ag::add_row(block, seg_local));
      push_slots(local_kind, n, true);
    }
    if (padding == Padding::kFull && n < cfg.L) {
      rows.push_back(Tensor<T>::zeros({cfg.L - n, d}));
      push_slots(SlotKind::kPad, cfg.L - n, false);
    }
  };

  rows.push_back(ag::reshape(p.cls, {1, d}));
  push_slots(SlotKind::kCls, 1, true);
  add_image(a, p.seg_global_a, p.seg_local_a, SlotKind::kGlobalA, SlotKind::kLocalA);
  rows.push_back(ag::reshape(p.sep, {1, d}));
  push_slots(SlotKind::kSep, 1, true);
  add_image(b, p.seg_global_b, p.seg_local_b, SlotKind::kGlobalB, SlotKind::kLocalB);
  seq.tokens = ag::concat(rows, 0);
  return seq;
}

template <typename T>
Tensor<T> mha_forward(const LayerParams<T>& layer, const ModelConfig& cfg, const Tensor<T>& z, ag::Mask mask,
                      std::size_t query_rows, std::vector<T>* attention) {
  const std::size_t tokens = z.dim(0);
  if (z.ndim() != 2 || z.dim(1) != cfg.d) {
    throw DimensionError("mha_forward: expected [T," + std::to_string(cfg.d) + "] input, got " +
                         ag::shape_str(z.shape()));
  }
  if (mask.size() != tokens) throw DimensionError("mha_forward: mask length does not match sequence length");
  const auto zq = query_rows > 0 ? ag::slice_rows(z, 0, query_rows) : z;
  const std::size_t nq = zq.dim(0);
  const auto q = ag::linear(zq, layer.wq, layer.bq);
  const auto k = ag::linear(z, layer.wk, layer.bk);
  const auto v = ag::linear(z, layer.wv, layer.bv);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(cfg.d_h));
  if (attention) attention->assign(nq * tokens, T(0));

  std::vector<Tensor<T>> heads;
  heads.reserve(cfg.h);
  for (std::size_t head = 0; head < cfg.h; ++head) {
    const std::size_t c0 = head * cfg.d_h;
    const auto qh = ag::slice_cols(q, c0, cfg.d_h);
    const auto kh = ag::slice_cols(k, c0, cfg.d_h);
    const auto vh = ag::slice_cols(v, c0, cfg.d_h);
    const auto weights = ag::masked_softmax_lastdim(ag::scale(ag::matmul(qh, ag::transpose(kh)), inv_sqrt), mask);
    if (attention) {
      const auto w = weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) (*attention)[i] += w[i] / static_cast<T>(cfg.h);
    }
    heads.push_back(ag::matmul(weights, vh));
  }
  const auto merged = heads.size() == 1 ? heads.front() : ag::concat(heads, 1);
  return ag::linear(merged, layer.wo, layer.bo);
}

template <typename T>
Tensor<T> transformer_layer(const LayerParams<T>& layer, const ModelConfig& cfg, const Tensor<T>& z, ag::Mask mask,
                            std::size_t query_rows, std::vector<T>* attention) {
  constexpr T kEps = T(1e-5);
  const auto residual = query_rows > 0 ? ag::slice_rows(z, 0, query_rows) : z;
  const auto attended = mha_forward(layer, cfg, z, mask, query_rows, attention);
  const auto zbar = ag::layer_norm(ag::add(residual, attended), layer.ln1_gain, layer.ln1_bias, kEps);
  const auto hidden = ag::relu(ag::linear(zbar, layer.w1, layer.b1));
  auto mlp = ag::linear(hidden, layer.w2, layer.b2);
  if (cfg.mlp_residual) mlp = ag::add(zbar, mlp);
  return ag::layer_norm(mlp, layer.ln2_gain, layer.ln2_bias, kEps);
}

template <typename T>
Tensor<T> pair_logit(const Model<T>& model, const ImageRecord& a, const ImageRecord& b, Padding padding) {
  const auto& cfg = model.config;
  const auto seq = assemble_input(model, a, b, padding);
  auto z = seq.tokens;
  for (std::size_t i = 0; i < cfg.C; ++i) {
    const bool last = i + 1 == cfg.C;
    z = transformer_layer(model.params.layers[i], cfg, z, seq.valid_mask, last ? 1 : 0);
  }
  const auto cls = ag::reshape(z, {cfg.d});
  return ag::add(ag::sum(ag::mul(cls, model.params.head_w)), ag::reshape(model.params.head_b, {}));
}

template <typename T>
PairScore score_pair(const Model<T>& model, const ImageRecord& a, const ImageRecord& b) {
  ag::NoGradGuard no_grad;
  const double logit = static_cast<double>(pair_logit(model, a, b).item());
  const double sim = logit >= 0 ? 1.0 / (1.0 + std::exp(-logit)) : std::exp(logit) / (1.0 + std::exp(logit));
  return {logit, sim};
}

template <typename T>
std::vector<double> score_batch(const Model<T>& model, const ImageRecord& query,
                                std::span<const ImageRecord* const> candidates, unsigned threads) {
  std::vector<double> out(candidates.size());
  parallel_for(candidates.size(), threads,
               [&](std::size_t i) { out[i] = score_pair(model, query, *candidates[i]).similarity; });
  return out;
}

template <typename T>
std::vector<Correspondence> attention_correspondences(const Model<T>& model, const ImageRecord& a,
                                                      const ImageRecord& b) {
  if (a.locals.empty() || b.locals.empty()) return {};
  ag::NoGradGuard no_grad;
  const auto& cfg = model.config;
  const auto seq = assemble_input(model, a, b, Padding::kCompact);
  auto z = seq.tokens;
  std::vector<T> attention;
  for (std::size_t i = 0; i < cfg.C; ++i) {
    const bool last = i + 1 == cfg.C;
    z = transformer_layer(model.params.layers[i], cfg, z, seq.valid_mask, 0, last ? &attention : nullptr);
  }
  const std::size_t tokens = seq.slots.size();
  std::vector<std::size_t> rows_a, cols_b;
  for (std::size_t t = 0; t < tokens; ++t) {
    if (seq.slots[t].kind == SlotKind::kLocalA) rows_a.push_back(t);
    if (seq.slots[t].kind == SlotKind::kLocalB) cols_b.push_back(t);
  }
  std::vector<double> affinity(rows_a.size() * cols_b.size());
  for (std::size_t i = 0; i < rows_a.size(); ++i)
    for (std::size_t j = 0; j < cols_b.size(); ++j)
      affinity[i * cols_b.size() + j] = static_cast<double>(attention[rows_a[i] * tokens + cols_b[j]]);
  const auto assignment = max_weight_assignment(affinity, rows_a.size(), cols_b.size());
  std::vector<Correspondence> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0) continue;
    const auto j = static_cast<std::size_t>(assignment[i]);
    out.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), affinity[i * cols_b.size() + j]});
  }
  return out;
}

// -- checkpoints -------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'R', 'R', 'T', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model) {
  const auto& cfg = model.config;
  cfg.validate();
  io::ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(cfg.L);
  w.u16(cfg.d);
  w.u8(cfg.h);
  w.u8(cfg.d_h);
  w.u8(cfg.C);
  w.u16(cfg.d_c);
  w.u8(cfg.n_scales);
  w.u32(cfg.d_g_raw);
  const std::uint8_t flags = (cfg.use_pos_embed ? 1 : 0) | (cfg.use_global_token ? 2 : 0) |
                             (cfg.use_scale_embed ? 4 : 0) | (cfg.mlp_residual ? 8 : 0);
  w.u8(flags);
  const auto named = model.named_parameters();
  w.u16(static_cast<std::uint16_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.u8(static_cast<std::uint8_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u8(static_cast<std::uint8_t>(t.ndim()));
    for (auto dim : t.shape()) w.u32(static_cast<std::uint32_t>(dim));
    for (float x : t.data()) w.f32(x);
  }
  return w.take();
}

Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) {
    throw FormatError("bad magic at byte offset 0: not a model checkpoint");
  }
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  cfg.L = r.u32("L");
  cfg.d = r.u16("d");
  cfg.h = r.u8("h");
  cfg.d_h = r.u8("d_h");
  cfg.C = r.u8("C");
  cfg.d_c = r.u16("d_c");
  cfg.n_scales = r.u8("n_scales");
  cfg.d_g_raw = r.u32("d_g_raw");
  const auto flags = r.u8("flags");
  cfg.use_pos_embed = flags & 1;
  cfg.use_global_token = flags & 2;
  cfg.use_scale_embed = flags & 4;
  cfg.mlp_residual = flags & 8;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config is invalid: ") + e.what());
  }

  const auto specs = parameter_specs(cfg);
  const auto count = r.u16("tensor count");
  if (count != specs.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(specs.size()));
  }
  std::vector<std::vector<float>> values;
  for (const auto& spec : specs) {
    const auto name_len = r.u8("tensor name length");
    const auto name = r.str(name_len, "tensor name");
    if (name != spec.name) throw FormatError("checkpoint tensor '" + name + "' where '" + spec.name + "' expected");
    const auto ndim = r.u8("tensor rank");
    ag::Shape shape;
    for (std::uint8_t i = 0; i < ndim; ++i) shape.push_back(r.u32("tensor dim"));
    if (shape != spec.shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + ag::shape_str(shape) + ", config implies " +
                        ag::shape_str(spec.shape));
    }
    std::vector<float> data(ag::shape_numel(shape));
    r.need(data.size() * 4, "tensor data");
    for (auto& x : data) x = r.f32("tensor data");
    values.push_back(std::move(data));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after tensor table at byte offset " + std::to_string(r.offset()));

  Model<float> model;
  model.config = cfg;
  std::size_t i = 0;
  visit_params(cfg, model.params, [&](const std::string&, const ag::Shape& shape, Tensor<float>& slot, Init) {
    slot = Tensor<float>::from(shape, std::move(values[i++]), true);
  });
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  io::write_file(path, encode_checkpoint(model));
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// -- instantiations ------------------------------------------------------------------

#define RRT_INSTANTIATE_MODEL(T)                                                                              \
  template struct Model<T>;                                                                                   \
  template TokenSequence<T> assemble_input(const Model<T>&, const ImageRecord&, const ImageRecord&, Padding); \
  template Tensor<T> mha_forward(const LayerParams<T>&, const ModelConfig&, const Tensor<T>&, ag::Mask,       \
                                 std::size_t, std::vector<T>*);                                               \
  template Tensor<T> transformer_layer(const LayerParams<T>&, const ModelConfig&, const Tensor<T>&, ag::Mask, \
                                       std::size_t, std::vector<T>*);                                         \
  template Tensor<T> pair_logit(const Model<T>&, const ImageRecord&, const ImageRecord&, Padding);            \
  template PairScore score_pair(const Model<T>&, const ImageRecord&, const ImageRecord&);                     \
  template std::vector<double> score_batch(const Model<T>&, const ImageRecord&,                               \
                                           std::span<const ImageRecord* const>, unsigned);                    \
  template std::vector<Correspondence> attention_correspondences(const Model<T>&, const ImageRecord&,         \
                                                                 const ImageRecord&);

RRT_INSTANTIATE_MODEL(float)
RRT_INSTANTIATE_MODEL(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;

#undef RRT_INSTANTIATE_MODEL

}  // namespace rrt
