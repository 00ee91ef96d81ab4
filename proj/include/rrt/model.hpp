#pragma once

// Reranking transformer: scores an image pair from its global and local
// descriptors. The input sequence is
//
//   [CLS; g(a); l(a)_1..L; SEP; g'(b); l'(b)_1..L]
//
// with g(x) = P_g x + alpha, l(x_i) = x_i + psi[s_i] (+ phi(p_i)) + beta, and
// the primed embeddings using the second image's segment vectors. C layers of
//
//   Zbar = LN(Z + MHA(Z));  Z' = LN(MLP(Zbar))     (MLP(x) = ReLU(x W1 + b1) W2 + b2)
//
// follow, and the logit is the CLS row of the last layer times the head.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/tensor.hpp"

namespace rrt {

struct ModelConfig {
  std::uint32_t L = 500;  // max locals per image
  std::uint16_t d = 128;  // token dimension
  std::uint8_t h = 4;     // heads
  std::uint8_t d_h = 32;  // per-head dimension
  std::uint8_t C = 6;     // layers
  std::uint16_t d_c = 1024;
  std::uint8_t n_scales = 7;
  std::uint32_t d_g_raw = 2048;
  bool use_pos_embed = false;
  bool use_global_token = true;
  bool use_scale_embed = true;
  bool mlp_residual = false;  // true: Z' = LN(Zbar + MLP(Zbar))

  void validate() const;
  // Tokens in a fully padded pair sequence.
  std::size_t sequence_length() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerParams {
  ag::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  ag::Tensor<T> w1, b1, w2, b2;
  ag::Tensor<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

template <typename T>
struct ModelParams {
  std::vector<LayerParams<T>> layers;
  ag::Tensor<T> global_w, global_b;  // absent when use_global_token is off
  ag::Tensor<T> head_w, head_b;
  ag::Tensor<T> cls, sep;
  ag::Tensor<T> seg_global_a, seg_global_b;  // absent when use_global_token is off
  ag::Tensor<T> seg_local_a, seg_local_b;
  ag::Tensor<T> scale_table;  // absent when use_scale_embed is off
};

struct ParamSpec {
  std::string name;
  ag::Shape shape;
};

// Every learnable tensor of a configuration, in canonical (checkpoint) order.
std::vector<ParamSpec> parameter_specs(const ModelConfig& cfg);
std::uint64_t param_count(const ModelConfig& cfg);

template <typename T>
struct Model {
  ModelConfig config;
  ModelParams<T> params;

  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, LayerNorm gain 1,
  // token/segment/scale embeddings ~ N(0, 0.02^2). Values are drawn in double
  // precision so float and double models built from one seed agree.
  static Model init(const ModelConfig& cfg, std::uint64_t seed);

  // (name, tensor) pairs in canonical order; tensors share storage.
  std::vector<std::pair<std::string, ag::Tensor<T>>> named_parameters() const;
  std::vector<ag::Tensor<T>> parameters() const;
  void zero_grad();

  template <typename U>
  Model<U> cast() const;
};

enum class SlotKind : std::uint8_t { kCls, kSep, kGlobalA, kLocalA, kGlobalB, kLocalB, kPad };

struct Slot {
  SlotKind kind = SlotKind::kPad;
  std::uint32_t index = 0;  // local index within its image
};

template <typename T>
struct TokenSequence {
  ag::Tensor<T> tokens;  // [T, d]
  std::vector<std::uint8_t> valid_mask;
  std::vector<Slot> slots;
};

enum class Padding {
  kFull,     // every image occupies L local slots, missing ones masked
  kCompact,  // only the locals an image actually has
};

template <typename T>
TokenSequence<T> assemble_input(const Model<T>& model, const ImageRecord& a, const ImageRecord& b,
                                Padding padding = Padding::kFull);

// Multi-head self-attention over z. Masked keys receive zero weight. When
// query_rows > 0 only the first query_rows outputs are produced. If attention
// is non-null it receives the head-averaged attention matrix, row-major.
template <typename T>
ag::Tensor<T> mha_forward(const LayerParams<T>& layer, const ModelConfig& cfg, const ag::Tensor<T>& z,
                          ag::Mask mask, std::size_t query_rows = 0, std::vector<T>* attention = nullptr);

template <typename T>
ag::Tensor<T> transformer_layer(const LayerParams<T>& layer, const ModelConfig& cfg, const ag::Tensor<T>& z,
                                ag::Mask mask, std::size_t query_rows = 0, std::vector<T>* attention = nullptr);

// Differentiable pair logit (scalar tensor). The last layer is evaluated for
// the CLS row only.
template <typename T>
ag::Tensor<T> pair_logit(const Model<T>& model, const ImageRecord& a, const ImageRecord& b,
                         Padding padding = Padding::kCompact);

struct PairScore {
  double logit = 0.0;
  double similarity = 0.5;
};

template <typename T>
PairScore score_pair(const Model<T>& model, const ImageRecord& a, const ImageRecord& b);

// score_pair(query, c).similarity for every candidate, using up to `threads`
// worker threads. Results do not depend on the thread count.
template <typename T>
std::vector<double> score_batch(const Model<T>& model, const ImageRecord& query,
                                std::span<const ImageRecord* const> candidates, unsigned threads = 1);

struct Correspondence {
  std::uint32_t index_a = 0;
  std::uint32_t index_b = 0;
  double weight = 0.0;
};

// Last-layer, head-averaged attention from a's local tokens to b's local
// tokens, matched one-to-one by a maximum-weight assignment.
template <typename T>
std::vector<Correspondence> attention_correspondences(const Model<T>& model, const ImageRecord& a,
                                                      const ImageRecord& b);

// Sinusoidal 2-D encoding of a canvas position; d must be divisible by 4.
std::vector<double> position_encoding(double u, double v, std::size_t d);

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model);
Model<float> decode_checkpoint(std::span<const std::uint8_t> bytes);

}  // namespace rrt
