#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "helpers.hpp"
#include "rrt/binary_io.hpp"
#include "rrt/errors.hpp"
#include "rrt/model.hpp"

using namespace rrt;

namespace {

// Shape-table sum written out independently of parameter_specs.
std::uint64_t hand_count(std::uint64_t d, std::uint64_t dc, std::uint64_t C, std::uint64_t dg, std::uint64_t scales) {
  const std::uint64_t attn = 4 * (d * d + d);
  const std::uint64_t mlp = d * dc + dc + dc * d + d;
  const std::uint64_t norms = 4 * d;
  const std::uint64_t layer = attn + mlp + norms;
  return C * layer + (dg * d + d) + (d + 1) + 2 * d + 4 * d + scales * d;
}

}  // namespace

TEST_CASE("default configuration has the published parameter count") {
  const ModelConfig cfg;
  CHECK(param_count(cfg) == 2243201);
  CHECK(param_count(cfg) == 6 * 329856ull + 262272 + 129 + 256 + 512 + 896);
  CHECK(param_count(cfg) == hand_count(128, 1024, 6, 2048, 7));
}

TEST_CASE("parameter count tracks layers and flags") {
  ModelConfig cfg;
  cfg.C = 1;
  CHECK(param_count(cfg) == 593921);
  cfg = ModelConfig{};
  cfg.use_scale_embed = false;
  CHECK(param_count(cfg) == 2243201 - 896);
  cfg = ModelConfig{};
  cfg.use_global_token = false;
  CHECK(param_count(cfg) == 2243201 - 262272 - 256);

  const auto tiny = testing::tiny_config();
  const auto model = Model<float>::init(tiny, 1);
  std::uint64_t total = 0;
  for (const auto& [name, t] : model.named_parameters()) total += t.numel();
  CHECK(total == param_count(tiny));
  CHECK(total == hand_count(8, 16, 2, 6, 7));
}

TEST_CASE("configuration validation") {
  ModelConfig cfg;
  cfg.h = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ModelConfig{};
  cfg.d = 30;
  cfg.h = 3;
  cfg.d_h = 10;
  cfg.use_pos_embed = true;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(ModelConfig{}.sequence_length() == 1004);
}

TEST_CASE("initialization follows the declared distributions") {
  const auto model = Model<double>::init(ModelConfig{}, 3);
  for (const auto& [name, t] : model.named_parameters()) {
    const auto data = t.data();
    if (name.ends_with(".bias") && name != "head.bias") {
      CHECK(std::all_of(data.begin(), data.end(), [](double x) { return x == 0.0; }));
    } else if (name.ends_with(".gain")) {
      CHECK(std::all_of(data.begin(), data.end(), [](double x) { return x == 1.0; }));
    } else if (name.ends_with(".weight")) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.dim(0)));
      CHECK(std::all_of(data.begin(), data.end(), [&](double x) { return std::abs(x) <= bound; }));
    }
  }
  // Embedding standard deviation over the largest table.
  const auto scale = model.params.scale_table.data();
  double ss = 0;
  for (double x : scale) ss += x * x;
  CHECK(std::sqrt(ss / static_cast<double>(scale.size())) == doctest::Approx(0.02).epsilon(0.15));
}

TEST_CASE("float and double models from one seed agree") {
  const auto cfg = testing::tiny_config();
  const auto f = Model<float>::init(cfg, 5);
  const auto d = Model<double>::init(cfg, 5);
  const auto nf = f.named_parameters();
  const auto nd = d.named_parameters();
  REQUIRE(nf.size() == nd.size());
  for (std::size_t i = 0; i < nf.size(); ++i) {
    for (std::size_t j = 0; j < nf[i].second.numel(); ++j)
      CHECK(nf[i].second.at(j) == static_cast<float>(nd[i].second.at(j)));
  }
}

TEST_CASE("end-to-end gradients match central differences for every tensor") {
  const auto cfg = testing::tiny_config(4, 2, 8, 2);
  auto model = Model<double>::init(cfg, 11);
  // Larger embeddings make the attention pattern non-trivial.
  for (auto& [name, t] : model.named_parameters()) {
    if (name.starts_with("token.") || name.starts_with("segment.") || name == "scale_embed") {
      for (auto& x : t.mutable_data()) x *= 25.0;
    }
  }
  std::mt19937_64 rng(2);
  const auto a = testing::random_record(rng, 1, 0, 3, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 4, cfg.d, cfg.d_g_raw);

  model.zero_grad();
  ag::backward(ag::bce_with_logits(pair_logit(model, a, b, Padding::kFull), 1));
  const auto loss = [&] {
    ag::NoGradGuard guard;
    return ag::bce_with_logits(pair_logit(model, a, b, Padding::kFull), 1).item();
  };
  std::size_t checked = 0;
  for (auto& [name, t] : model.named_parameters()) {
    CAPTURE(name);
    REQUIRE(t.has_grad());
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const auto numeric = testing::numeric_grad(t, loss);
    CHECK(testing::relative_error(analytic, numeric) < 1e-4);
    ++checked;
  }
  CHECK(checked == parameter_specs(cfg).size());
}

TEST_CASE("padding and local order do not change the logit") {
  const auto cfg = testing::tiny_config(12, 2, 16, 4);
  const auto model = Model<float>::init(cfg, 4);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> count(1, cfg.L);
  double worst_pad = 0, worst_perm = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto a = testing::random_record(rng, 1, 0, count(rng), cfg.d, cfg.d_g_raw);
    auto b = testing::random_record(rng, 2, 0, count(rng), cfg.d, cfg.d_g_raw);
    ag::NoGradGuard guard;
    const double compact = pair_logit(model, a, b, Padding::kCompact).item();
    const double full = pair_logit(model, a, b, Padding::kFull).item();
    worst_pad = std::max(worst_pad, std::abs(compact - full));

    std::shuffle(a.locals.begin(), a.locals.end(), rng);
    std::shuffle(b.locals.begin(), b.locals.end(), rng);
    worst_perm = std::max(worst_perm, std::abs(pair_logit(model, a, b, Padding::kFull).item() - full));
  }
  CHECK(worst_pad < 1e-5);
  CHECK(worst_perm < 1e-4);
}

TEST_CASE("masked pad content is ignored") {
  // Mask-only invariance: whatever sits in masked rows has no influence.
  const auto cfg = testing::tiny_config(6, 2, 8, 2);
  const auto model = Model<double>::init(cfg, 8);
  std::mt19937_64 rng(1);
  const auto a = testing::random_record(rng, 1, 0, 2, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 3, cfg.d, cfg.d_g_raw);
  auto seq = assemble_input(model, a, b, Padding::kFull);
  const auto run = [&](const ag::Tensor<double>& tokens) {
    auto z = tokens;
    for (std::size_t i = 0; i < cfg.C; ++i)
      z = transformer_layer(model.params.layers[i], cfg, z, seq.valid_mask, i + 1 == cfg.C ? 1 : 0);
    return std::vector<double>(z.data().begin(), z.data().end());
  };
  const auto base = run(seq.tokens);
  auto noisy = seq.tokens.clone();
  auto data = noisy.mutable_data();
  for (std::size_t t = 0; t < seq.valid_mask.size(); ++t) {
    if (seq.valid_mask[t]) continue;
    for (std::size_t c = 0; c < cfg.d; ++c) data[t * cfg.d + c] = 100.0 * static_cast<double>(c + t);
  }
  const auto perturbed = run(noisy);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(perturbed[i] == doctest::Approx(base[i]).epsilon(1e-12));
}

TEST_CASE("token layout") {
  const auto cfg = testing::tiny_config(5, 1, 8, 2);
  const auto model = Model<float>::init(cfg, 1);
  std::mt19937_64 rng(3);
  const auto a = testing::random_record(rng, 1, 0, 2, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 3, cfg.d, cfg.d_g_raw);
  const auto full = assemble_input(model, a, b, Padding::kFull);
  REQUIRE(full.slots.size() == cfg.sequence_length());
  CHECK(full.slots[0].kind == SlotKind::kCls);
  CHECK(full.slots[1].kind == SlotKind::kGlobalA);
  CHECK(full.slots[2].kind == SlotKind::kLocalA);
  CHECK(full.slots[4].kind == SlotKind::kPad);
  CHECK(full.slots[7].kind == SlotKind::kSep);
  CHECK(full.slots[8].kind == SlotKind::kGlobalB);
  CHECK(std::count(full.valid_mask.begin(), full.valid_mask.end(), 1) == 9);
  const auto compact = assemble_input(model, a, b, Padding::kCompact);
  CHECK(compact.slots.size() == 9);

  // Local token = descriptor + scale embedding + local segment vector.
  const auto& l = a.locals[0];
  for (std::size_t c = 0; c < cfg.d; ++c) {
    const float expect = l.vec[c] + model.params.scale_table.at(l.scale_index * cfg.d + c) +
                         model.params.seg_local_a.at(c);
    CHECK(compact.tokens.at(2 * cfg.d + c) == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("input validation") {
  const auto cfg = testing::tiny_config();
  const auto model = Model<float>::init(cfg, 1);
  std::mt19937_64 rng(3);
  const auto ok = testing::random_record(rng, 1, 0, 2, cfg.d, cfg.d_g_raw);
  CHECK_THROWS_AS(score_pair(model, testing::random_record(rng, 2, 0, cfg.L + 1, cfg.d, cfg.d_g_raw), ok), ConfigError);
  CHECK_THROWS_AS(score_pair(model, testing::random_record(rng, 2, 0, 2, cfg.d + 1, cfg.d_g_raw), ok), DimensionError);
  CHECK_THROWS_AS(score_pair(model, testing::random_record(rng, 2, 0, 2, cfg.d, cfg.d_g_raw + 1), ok), DimensionError);
  auto bad_scale = ok;
  bad_scale.locals[0].scale_index = cfg.n_scales;
  CHECK_THROWS_AS(score_pair(model, bad_scale, ok), FormatError);
}

TEST_CASE("images without locals are scored from globals alone") {
  const auto cfg = testing::tiny_config();
  const auto model = Model<float>::init(cfg, 1);
  std::mt19937_64 rng(3);
  const auto a = testing::random_record(rng, 1, 0, 0, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 0, cfg.d, cfg.d_g_raw);
  const auto s = score_pair(model, a, b);
  CHECK(std::isfinite(s.logit));
  CHECK(attention_correspondences(model, a, b).empty());
}

TEST_CASE("untrained similarity is near one half") {
  const auto model = Model<float>::init(testing::tiny_config(16, 2, 32, 4), 7);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10; ++i) {
    const auto a = testing::random_record(rng, 1, 0, 10, 32, 6);
    const auto b = testing::random_record(rng, 2, 0, 12, 32, 6);
    const auto s = score_pair(model, a, b);
    CHECK(std::abs(s.similarity - 0.5) < 0.25);
    CHECK(s.similarity == doctest::Approx(1.0 / (1.0 + std::exp(-s.logit))));
  }
}

TEST_CASE("batch scores do not depend on the thread count") {
  const auto cfg = testing::tiny_config(8, 2, 16, 4);
  const auto model = Model<float>::init(cfg, 2);
  std::mt19937_64 rng(6);
  const auto q = testing::random_record(rng, 0, 0, 5, cfg.d, cfg.d_g_raw);
  std::vector<ImageRecord> gallery;
  for (std::uint32_t i = 1; i <= 13; ++i) gallery.push_back(testing::random_record(rng, i, 0, 6, cfg.d, cfg.d_g_raw));
  std::vector<const ImageRecord*> ptrs;
  for (const auto& g : gallery) ptrs.push_back(&g);
  const auto one = score_batch(model, q, ptrs, 1);
  const auto four = score_batch(model, q, ptrs, 4);
  CHECK(one == four);
  for (std::size_t i = 0; i < ptrs.size(); ++i) CHECK(one[i] == score_pair(model, q, *ptrs[i]).similarity);
}

TEST_CASE("attention correspondences are one-to-one") {
  const auto cfg = testing::tiny_config(10, 2, 16, 4);
  const auto model = Model<float>::init(cfg, 2);
  std::mt19937_64 rng(4);
  const auto a = testing::random_record(rng, 1, 0, 7, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 4, cfg.d, cfg.d_g_raw);
  const auto matches = attention_correspondences(model, a, b);
  CHECK(matches.size() == 4);
  std::set<std::uint32_t> used_a, used_b;
  for (const auto& m : matches) {
    CHECK(m.index_a < 7);
    CHECK(m.index_b < 4);
    CHECK(m.weight >= 0.0);
    CHECK(m.weight <= 1.0);
    used_a.insert(m.index_a);
    used_b.insert(m.index_b);
  }
  CHECK(used_a.size() == 4);
  CHECK(used_b.size() == 4);
}

TEST_CASE("position encoding") {
  const auto pe = position_encoding(0.0, 0.0, 8);
  // sin(0) = 0 and cos(0) = 1 in both halves.
  CHECK(pe == std::vector<double>{0, 1, 0, 1, 0, 1, 0, 1});
  const auto other = position_encoding(512.0, 256.0, 8);
  CHECK(other[0] == doctest::Approx(std::sin(256.0 / 1024.0 * 2 * M_PI)));
  CHECK(other[4] == doctest::Approx(std::sin(512.0 / 1024.0 * 2 * M_PI)));
  CHECK_THROWS_AS(position_encoding(0, 0, 6), ConfigError);

  auto cfg = testing::tiny_config(6, 2, 8, 2);
  cfg.use_pos_embed = true;
  const auto model = Model<float>::init(cfg, 1);
  std::mt19937_64 rng(1);
  auto a = testing::random_record(rng, 1, 0, 3, cfg.d, cfg.d_g_raw);
  const auto b = testing::random_record(rng, 2, 0, 3, cfg.d, cfg.d_g_raw);
  const double before = score_pair(model, a, b).logit;
  a.locals[0].u += 300.0f;
  CHECK(score_pair(model, a, b).logit != before);
}

TEST_CASE("checkpoint round trip is bit exact") {
  auto cfg = testing::tiny_config(7, 2, 8, 2);
  cfg.mlp_residual = true;
  const auto model = Model<float>::init(cfg, 99);
  const auto bytes = encode_checkpoint(model);
  const auto back = decode_checkpoint(bytes);
  CHECK(back.config == cfg);
  CHECK(encode_checkpoint(back) == bytes);
  const auto a = back.named_parameters();
  const auto b = model.named_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(std::equal(a[i].second.data().begin(), a[i].second.data().end(), b[i].second.data().begin()));
  }

  const auto path = std::filesystem::temp_directory_path() / "rrt_test_model.rrtm";
  save_checkpoint(path, model);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const auto model = Model<float>::init(testing::tiny_config(), 1);
  auto bytes = encode_checkpoint(model);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
}
