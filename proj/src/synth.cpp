#include "rrt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rrt/errors.hpp"

namespace rrt {

namespace {

constexpr float kCanvas = 1024.0f;

struct World {
  std::vector<std::vector<float>> parts;              // [instance * P + p]
  std::vector<std::pair<float, float>> part_positions;  // canonical (u, v)
  std::vector<std::uint8_t> part_scales;
  std::vector<std::vector<float>> global_prototypes;  // per instance
};

std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      sq += x * x;
    }
  } while (sq == 0.0);
  const double inv = 1.0 / std::sqrt(sq);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] * inv);
  return out;
}

// normalize(base + noise * random unit direction)
std::vector<float> perturb(std::mt19937_64& rng, const std::vector<float>& base, double noise) {
  if (noise == 0.0) return base;
  const auto dir = random_unit(rng, base.size());
  std::vector<float> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = static_cast<float>(base[i] + noise * dir[i]);
  l2_normalize_inplace(out);
  return out;
}

World build_world(const SynthConfig& cfg, std::mt19937_64& rng, std::uint8_t n_scales) {
  World w;
  std::uniform_real_distribution<float> canonical(256.0f, 768.0f);
  std::uniform_int_distribution<int> scale(0, n_scales - 1);
  const std::size_t total_parts = static_cast<std::size_t>(cfg.n_instances) * cfg.parts_per_instance;
  w.parts.reserve(total_parts);
  for (std::size_t i = 0; i < total_parts; ++i) {
    w.parts.push_back(random_unit(rng, cfg.d_l));
    const float u = canonical(rng);
    const float v = canonical(rng);
    w.part_positions.emplace_back(u, v);
    w.part_scales.push_back(static_cast<std::uint8_t>(scale(rng)));
  }
  for (std::uint32_t i = 0; i < cfg.n_instances; ++i) {
    const bool confused_follower = (i % 2 == 1) && (i / 2 < cfg.confusion_pairs);
    if (confused_follower) {
      w.global_prototypes.push_back(perturb(rng, w.global_prototypes[i - 1], cfg.confusion_noise));
    } else {
      w.global_prototypes.push_back(random_unit(rng, cfg.d_g_raw));
    }
  }
  return w;
}

ImageRecord make_image(const SynthConfig& cfg, const World& world, std::uint32_t instance, std::uint32_t id,
                       std::mt19937_64& rng, std::uint8_t n_scales) {
  ImageRecord rec;
  rec.id = id;
  rec.label = cfg.label_offset + instance;
  rec.global = perturb(rng, world.global_prototypes[instance], cfg.global_noise);

  // Similarity warp about the canvas center.
  double angle = 0.0, zoom = 1.0, tx = 0.0, ty = 0.0;
  if (cfg.warp) {
    angle = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    zoom = std::exp(std::uniform_real_distribution<double>(-0.2, 0.2)(rng));
    tx = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
    ty = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
  }
  const double c = std::cos(angle) * zoom, s = std::sin(angle) * zoom;
  std::normal_distribution<double> jitter(0.0, cfg.position_jitter_px);
  auto clamp_pos = [](double x) { return static_cast<float>(std::clamp(x, 0.0, std::nextafter(1024.0, 0.0))); };

  std::vector<std::uint32_t> order(cfg.parts_per_instance);
  std::iota(order.begin(), order.end(), 0u);
  std::shuffle(order.begin(), order.end(), rng);

  for (std::uint32_t k = 0; k < cfg.parts_per_image; ++k) {
    const std::size_t part = static_cast<std::size_t>(instance) * cfg.parts_per_instance + order[k];
    LocalDescriptor l;
    l.vec = perturb(rng, world.parts[part], cfg.local_noise);
    const auto [cu, cv] = world.part_positions[part];
    const double du = cu - 512.0, dv = cv - 512.0;
    l.u = clamp_pos(512.0 + c * du - s * dv + tx + (cfg.position_jitter_px > 0 ? jitter(rng) : 0.0));
    l.v = clamp_pos(512.0 + s * du + c * dv + ty + (cfg.position_jitter_px > 0 ? jitter(rng) : 0.0));
    l.scale_index = world.part_scales[part];
    rec.locals.push_back(std::move(l));
  }
  std::uniform_real_distribution<float> anywhere(0.0f, std::nextafter(kCanvas, 0.0f));
  std::uniform_int_distribution<int> scale(0, n_scales - 1);
  for (std::uint32_t k = cfg.parts_per_image; k < cfg.locals_per_image; ++k) {
    LocalDescriptor l;
    l.vec = random_unit(rng, cfg.d_l);
    l.u = anywhere(rng);
    l.v = anywhere(rng);
    l.scale_index = static_cast<std::uint8_t>(scale(rng));
    rec.locals.push_back(std::move(l));
  }
  std::shuffle(rec.locals.begin(), rec.locals.end(), rng);
  return rec;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_instances == 0) throw ConfigError("synth: n_instances must be positive");
  if (parts_per_image > parts_per_instance) {
    throw ConfigError("synth: parts_per_image (" + std::to_string(parts_per_image) + ") exceeds parts_per_instance (" +
                      std::to_string(parts_per_instance) + ")");
  }
  if (locals_per_image < parts_per_image) {
    throw ConfigError("synth: locals_per_image (" + std::to_string(locals_per_image) +
                      ") is smaller than parts_per_image (" + std::to_string(parts_per_image) + ")");
  }
  if (locals_per_image > 65535) throw ConfigError("synth: locals_per_image exceeds 65535");
  if (d_l == 0 || d_g_raw == 0) throw ConfigError("synth: descriptor dimensions must be positive");
  if (2ull * confusion_pairs > n_instances) throw ConfigError("synth: more confusion pairs than instance pairs");
  if (local_noise < 0 || global_noise < 0 || confusion_noise < 0 || position_jitter_px < 0) {
    throw ConfigError("synth: noise levels must be non-negative");
  }
}

SynthSplit synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthSplit out;
  auto& m = out.manifest;
  m.name = "synthetic";
  m.d_g_raw = cfg.d_g_raw;
  m.d_l = cfg.d_l;
  m.n_scales = 7;
  m.scale_values = default_scale_values();
  m.seed = cfg.seed;

  std::mt19937_64 rng(cfg.seed);
  const World world = build_world(cfg, rng, m.n_scales);

  std::uint32_t next_id = cfg.id_offset;
  for (std::uint32_t i = 0; i < cfg.n_instances; ++i) {
    for (std::uint32_t q = 0; q < cfg.queries_per_instance; ++q)
      out.queries.push_back(make_image(cfg, world, i, next_id++, rng, m.n_scales));
    for (std::uint32_t g = 0; g < cfg.gallery_per_instance; ++g)
      out.gallery.push_back(make_image(cfg, world, i, next_id++, rng, m.n_scales));
  }
  m.n_queries = static_cast<std::uint32_t>(out.queries.size());
  m.n_gallery = static_cast<std::uint32_t>(out.gallery.size());
  return out;
}

SynthPrototypes synth_prototypes(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  World world = build_world(cfg, rng, 7);
  return {cfg.d_l, std::move(world.parts)};
}

std::vector<std::uint32_t> part_ids(const ImageRecord& record, const SynthPrototypes& prototypes,
                                    double min_cosine) {
  std::vector<std::uint32_t> ids;
  for (const auto& l : record.locals) {
    if (l.vec.size() != prototypes.d_l) throw DimensionError("part_ids: descriptor dimension mismatch");
    double best = -2.0;
    std::uint32_t best_id = 0;
    for (std::size_t p = 0; p < prototypes.parts.size(); ++p) {
      double dot = 0.0;
      for (std::size_t k = 0; k < l.vec.size(); ++k) dot += static_cast<double>(l.vec[k]) * prototypes.parts[p][k];
      if (dot > best) {
        best = dot;
        best_id = static_cast<std::uint32_t>(p);
      }
    }
    if (best >= min_cosine) ids.push_back(best_id);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::size_t shared_part_count(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  std::size_t count = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j]) {
      ++i;
    } else if (b[j] < a[i]) {
      ++j;
    } else {
      ++count;
      ++i;
      ++j;
    }
  }
  return count;
}

}  // namespace rrt
