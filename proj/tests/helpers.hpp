#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rrt/descriptors.hpp"
#include "rrt/model.hpp"
#include "rrt/tensor.hpp"

namespace testing {

inline rrt::ImageRecord random_record(std::mt19937_64& rng, std::uint32_t id, std::uint32_t label, std::size_t n_locals,
                                      std::size_t d_l, std::size_t d_g, std::size_t n_scales = 7) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> pos(0.0, 1024.0);
  std::uniform_int_distribution<int> scale(0, static_cast<int>(n_scales) - 1);
  auto unit = [&](std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(normal(rng));
    rrt::l2_normalize_inplace(v);
    return v;
  };
  rrt::ImageRecord r;
  r.id = id;
  r.label = label;
  r.global = unit(d_g);
  for (std::size_t i = 0; i < n_locals; ++i) {
    rrt::LocalDescriptor l;
    l.vec = unit(d_l);
    l.u = static_cast<float>(pos(rng));
    l.v = static_cast<float>(pos(rng));
    l.scale_index = static_cast<std::uint8_t>(scale(rng));
    r.locals.push_back(std::move(l));
  }
  return r;
}

inline rrt::ModelConfig tiny_config(std::uint32_t L = 4, std::uint8_t C = 2, std::uint16_t d = 8, std::uint8_t h = 2) {
  rrt::ModelConfig cfg;
  cfg.L = L;
  cfg.d = d;
  cfg.h = h;
  cfg.d_h = static_cast<std::uint8_t>(d / h);
  cfg.C = C;
  cfg.d_c = 16;
  cfg.d_g_raw = 6;
  return cfg;
}

// Relative error ||a - b|| / (||a|| + ||b||). Gradients that vanish
// analytically (e.g. key biases under softmax shift invariance) are compared
// in absolute terms.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom < 1e-8 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

// Central differences of a scalar function with respect to every entry of x.
inline std::vector<double> numeric_grad(rrt::ag::Tensor<double>& x, const std::function<double()>& f,
                                        double eps = 1e-6) {
  auto data = x.mutable_data();
  std::vector<double> g(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = f();
    data[i] = saved - eps;
    const double down = f();
    data[i] = saved;
    g[i] = (up - down) / (2 * eps);
  }
  return g;
}

}  // namespace testing
