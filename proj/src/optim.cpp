#include "rrt/optim.hpp"

#include <cmath>

#include "rrt/errors.hpp"

namespace rrt::ag {

template <typename T>
AdamW<T>::AdamW(std::vector<Tensor<T>> params, AdamWOptions options)
    : params_(std::move(params)), options_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), T(0));
    v_.emplace_back(p.numel(), T(0));
  }
}

template <typename T>
void AdamW<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw GraphError("adamw: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++step_;
  const auto t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  const T lr = static_cast<T>(options_.lr);
  const T decay = static_cast<T>(options_.lr * options_.weight_decay);
  const T b1 = static_cast<T>(options_.beta1), b2 = static_cast<T>(options_.beta2);
  const T eps = static_cast<T>(options_.eps);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_data();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] -= decay * w[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const T m_hat = m[j] / static_cast<T>(bc1);
      const T v_hat = v[j] / static_cast<T>(bc2);
      w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
void AdamW<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    for (auto g : p.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename T>
double clip_global_grad_norm(std::vector<Tensor<T>>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_global_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const auto factor = static_cast<T>(max_norm / (norm + 1e-6));
    for (auto& p : params) {
      for (auto& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double global_grad_norm(const std::vector<Tensor<float>>&);
template double global_grad_norm(const std::vector<Tensor<double>>&);
template double clip_global_grad_norm(std::vector<Tensor<float>>&, double);
template double clip_global_grad_norm(std::vector<Tensor<double>>&, double);

}  // namespace rrt::ag
