#pragma once

#include <cstdint>
#include <vector>

#include "rrt/tensor.hpp"

namespace rrt::ag {

struct AdamWOptions {
  double lr = 1e-4;
  double weight_decay = 4e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam with bias correction. Moment buffers are
// zero-initialized at construction, one pair per parameter.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>> params, AdamWOptions options);

  // Updates every parameter in place from its accumulated gradient. Throws
  // GraphError if a parameter has no gradient.
  void step();
  void zero_grad();

  void set_lr(double lr) { options_.lr = lr; }
  const AdamWOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamWOptions options_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t step_ = 0;
};

// L2 norm over the concatenation of all gradients (missing grads count as 0).
template <typename T>
double global_grad_norm(const std::vector<Tensor<T>>& params);

// Rescales all gradients so that their global norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_global_grad_norm(std::vector<Tensor<T>>& params, double max_norm);

}  // namespace rrt::ag
