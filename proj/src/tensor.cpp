#include "rrt/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "rrt/errors.hpp"

namespace rrt::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
NodePtr<T> make_leaf(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data of length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::make_shared<std::vector<T>>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

// Builds an op result. The backward closure and parent links are only kept
// when recording is enabled and some input needs a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values, std::vector<NodePtr<T>> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = make_leaf<T>(std::move(shape), std::move(values), false);
  if (g_grad_enabled) {
    const bool needs = std::any_of(parents.begin(), parents.end(),
                                   [](const NodePtr<T>& p) { return p->requires_grad; });
    if (needs) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_2d(const Tensor<T>& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
std::size_t last_dim(const Tensor<T>& t) {
  return t.ndim() == 0 ? 1 : t.shape().back();
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// -- Tensor ------------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf<T>(std::move(shape), std::vector<T>(n, value), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return Tensor(make_leaf<T>(std::move(shape), std::move(values), requires_grad));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(make_leaf<T>({}, {value}, requires_grad));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return (*node_->data)[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool value) {
  if (!node_->parents.empty()) throw GraphError("requires_grad can only be set on leaf tensors");
  node_->requires_grad = value;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<Node<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(make_leaf<T>(node_->shape, *node_->data, node_->requires_grad));
}

// -- ops ---------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() =
      ConstMapMat<T>(a.data().data(), m, k) * ConstMapMat<T>(b.data().data(), k, n);
  return make_result<T>({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    ConstMapMat<T> dc(self.grad.data(), m, n);
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      MapMat<T>(pa.ensure_grad().data(), m, k).noalias() += dc * ConstMapMat<T>(pb.data->data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MapMat<T>(pb.ensure_grad().data(), k, n).noalias() += ConstMapMat<T>(pa.data->data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_2d(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), n, m) = ConstMapMat<T>(a.data().data(), m, n).transpose();
  return make_result<T>({n, m}, std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    MapMat<T>(p.ensure_grad().data(), m, n) += ConstMapMat<T>(self.grad.data(), n, m).transpose();
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*pb.data)[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*pa.data)[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& b) {
  require_2d(x, "add_row");
  const auto m = x.dim(0), n = x.dim(1);
  if (b.numel() != n) {
    throw DimensionError("add_row: bias " + shape_str(b.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = x.at(r * n + c) + b.at(c);
  return make_result<T>({m, n}, std::move(out), {x.node(), b.node()}, [m, n](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * factor;
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) > T(0) ? a.at(i) : T(0);
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*p.data)[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T z = a.at(i);
    if (z >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(a.shape(), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = *self.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const auto nd = parts.front().ndim();
  if (nd == 1) {
    if (axis != 0) throw DimensionError("concat: axis out of range for 1-D inputs");
    std::vector<T> out;
    std::vector<NodePtr<T>> parents;
    for (const auto& p : parts) {
      if (p.ndim() != 1) throw DimensionError("concat: mixed ranks");
      out.insert(out.end(), p.data().begin(), p.data().end());
      parents.push_back(p.node());
    }
    const auto total = out.size();
    return make_result<T>({total}, std::move(out), std::move(parents), [](Node<T>& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const auto n = p->numel();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
        }
        offset += n;
      }
    });
  }
  if (nd != 2 || axis > 1) throw DimensionError("concat: only 1-D and 2-D inputs are supported");

  std::vector<NodePtr<T>> parents;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat");
    if (axis == 0) {
      if (rows == 0 && cols == 0) cols = p.dim(1);
      if (p.dim(1) != cols) {
        throw DimensionError("concat: column count " + std::to_string(p.dim(1)) + " differs from " +
                             std::to_string(cols));
      }
      rows += p.dim(0);
    } else {
      if (rows == 0 && cols == 0) rows = p.dim(0);
      if (p.dim(0) != rows) {
        throw DimensionError("concat: row count " + std::to_string(p.dim(0)) + " differs from " +
                             std::to_string(rows));
      }
      cols += p.dim(1);
    }
    parents.push_back(p.node());
  }
  std::vector<T> out(rows * cols);
  if (axis == 0) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy(p.data().begin(), p.data().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += p.numel();
    }
    return make_result<T>({rows, cols}, std::move(out), std::move(parents), [](Node<T>& self) {
      std::size_t offset = 0;
      for (auto& p : self.parents) {
        const auto n = p->numel();
        if (p->requires_grad) {
          auto& g = p->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
        }
        offset += n;
      }
    });
  }
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const auto pc = p.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pc; ++c) out[r * cols + col0 + c] = p.at(r * pc + c);
    col0 += pc;
  }
  return make_result<T>({rows, cols}, std::move(out), std::move(parents), [rows, cols](Node<T>& self) {
    std::size_t col0 = 0;
    for (auto& p : self.parents) {
      const auto pc = p->shape[1];
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) g[r * pc + c] += self.grad[r * cols + col0 + c];
      }
      col0 += pc;
    }
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_cols");
  const auto m = x.dim(0), n = x.dim(1);
  if (start + count > n) throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(m * count);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < count; ++c) out[r * count + c] = x.at(r * n + start + c);
  return make_result<T>({m, count}, std::move(out), {x.node()}, [m, n, start, count](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < count; ++c) g[r * n + start + c] += self.grad[r * count + c];
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_2d(x, "slice_rows");
  const auto n = x.dim(1);
  if (start + count > x.dim(0)) throw DimensionError("slice_rows: range exceeds " + shape_str(x.shape()));
  std::vector<T> out(x.data().begin() + static_cast<std::ptrdiff_t>(start * n),
                     x.data().begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  return make_result<T>({count, n}, std::move(out), {x.node()}, [start, n](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[start * n + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::size_t> indices) {
  require_2d(table, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<T> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= vocab) {
      throw DimensionError("embedding: index " + std::to_string(idx[r]) + " out of range for table of " +
                           std::to_string(vocab) + " rows");
    }
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  const auto n = idx.size();
  return make_result<T>({n, d}, std::move(out), {table.node()}, [idx = std::move(idx), d](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) g[idx[r] * d + c] += self.grad[r * d + c];
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_row(matmul(x, w), b);
}

template <typename T>
Tensor<T> masked_softmax_lastdim(const Tensor<T>& x, Mask mask) {
  const auto n = last_dim(x);
  const auto rows = x.numel() / n;
  const bool broadcast = mask.size() == n;
  if (mask.size() != n && mask.size() != x.numel()) {
    throw DimensionError("masked_softmax: mask of length " + std::to_string(mask.size()) +
                         " does not fit shape " + shape_str(x.shape()));
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  std::vector<T> out(x.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* mr = broadcast ? m.data() : m.data() + r * n;
    const T* xr = x.data().data() + r * n;
    T* yr = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < n; ++c)
      if (mr[c]) mx = std::max(mx, xr[c]);
    if (mx == -std::numeric_limits<T>::infinity()) continue;  // fully masked row stays zero
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) {
      if (mr[c]) {
        yr[c] = std::exp(xr[c] - mx);
        total += yr[c];
      }
    }
    for (std::size_t c = 0; c < n; ++c) yr[c] /= total;
  }
  return make_result<T>(x.shape(), std::move(out), {x.node()}, [n, rows](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const auto& y = *self.data;
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[r * n + c] * (self.grad[r * n + c] - dot);
    }
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  const auto d = last_dim(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias of size " + std::to_string(gain.numel()) + "/" +
                         std::to_string(bias.numel()) + " for last dimension " + std::to_string(d));
  }
  const auto rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat[r * d + c] = (xr[c] - mu) * inv_std[r];
      out[r * d + c] = xhat[r * d + c] * gain.at(c) + bias.at(c);
    }
  }
  return make_result<T>(
      x.shape(), std::move(out), {x.node(), gain.node(), bias.node()},
      [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const auto& dy = self.grad;
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c] * xhat[r * d + c];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) g[c] += dy[r * d + c];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const auto& gain = *pg.data;
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dxh = 0, mean_dxh_xh = 0;
            for (std::size_t c = 0; c < d; ++c) {
              const T dxh = dy[r * d + c] * gain[c];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat[r * d + c];
            }
            mean_dxh /= static_cast<T>(d);
            mean_dxh_xh /= static_cast<T>(d);
            for (std::size_t c = 0; c < d; ++c) {
              const T dxh = dy[r * d + c] * gain[c];
              g[r * d + c] += inv_std[r] * (dxh - mean_dxh - xhat[r * d + c] * mean_dxh_xh);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logit, int target) {
  if (target != 0 && target != 1) throw ConfigError("bce_with_logits: target must be 0 or 1");
  if (logit.numel() != 1) throw DimensionError("bce_with_logits: expected a scalar logit, got " + shape_str(logit.shape()));
  const T z = logit.at(0);
  const T t = static_cast<T>(target);
  // max(z,0) - z t + log(1 + exp(-|z|))
  const T loss = std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  return make_result<T>({}, {loss}, {logit.node()}, [z, t](Node<T>& self) {
    const T s = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    self.parents[0]->ensure_grad()[0] += self.grad[0] * (s - t);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (auto v : a.data()) total += v;
  return make_result<T>({}, {total}, {a.node()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) throw GraphError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  auto root = loss.node();
  if (root->consumed) throw GraphError("graph already consumed by a previous backward(); run the forward pass again");
  if (!root->requires_grad || !root->backward) throw GraphError("loss was not produced by a recorded graph");

  // Iterative post-order DFS over interior nodes.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->backward && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->grad.empty()) node->backward(*node);
  }
  for (Node<T>* node : order) {
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
}

// -- explicit instantiations ----------------------------------------------------

#define RRT_INSTANTIATE(T)                                                                        \
  template class Tensor<T>;                                                                       \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                          \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                      \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::size_t>);                   \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                \
  template Tensor<T> masked_softmax_lastdim(const Tensor<T>&, Mask);                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);         \
  template Tensor<T> bce_with_logits(const Tensor<T>&, int);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> mean(const Tensor<T>&);                                                      \
  template void backward(const Tensor<T>&);

RRT_INSTANTIATE(float)
RRT_INSTANTIATE(double)

#undef RRT_INSTANTIATE

}  // namespace rrt::ag
