#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "jointvit/error.hpp"
#include "jointvit/random.hpp"
#include "jointvit/tensor.hpp"

namespace jointvit {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// What a backward rule sees: the node's output, the upstream gradient, and
/// gradient slots for each input. A slot is empty when that input does not
/// need a gradient, so rules must test `!input_grads[i].empty()`.
struct BackwardContext {
  const Tensor& output;
  std::span<const double> output_grad;
  std::vector<const Tensor*> inputs;
  std::vector<std::span<double>> input_grads;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Gradients for every parameter registered on a tape, in registration order.
class GradientStore {
 public:
  void add(const Tensor* param, std::vector<double> grad) {
    index_[param] = entries_.size();
    entries_.emplace_back(param, std::move(grad));
  }

  bool contains(const Tensor& param) const { return index_.contains(&param); }

  std::span<const double> operator()(const Tensor& param) const {
    auto it = index_.find(&param);
    require(it != index_.end(), ErrorKind::Contract,
            "tensor was not registered as a parameter on this tape");
    return entries_[it->second].second;
  }

  double max_abs(const Tensor& param) const {
    double m = 0.0;
    for (double g : (*this)(param)) m = std::max(m, std::abs(g));
    return m;
  }

  double global_norm() const {
    double s = 0.0;
    for (const auto& [_, g] : entries_) {
      for (double v : g) s += v * v;
    }
    return std::sqrt(s);
  }

  const auto& entries() const { return entries_; }

 private:
  std::vector<std::pair<const Tensor*, std::vector<double>>> entries_;
  std::unordered_map<const Tensor*, std::size_t> index_;
};

/// Records operations in execution order; the tape is rebuilt for every
/// forward pass. Nodes are topologically ordered by construction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
    return Var{this, nodes_.size() - 1};
  }

  /// Registers `param` as a leaf whose gradient backward() reports. The value
  /// is copied; registering the same tensor twice returns the same node.
  Var parameter(const Tensor& param) {
    if (auto it = param_index_.find(&param); it != param_index_.end()) {
      return Var{this, it->second};
    }
    nodes_.push_back(Node{param, {}, {}, &param, true});
    param_index_[&param] = nodes_.size() - 1;
    return Var{this, nodes_.size() - 1};
  }

  /// Low-level hook used by every op: appends `value` computed from `inputs`
  /// with the given backward rule.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    Node node{std::move(value), {}, std::move(backward), nullptr, false};
    node.inputs.reserve(inputs.size());
    for (const Var& in : inputs) {
      require(in.tape == this, ErrorKind::Contract, "operands belong to different tapes");
      node.inputs.push_back(in.id);
      node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  GradientStore backward(Var loss) const {
    require(loss.tape == this, ErrorKind::Contract, "loss belongs to a different tape");
    const Tensor& out = value(loss);
    require(out.size() == 1 && out.rank() <= 1, ErrorKind::Contract,
            "backward requires a scalar loss, got shape " + shape_string(out.shape()));

    std::vector<std::vector<double>> adjoint(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].requires_grad) adjoint[i].assign(nodes_[i].value.size(), 0.0);
    }
    if (nodes_[loss.id].requires_grad) adjoint[loss.id][0] = 1.0;

    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (!node.requires_grad || !node.backward) continue;
      BackwardContext ctx{node.value, adjoint[i], {}, {}};
      ctx.inputs.reserve(node.inputs.size());
      ctx.input_grads.reserve(node.inputs.size());
      for (std::size_t in : node.inputs) {
        ctx.inputs.push_back(&nodes_[in].value);
        ctx.input_grads.emplace_back(adjoint[in]);
      }
      node.backward(ctx);
    }

    GradientStore store;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param) store.add(nodes_[i].param, std::move(adjoint[i]));
    }
    return store;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Tensor* param;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_index_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  require(t.rank() == rank, ErrorKind::Dimension,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
              shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::Dimension,
          std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

inline void require_finite(const Tensor& t, const char* op) {
  for (double v : t.data()) {
    require(std::isfinite(v), ErrorKind::Numeric, std::string(op) + ": non-finite input");
  }
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_rank(x, 2, "matmul");
  detail::require_rank(y, 2, "matmul");
  require(x.dim(1) == y.dim(0), ErrorKind::Dimension,
          "matmul: inner dimensions disagree for " + shape_string(x.shape()) + " x " +
              shape_string(y.shape()));
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor out({m, n});
  const double* xa = x.data().data();
  const double* yb = y.data().data();
  double* o = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double s = xa[i * k + p];
      const double* yrow = yb + p * n;
      double* orow = o + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += s * yrow[j];
    }
  }
  return a.tape->record(std::move(out), {a, b}, [m, k, n](BackwardContext& ctx) {
    const double* g = ctx.output_grad.data();
    const double* xa = ctx.inputs[0]->data().data();
    const double* yb = ctx.inputs[1]->data().data();
    // dA = dOut * B^T
    if (auto da = ctx.input_grads[0]; !da.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * yb[p * n + j];
          da[i * k + p] += s;
        }
      }
    }
    // dB = A^T * dOut
    if (auto db = ctx.input_grads[1]; !db.empty()) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double s = xa[i * k + p];
          for (std::size_t j = 0; j < n; ++j) db[p * n + j] += s * g[i * n + j];
        }
      }
    }
  });
}

inline Var transpose(Var a) {
  const Tensor& x = a.value();
  detail::require_rank(x, 2, "transpose");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x[i * n + j];
  return a.tape->record(std::move(out), {a}, [m, n](BackwardContext& ctx) {
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += ctx.output_grad[j * m + i];
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += y[i];
  return a.tape->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    for (auto slot : ctx.input_grads) {
      for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += ctx.output_grad[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= y[i];
  return a.tape->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.output_grad;
    if (auto da = ctx.input_grads[0]; !da.empty())
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    if (auto db = ctx.input_grads[1]; !db.empty())
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto y = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= y[i];
  return a.tape->record(std::move(out), {a, b}, [](BackwardContext& ctx) {
    auto g = ctx.output_grad;
    auto x = ctx.inputs[0]->data();
    auto y = ctx.inputs[1]->data();
    if (auto da = ctx.input_grads[0]; !da.empty())
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i];
    if (auto db = ctx.input_grads[1]; !db.empty())
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * x[i];
  });
}

inline Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= factor;
  return a.tape->record(std::move(out), {a}, [factor](BackwardContext& ctx) {
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += factor * ctx.output_grad[i];
  });
}

/// The only broadcast: x[m x n] + b[n], with b repeated over the leading axis.
inline Var add_bias(Var x, Var bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  detail::require_rank(xv, 2, "add_bias");
  detail::require_rank(bv, 1, "add_bias");
  require(xv.dim(1) == bv.dim(0), ErrorKind::Dimension,
          "add_bias: bias " + shape_string(bv.shape()) + " does not match " +
              shape_string(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  return x.tape->record(std::move(out), {x, bias}, [m, n](BackwardContext& ctx) {
    auto g = ctx.output_grad;
    if (auto dx = ctx.input_grads[0]; !dx.empty())
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    if (auto db = ctx.input_grads[1]; !db.empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->record(Tensor::scalar(s), {a}, [](BackwardContext& ctx) {
    for (double& d : ctx.input_grads[0]) d += ctx.output_grad[0];
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->record(Tensor::scalar(s / n), {a}, [n](BackwardContext& ctx) {
    for (double& d : ctx.input_grads[0]) d += ctx.output_grad[0] / n;
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a}, [](BackwardContext& ctx) {
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ctx.output_grad[i];
  });
}

inline Var log(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) {
    require(v > 0.0, ErrorKind::Numeric, "log: non-positive input");
    v = std::log(v);
  }
  return a.tape->record(std::move(out), {a}, [](BackwardContext& ctx) {
    auto x = ctx.inputs[0]->data();
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ctx.output_grad[i] / x[i];
  });
}

/// GELU, tanh approximation:
///   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline Var gelu(Var a) {
  static constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  static constexpr double kA = 0.044715;
  Tensor out = a.value();
  for (double& v : out.data()) {
    const double t = std::tanh(kC * (v + kA * v * v * v));
    v = 0.5 * v * (1.0 + t);
  }
  return a.tape->record(std::move(out), {a}, [](BackwardContext& ctx) {
    auto x = ctx.inputs[0]->data();
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < da.size(); ++i) {
      const double v = x[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      da[i] += ctx.output_grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

/// Numerically stable softmax along `axis` (max subtracted before exp).
inline Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  require(axis < std::max<std::size_t>(x.rank(), 1), ErrorKind::Dimension,
          "softmax: axis " + std::to_string(axis) + " out of range for " +
              shape_string(x.shape()));
  detail::require_finite(x, "softmax");
  std::size_t outer = 1, inner = 1;
  const std::size_t n = x.rank() == 0 ? 1 : x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Tensor out(x.shape(), x.values());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = out[base];
      for (std::size_t j = 1; j < n; ++j) m = std::max(m, out[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double& v = out[base + j * inner];
        v = std::exp(v - m);
        s += v;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  return a.tape->record(std::move(out), {a}, [outer, inner, n](BackwardContext& ctx) {
    auto y = ctx.output.data();
    auto g = ctx.output_grad;
    auto da = ctx.input_grads[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          da[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

/// Normalizes each vector along the last axis to zero mean and unit variance
/// (eps inside the square root), then applies gamma * xhat + beta.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, ErrorKind::Dimension, "layer_norm: input must have rank >= 1");
  const std::size_t d = xv.shape().back();
  require(gamma.value().shape() == Shape{d} && beta.value().shape() == Shape{d},
          ErrorKind::Dimension,
          "layer_norm: gamma/beta " + shape_string(gamma.value().shape()) + "/" +
              shape_string(beta.value().shape()) + " do not match last axis of " +
              shape_string(xv.shape()));
  const std::size_t rows = xv.size() / d;
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  std::vector<double> xhat(xv.size());
  std::vector<double> rstd(rows);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data().data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * rstd[r];
      out[r * d + j] = gv[j] * xhat[r * d + j] + bv[j];
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](BackwardContext& ctx) {
        auto g = ctx.output_grad;
        auto gam = ctx.inputs[1]->data();
        if (auto dg = ctx.input_grads[1]; !dg.empty())
          for (std::size_t i = 0; i < g.size(); ++i) dg[i % d] += g[i] * xhat[i];
        if (auto db = ctx.input_grads[2]; !db.empty())
          for (std::size_t i = 0; i < g.size(); ++i) db[i % d] += g[i];
        if (auto dx = ctx.input_grads[0]; !dx.empty()) {
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * gam[j];
              m1 += dxh;
              m2 += dxh * xhat[r * d + j];
            }
            m1 *= inv_d;
            m2 *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = g[r * d + j] * gam[j];
              dx[r * d + j] += rstd[r] * (dxh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

/// Rows [start, start + count) of a matrix.
inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Tensor& x = a.value();
  detail::require_rank(x, 2, "slice_rows");
  require(count > 0 && start + count <= x.dim(0), ErrorKind::Dimension,
          "slice_rows: range out of bounds for " + shape_string(x.shape()));
  const std::size_t n = x.dim(1);
  std::vector<double> data(x.data().begin() + start * n,
                           x.data().begin() + (start + count) * n);
  return a.tape->record(Tensor({count, n}, std::move(data)), {a},
                        [start, n](BackwardContext& ctx) {
                          auto da = ctx.input_grads[0];
                          for (std::size_t i = 0; i < ctx.output_grad.size(); ++i)
                            da[start * n + i] += ctx.output_grad[i];
                        });
}

/// Columns [start, start + count) of a matrix.
inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Tensor& x = a.value();
  detail::require_rank(x, 2, "slice_cols");
  require(count > 0 && start + count <= x.dim(1), ErrorKind::Dimension,
          "slice_cols: range out of bounds for " + shape_string(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor out({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * n + start + j];
  return a.tape->record(std::move(out), {a}, [m, n, start, count](BackwardContext& ctx) {
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j)
        da[i * n + start + j] += ctx.output_grad[i * count + j];
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_rows: no inputs");
  const std::size_t n = parts.front().value().shape().at(1);
  std::size_t rows = 0;
  for (const Var& p : parts) {
    detail::require_rank(p.value(), 2, "concat_rows");
    require(p.value().dim(1) == n, ErrorKind::Dimension,
            "concat_rows: column mismatch " + shape_string(p.value().shape()));
    rows += p.value().dim(0);
  }
  std::vector<double> data;
  data.reserve(rows * n);
  for (const Var& p : parts) {
    auto v = p.value().data();
    data.insert(data.end(), v.begin(), v.end());
  }
  return parts.front().tape->record(Tensor({rows, n}, std::move(data)), parts,
                                    [](BackwardContext& ctx) {
                                      std::size_t offset = 0;
                                      for (std::size_t p = 0; p < ctx.inputs.size(); ++p) {
                                        const std::size_t len = ctx.inputs[p]->size();
                                        auto slot = ctx.input_grads[p];
                                        for (std::size_t i = 0; i < slot.size(); ++i)
                                          slot[i] += ctx.output_grad[offset + i];
                                        offset += len;
                                      }
                                    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorKind::Contract, "concat_cols: no inputs");
  const std::size_t m = parts.front().value().shape().at(0);
  std::size_t cols = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    detail::require_rank(p.value(), 2, "concat_cols");
    require(p.value().dim(0) == m, ErrorKind::Dimension,
            "concat_cols: row mismatch " + shape_string(p.value().shape()));
    widths.push_back(p.value().dim(1));
    cols += p.value().dim(1);
  }
  Tensor out({m, cols});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[p]; ++j) out[i * cols + offset + j] = v[i * widths[p] + j];
    offset += widths[p];
  }
  return parts.front().tape->record(
      std::move(out), parts, [m, cols, widths = std::move(widths)](BackwardContext& ctx) {
        std::size_t offset = 0;
        for (std::size_t p = 0; p < widths.size(); ++p) {
          if (auto slot = ctx.input_grads[p]; !slot.empty()) {
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < widths[p]; ++j)
                slot[i * widths[p] + j] += ctx.output_grad[i * cols + offset + j];
          }
          offset += widths[p];
        }
      });
}

/// Stacks `times` copies of a matrix vertically.
inline Var repeat_rows(Var a, std::size_t times) {
  const Tensor& x = a.value();
  detail::require_rank(x, 2, "repeat_rows");
  require(times > 0, ErrorKind::Contract, "repeat_rows: times must be positive");
  const std::size_t len = x.size();
  std::vector<double> data;
  data.reserve(len * times);
  for (std::size_t t = 0; t < times; ++t) data.insert(data.end(), x.data().begin(), x.data().end());
  return a.tape->record(Tensor({x.dim(0) * times, x.dim(1)}, std::move(data)), {a},
                        [len, times](BackwardContext& ctx) {
                          auto da = ctx.input_grads[0];
                          for (std::size_t t = 0; t < times; ++t)
                            for (std::size_t i = 0; i < len; ++i)
                              da[i] += ctx.output_grad[t * len + i];
                        });
}

/// Inverted dropout; the identity when `p == 0`.
inline Var dropout(Var a, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, ErrorKind::Config, "dropout probability must be in [0, 1)");
  if (p == 0.0) return a;
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(a.value().size());
  for (double& m : mask) m = uniform01(rng) < p ? 0.0 : keep;
  Tensor out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] *= mask[i];
  return a.tape->record(std::move(out), {a}, [mask = std::move(mask)](BackwardContext& ctx) {
    auto da = ctx.input_grads[0];
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += ctx.output_grad[i] * mask[i];
  });
}

/// Mean over all entries of the per-logit binary cross-entropy, using
///   max(z, 0) - z y + log1p(exp(-|z|))
/// which stays finite for any finite z.
inline Var sigmoid_bce_mean(Var logits, const Tensor& targets) {
  const Tensor& z = logits.value();
  detail::require_same_shape(z, targets, "sigmoid_bce_mean");
  const double n = static_cast<double>(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    total += std::max(v, 0.0) - v * targets[i] + std::log1p(std::exp(-std::abs(v)));
  }
  return logits.tape->record(Tensor::scalar(total / n), {logits},
                             [targets, n](BackwardContext& ctx) {
                               auto z = ctx.inputs[0]->data();
                               auto dz = ctx.input_grads[0];
                               const double g = ctx.output_grad[0] / n;
                               for (std::size_t i = 0; i < dz.size(); ++i) {
                                 const double v = z[i];
                                 const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                                            : std::exp(v) / (1.0 + std::exp(v));
                                 dz[i] += g * (s - targets[i]);
                               }
                             });
}

/// Mean of squared differences against a constant target.
inline Var squared_error_mean(Var pred, const Tensor& target) {
  const Tensor& p = pred.value();
  detail::require_same_shape(p, target, "squared_error_mean");
  const double n = static_cast<double>(p.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    total += d * d;
  }
  return pred.tape->record(Tensor::scalar(total / n), {pred},
                           [target, n](BackwardContext& ctx) {
                             auto p = ctx.inputs[0]->data();
                             auto dp = ctx.input_grads[0];
                             const double g = ctx.output_grad[0] / n;
                             for (std::size_t i = 0; i < dp.size(); ++i)
                               dp[i] += g * 2.0 * (p[i] - target[i]);
                           });
}

}  // namespace jointvit
