#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccl/errors.hpp"

namespace ccl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

class Tape;

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized to value.size()
  bool requires_grad = false;
  long node_id = -1;    // output id on the producing tape; -1 for leaves
  Tape* tape = nullptr;  // producing tape; nullptr for leaves and constants
};
}  // namespace detail

/// Dense 64-bit tensor. A cheap shared handle: copies alias the same storage.
/// Leaves are created through the factory functions; everything else comes out
/// of Tape operations.
class Tensor {
 public:
  Tensor() : d_(std::make_shared<detail::TensorData>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_->value.assign(numel(shape), 0.0);
    t.d_->shape = std::move(shape);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != numel(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape_string(shape));
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->value = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor row_vector(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return from({n}, std::move(v), requires_grad);
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->value.size(); }
  bool requires_grad() const { return d_->requires_grad; }
  long node_id() const { return d_->node_id; }
  const Tape* tape() const { return d_->tape; }

  std::span<const double> values() const { return d_->value; }
  std::span<double> values_mut() { return d_->value; }

  /// Gradient buffer; empty span until the tensor has participated in a
  /// recorded operation or `ensure_grad` ran.
  std::span<const double> grad() const { return d_->grad; }
  std::span<double> grad_mut() {
    ensure_grad();
    return d_->grad;
  }

  void ensure_grad() {
    if (d_->grad.size() != d_->value.size()) d_->grad.assign(d_->value.size(), 0.0);
  }

  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  double item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " entries");
    return d_->value[0];
  }

  double at(std::size_t i) const { return d_->value.at(i); }
  double at(std::size_t i, std::size_t j) const {
    if (rank() != 2) throw ShapeError("at(i,j) on rank-" + std::to_string(rank()) + " tensor");
    return d_->value.at(i * d_->shape[1] + j);
  }

  /// Value-identical tensor through which no gradient flows. The values are
  /// copied, so later in-place updates of the source do not leak through.
  Tensor detach() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->value = d_->value;
    return t;
  }

  bool all_finite() const {
    for (double v : d_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  friend class Tape;
  std::shared_ptr<detail::TensorData> d_;
};

/// Record of one forward pass. Operations append entries in execution order,
/// which is already topological; `backward` replays them once in reverse and
/// accumulates (never overwrites) gradients. A tape and its tensors form a
/// single-owner unit; distinct tapes are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  struct OpInfo {
    const char* kind;
    std::vector<long> inputs;  // node ids; -1 for leaves
    long output;
  };

  std::size_t num_ops() const { return entries_.size(); }
  const std::vector<OpInfo>& ops() const { return info_; }

  /// Reverse sweep from a scalar loss produced on this tape. Gradients of
  /// requires-grad leaves accumulate across calls; intermediate gradients are
  /// reset at the start of each sweep.
  void backward(const Tensor& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be a scalar");
    if (loss.tape() != this) throw ContractError("backward: loss was not produced on this tape");
    for (auto& e : entries_) std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
    loss.d_->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->pull();
  }

  // ---- matrix ops ---------------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
      throw ShapeError("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double ail = av[i * k + l];
        if (ail == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
      }
    return record("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Ctx c) {
      const auto g = c.out_grad();
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        const auto bv = c.in_val(1);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t l = 0; l < k; ++l) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[l * n + j];
            ga[i * k + l] += acc;
          }
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        const auto av = c.in_val(0);
        for (std::size_t l = 0; l < k; ++l)
          for (std::size_t i = 0; i < m; ++i) {
            const double a_il = av[i * k + l];
            if (a_il == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) gb[l * n + j] += a_il * g[i * n + j];
          }
      }
    });
  }

  /// y[j] = sum_i x[i] * w[i][j]  (vector through matrix, no bias)
  Tensor matvec(const Tensor& x, const Tensor& w) {
    require_rank("matvec", x, 1);
    require_rank("matvec", w, 2);
    const std::size_t m = x.size(), n = w.shape()[1];
    if (w.shape()[0] != m)
      throw ShapeError("matvec: " + shape_string(x.shape()) + " vs " + shape_string(w.shape()));
    std::vector<double> out(n, 0.0);
    const auto xv = x.values();
    const auto wv = w.values();
    for (std::size_t i = 0; i < m; ++i) {
      const double xi = xv[i];
      if (xi == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[j] += xi * wv[i * n + j];
    }
    return record("matvec", {n}, std::move(out), {x, w}, [m, n](Ctx c) {
      const auto g = c.out_grad();
      if (c.wants(0)) {
        auto gx = c.in_grad(0);
        const auto wv = c.in_val(1);
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += wv[i * n + j] * g[j];
          gx[i] += acc;
        }
      }
      if (c.wants(1)) {
        auto gw = c.in_grad(1);
        const auto xv = c.in_val(0);
        for (std::size_t i = 0; i < m; ++i) {
          const double xi = xv[i];
          if (xi == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += xi * g[j];
        }
      }
    });
  }

  Tensor transpose(const Tensor& a) {
    require_rank("transpose", a, 2);
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    const auto av = a.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    return record("transpose", {n, m}, std::move(out), {a}, [m, n](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    });
  }

  /// r[i] = sum_j a[i][j]
  Tensor row_sum(const Tensor& a) {
    require_rank("row_sum", a, 2);
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m, 0.0);
    const auto av = a.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
    return record("row_sum", {m}, std::move(out), {a}, [m, n](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
    });
  }

  // ---- elementwise suite --------------------------------------------------

  Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
    return record("add", a.shape(), std::move(out), {a, b}, [](Ctx c) {
      const auto g = c.out_grad();
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }

  Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
    return record("sub", a.shape(), std::move(out), {a, b}, [](Ctx c) {
      const auto g = c.out_grad();
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }

  /// Hadamard product.
  Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
    return record("mul", a.shape(), std::move(out), {a, b}, [](Ctx c) {
      const auto g = c.out_grad();
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        const auto bv = c.in_val(1);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        const auto av = c.in_val(0);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
      }
    });
  }

  Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (b.values()[i] == 0.0) throw DomainError("div: zero denominator");
      out[i] = a.values()[i] / b.values()[i];
    }
    return record("div", a.shape(), std::move(out), {a, b}, [](Ctx c) {
      const auto g = c.out_grad();
      const auto bv = c.in_val(1);
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        const auto yv = c.out_val();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
      }
    });
  }

  Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * a.values()[i];
    return record("scale", a.shape(), std::move(out), {a}, [factor](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
    });
  }

  Tensor add_const(const Tensor& a, double constant) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + constant;
    return record("add_const", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], 0.0);
    return record("relu", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      const auto xv = c.in_val(0);
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) ga[i] += g[i];
    });
  }

  Tensor sigmoid(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double x = a.values()[i];
      if (x >= 0.0) {
        out[i] = 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        out[i] = e / (1.0 + e);
      }
    }
    return record("sigmoid", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      const auto yv = c.out_val();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
    });
  }

  Tensor exp(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    return record("exp", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      const auto yv = c.out_val();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
    });
  }

  Tensor log(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(a.values()[i] > 0.0)) throw DomainError("log: input must be strictly positive");
      out[i] = std::log(a.values()[i]);
    }
    return record("log", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      const auto xv = c.in_val(0);
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / xv[i];
    });
  }

  /// min(max(x, lo), hi); the gradient passes through wherever x in [lo, hi].
  Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = std::min(std::max(a.values()[i], lo), hi);
    return record("clamp", a.shape(), std::move(out), {a}, [lo, hi](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      const auto xv = c.in_val(0);
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] >= lo && xv[i] <= hi) ga[i] += g[i];
    });
  }

  // ---- reductions and reshapes --------------------------------------------

  Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double v : a.values()) total += v;
    return record("sum", {1}, {total}, {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const double g = c.out_grad()[0];
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }

  Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw DomainError("mean: empty tensor");
    double total = 0.0;
    for (double v : a.values()) total += v;
    const double inv_n = 1.0 / static_cast<double>(a.size());
    return record("mean", {1}, {total * inv_n}, {a}, [inv_n](Ctx c) {
      if (!c.wants(0)) return;
      const double g = c.out_grad()[0] * inv_n;
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }

  Tensor dot(const Tensor& a, const Tensor& b) {
    require_rank("dot", a, 1);
    require_same_shape("dot", a, b);
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += a.values()[i] * b.values()[i];
    return record("dot", {1}, {total}, {a, b}, [](Ctx c) {
      const double g = c.out_grad()[0];
      if (c.wants(0)) {
        auto ga = c.in_grad(0);
        const auto bv = c.in_val(1);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv[i];
      }
      if (c.wants(1)) {
        auto gb = c.in_grad(1);
        const auto av = c.in_val(0);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * av[i];
      }
    });
  }

  Tensor l2_norm(const Tensor& a) {
    double sq = 0.0;
    for (double v : a.values()) sq += v * v;
    const double norm = std::sqrt(sq);
    return record("l2_norm", {1}, {norm}, {a}, [norm](Ctx c) {
      if (!c.wants(0) || norm == 0.0) return;
      const double g = c.out_grad()[0] / norm;
      const auto xv = c.in_val(0);
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * xv[i];
    });
  }

  Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw DomainError("concat: no inputs");
    std::size_t total = 0;
    for (const auto& p : parts) {
      require_rank("concat", p, 1);
      total += p.size();
    }
    std::vector<double> out;
    out.reserve(total);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    return record_n("concat", {total}, std::move(out), inputs, [](CtxN c) {
      const auto g = c.out_grad();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < c.num_inputs(); ++k) {
        const std::size_t n = c.in_val(k).size();
        if (c.wants(k)) {
          auto gk = c.in_grad(k);
          for (std::size_t i = 0; i < n; ++i) gk[i] += g[offset + i];
        }
        offset += n;
      }
    });
  }

  Tensor concat(std::initializer_list<Tensor> parts) {
    std::vector<Tensor> v(parts);
    return concat(std::span<const Tensor>(v));
  }

  Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size())
      throw ShapeError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
    std::vector<double> out(a.values().begin(), a.values().end());
    return record("reshape", std::move(shape), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      const auto g = c.out_grad();
      auto ga = c.in_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }

  // ---- softmax --------------------------------------------------------------

  /// Probability vector; computed with max-subtraction so large scores do not
  /// overflow.
  Tensor softmax(const Tensor& a) {
    require_rank("softmax", a, 1);
    if (a.size() == 0) throw DomainError("softmax: empty input");
    std::vector<double> out(a.size());
    softmax_fill(a.values(), out);
    return record("softmax", a.shape(), std::move(out), {a}, [](Ctx c) {
      if (!c.wants(0)) return;
      softmax_pull(c.out_val(), c.out_grad(), c.in_grad(0));
    });
  }

  /// Row-wise softmax of a matrix.
  Tensor softmax_rows(const Tensor& a) {
    require_rank("softmax_rows", a, 2);
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (n == 0) throw DomainError("softmax_rows: empty rows");
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
      softmax_fill(a.values().subspan(i * n, n), std::span<double>(out).subspan(i * n, n));
    return record("softmax_rows", a.shape(), std::move(out), {a}, [m, n](Ctx c) {
      if (!c.wants(0)) return;
      for (std::size_t i = 0; i < m; ++i)
        softmax_pull(c.out_val().subspan(i * n, n), c.out_grad().subspan(i * n, n),
                     c.in_grad(0).subspan(i * n, n));
    });
  }

 private:
  struct Entry {
    std::function<void()> pull;
    std::shared_ptr<detail::TensorData> out;
  };

  /// View handed to backward lambdas for 1- and 2-input ops.
  struct Ctx {
    detail::TensorData* out;
    detail::TensorData* in0;
    detail::TensorData* in1;
    std::span<const double> out_grad() const { return out->grad; }
    std::span<const double> out_val() const { return out->value; }
    bool wants(int k) const {
      const auto* d = k == 0 ? in0 : in1;
      return d != nullptr && d->requires_grad;
    }
    std::span<const double> in_val(int k) const { return (k == 0 ? in0 : in1)->value; }
    std::span<double> in_grad(int k) const { return (k == 0 ? in0 : in1)->grad; }
  };

  struct CtxN {
    detail::TensorData* out;
    std::vector<std::shared_ptr<detail::TensorData>>* ins;
    std::size_t num_inputs() const { return ins->size(); }
    std::span<const double> out_grad() const { return out->grad; }
    bool wants(std::size_t k) const { return (*ins)[k]->requires_grad; }
    std::span<const double> in_val(std::size_t k) const { return (*ins)[k]->value; }
    std::span<double> in_grad(std::size_t k) const { return (*ins)[k]->grad; }
  };

  static void softmax_fill(std::span<const double> x, std::span<double> y) {
    double max_x = x[0];
    for (double v : x) max_x = std::max(max_x, v);
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      y[i] = std::exp(x[i] - max_x);
      total += y[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] /= total;
  }

  static void softmax_pull(std::span<const double> y, std::span<const double> g,
                           std::span<double> gx) {
    double weighted = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) weighted += g[i] * y[i];
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += y[i] * (g[i] - weighted);
  }

  void check_tape(const Tensor& t, const char* kind) const {
    if (t.d_->tape != nullptr && t.d_->tape != this)
      throw ContractError(std::string(kind) + ": operand belongs to a different tape");
  }

  static void require_rank(const char* kind, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank)
      throw ShapeError(std::string(kind) + ": expected rank-" + std::to_string(rank) +
                       " operand, got " + shape_string(t.shape()));
  }

  static void require_same_shape(const char* kind, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
      throw ShapeError(std::string(kind) + ": shape mismatch " + shape_string(a.shape()) +
                       " vs " + shape_string(b.shape()));
  }

  template <class Pull>
  Tensor record(const char* kind, Shape out_shape, std::vector<double> out_value,
                std::initializer_list<Tensor> inputs, Pull&& pull) {
    bool needs_grad = false;
    for (const auto& in : inputs) {
      check_tape(in, kind);
      needs_grad = needs_grad || in.requires_grad();
    }
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_value), needs_grad);
    if (!needs_grad) return out;

    out.d_->tape = this;
    out.d_->node_id = next_id_++;
    out.ensure_grad();

    auto ins = std::vector<Tensor>(inputs);
    OpInfo info{kind, {}, out.d_->node_id};
    for (auto& in : ins) {
      info.inputs.push_back(in.node_id());
      if (in.requires_grad()) in.ensure_grad();
    }
    info_.push_back(std::move(info));

    Ctx ctx{out.d_.get(), ins.empty() ? nullptr : ins[0].d_.get(),
            ins.size() > 1 ? ins[1].d_.get() : nullptr};
    // keep the operand storage alive for the lifetime of the tape
    entries_.push_back(
        {[ctx, p = std::forward<Pull>(pull), hold = std::move(ins)]() { p(ctx); }, out.d_});
    return out;
  }

  template <class Pull>
  Tensor record_n(const char* kind, Shape out_shape, std::vector<double> out_value,
                  const std::vector<Tensor>& inputs, Pull&& pull) {
    bool needs_grad = false;
    for (const auto& in : inputs) {
      check_tape(in, kind);
      needs_grad = needs_grad || in.requires_grad();
    }
    Tensor out = Tensor::from(std::move(out_shape), std::move(out_value), needs_grad);
    if (!needs_grad) return out;

    out.d_->tape = this;
    out.d_->node_id = next_id_++;
    out.ensure_grad();

    auto ins = std::make_shared<std::vector<std::shared_ptr<detail::TensorData>>>();
    OpInfo info{kind, {}, out.d_->node_id};
    for (auto in : inputs) {
      info.inputs.push_back(in.node_id());
      if (in.requires_grad()) in.ensure_grad();
      ins->push_back(in.d_);
    }
    info_.push_back(std::move(info));

    auto* od = out.d_.get();
    entries_.push_back({[od, ins, p = std::forward<Pull>(pull)]() {
                          CtxN ctx{od, ins.get()};
                          p(ctx);
                        },
                        out.d_});
    return out;
  }

  std::vector<Entry> entries_;
  std::vector<OpInfo> info_;
  long next_id_ = 0;
};

}  // namespace ccl
