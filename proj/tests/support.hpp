#pragma once

// Independent reference implementations used by the unit and acceptance
// suites: plain-double oracles for losses, ranking metrics and the tiny
// forward chain, a central-difference gradient harness, and small statistics
// helpers. Nothing here touches the Tape machinery on the compute path it
// checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "ccl/augment.hpp"
#include "ccl/data.hpp"
#include "ccl/model.hpp"
#include "ccl/objectives.hpp"
#include "ccl/rng.hpp"
#include "ccl/train.hpp"

namespace oracle {

inline double rel_err(double a, double b, double floor = 1e-8) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

/// Relative error of an analytic gradient against a central-difference
/// estimate. Central differences carry roundoff of order eps*|f|/(2h); a
/// discrepancy at or below that scale is indistinguishable from oracle noise
/// and reports as zero rather than being amplified by the denominator floor.
inline double fd_rel_err(double analytic, double fd, double f_scale, double h,
                         double floor = 1e-8) {
  const double noise = 16.0 * 2.220446049250313e-16 * std::max(1.0, std::abs(f_scale)) / (2.0 * h);
  if (std::abs(analytic - fd) <= noise) return 0.0;
  return rel_err(analytic, fd, floor);
}

// ---- finite differences -------------------------------------------------------

/// Central-difference gradient of f at x, one coordinate at a time.
inline std::vector<double> finite_diff(const std::function<double(std::span<const double>)>& f,
                                       std::vector<double> x, double h = 1e-6) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double hi = f(x);
    x[i] = keep - h;
    const double lo = f(x);
    x[i] = keep;
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

/// Central differences over one tensor's entries inside a larger model,
/// mutating the tensor in place and restoring it.
inline std::vector<double> finite_diff_tensor(const std::function<double()>& f, ccl::Tensor t,
                                              double h = 1e-6) {
  auto values = t.values_mut();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double hi = f();
    values[i] = keep - h;
    const double lo = f();
    values[i] = keep;
    grad[i] = (hi - lo) / (2.0 * h);
  }
  return grad;
}

// ---- plain-double math ----------------------------------------------------------

inline std::vector<double> softmax(std::span<const double> x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  std::vector<double> y(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = std::exp(x[i] - m);
    total += y[i];
  }
  for (auto& v : y) v /= total;
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - dot(a, b) / (norm(a) * norm(b));
}

inline double clamp(double x, double lo, double hi) { return std::max(std::min(x, hi), lo); }

// ---- brute-force losses ---------------------------------------------------------

inline double margin_sum(double a_pos, double a_neg, const ccl::MarginConfig& cfg) {
  return clamp((a_pos + a_neg) * cfg.delta_s, cfg.delta_l, cfg.delta_u);
}

inline double margin_diff(double a_i, double a_k, const ccl::MarginConfig& cfg) {
  return clamp((a_i - a_k) * cfg.delta_s, cfg.delta_l, cfg.delta_u);
}

inline double ccl_brute(std::span<const double> d_pos, std::span<const double> a_pos,
                        std::span<const double> d_neg, std::span<const double> a_neg,
                        const ccl::MarginConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < d_pos.size(); ++i)
    for (std::size_t j = 0; j < d_neg.size(); ++j)
      total += std::max(d_pos[i] - d_neg[j] + margin_sum(a_pos[i], a_neg[j], cfg), 0.0);
  return total;
}

inline double ccl_pos_brute(std::span<const double> d, std::span<const double> a,
                            const ccl::MarginConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < d.size(); ++k)
      if (a[k] < a[i]) total += std::max(d[i] - d[k] + margin_diff(a[i], a[k], cfg), 0.0);
  return total;
}

inline double ccl_neg_brute(std::span<const double> d, std::span<const double> a,
                            const ccl::MarginConfig& cfg) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < d.size(); ++k)
      if (a[k] < a[i]) total += std::max(d[k] - d[i] + margin_diff(a[i], a[k], cfg), 0.0);
  return total;
}

inline double ce_brute(std::span<const std::pair<double, std::uint8_t>> preds, int variant) {
  // variant: 0 query, 1 positive, 2 negative (label-0 dropped, rest reverted)
  double total = 0.0;
  for (const auto& [y_hat, label] : preds) {
    const double c = clamp(y_hat, 1e-12, 1.0 - 1e-12);
    if (variant == 2) {
      if (label == 0) continue;
      total -= std::log(1.0 - c);
    } else {
      total -= label ? std::log(c) : std::log(1.0 - c);
    }
  }
  return total;
}

inline double cui_brute(
    std::span<const std::vector<std::pair<double, std::uint8_t>>> by_user) {
  double total = 0.0;
  for (const auto& preds : by_user) {
    double pos = 0.0, neg = 0.0;
    bool has_pos = false;
    for (const auto& [y_hat, label] : preds) {
      if (label) {
        pos += std::exp(y_hat);
        has_pos = true;
      } else {
        neg += std::exp(y_hat);
      }
    }
    if (!has_pos) continue;
    total -= std::log(pos / (pos + neg));
  }
  return total;
}

// ---- brute-force ranking metrics -------------------------------------------------

inline double auc_pairwise(std::span<const std::pair<double, std::uint8_t>> preds) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (const auto& [sp, lp] : preds) {
    if (!lp) continue;
    for (const auto& [sn, ln] : preds) {
      if (ln) continue;
      ++pairs;
      if (sp > sn)
        wins += 1.0;
      else if (sp == sn)
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// ---- scalar forward-chain replica -------------------------------------------------

/// Importance scores, encoder, and CTR head re-derived with flat loops over
/// std::vector<double>, for fixture comparison against the tape path.
struct ScalarModel {
  std::size_t dim;
  std::vector<double> w1, w2, w3, w4;  // dim x dim, row-major
  std::vector<double> mlp_w1, mlp_b1;  // 3d x d, d
  std::vector<double> mlp_w2, mlp_b2;  // d x d/2, d/2
  std::vector<double> mlp_w3, mlp_b3;  // d/2 x 1, 1

  static ScalarModel from(const ccl::ModelParams& p) {
    auto grab = [](const ccl::Tensor& t) {
      return std::vector<double>(t.values().begin(), t.values().end());
    };
    return {p.dim,           grab(p.w1),     grab(p.w2),     grab(p.w3),
            grab(p.w4),      grab(p.mlp_w1), grab(p.mlp_b1), grab(p.mlp_w2),
            grab(p.mlp_b2),  grab(p.mlp_w3), grab(p.mlp_b3)};
  }

  std::vector<double> project(std::span<const double> v, std::span<const double> w) const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) out[j] += v[i] * w[i * dim + j];
    return out;
  }

  /// alpha_pair[i][j] = (v_i W1) . (v_j W2)
  std::vector<double> alpha_pair(std::span<const std::vector<double>> rows) const {
    const std::size_t n = rows.size();
    std::vector<std::vector<double>> p1(n), p2(n);
    for (std::size_t i = 0; i < n; ++i) {
      p1[i] = project(rows[i], w1);
      p2[i] = project(rows[i], w2);
    }
    std::vector<double> pair(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) pair[i * n + j] = dot(p1[i], p2[j]);
    return pair;
  }

  std::vector<double> encode(std::span<const std::vector<double>> rows) const {
    const std::size_t n = rows.size();
    const auto pair = alpha_pair(rows);
    std::vector<double> alpha(n, 0.0);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t j = 0; j < n; ++j) alpha[t] += pair[t * n + j];
    std::vector<std::vector<double>> projected(n);
    for (std::size_t i = 0; i < n; ++i) projected[i] = project(rows[i], w3);
    std::vector<double> u(dim, 0.0);
    const auto outer = softmax(alpha);
    for (std::size_t t = 0; t < n; ++t) {
      const auto row_weights = softmax(std::span<const double>(pair).subspan(t * n, n));
      std::vector<double> v_hat(dim, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < dim; ++d) v_hat[d] += projected[i][d] * row_weights[i];
      for (std::size_t d = 0; d < dim; ++d) u[d] += v_hat[d] * outer[t];
    }
    return u;
  }

  double predict(std::span<const double> u, std::span<const double> item) const {
    const auto vw4 = project(item, w4);
    std::vector<double> h;
    h.insert(h.end(), u.begin(), u.end());
    h.insert(h.end(), vw4.begin(), vw4.end());
    for (std::size_t i = 0; i < dim; ++i) h.push_back(u[i] * vw4[i]);
    std::vector<double> h1(dim, 0.0);
    for (std::size_t i = 0; i < 3 * dim; ++i)
      for (std::size_t j = 0; j < dim; ++j) h1[j] += h[i] * mlp_w1[i * dim + j];
    for (std::size_t j = 0; j < dim; ++j) h1[j] = std::max(h1[j] + mlp_b1[j], 0.0);
    const std::size_t half = dim / 2;
    std::vector<double> h2(half, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < half; ++j) h2[j] += h1[i] * mlp_w2[i * half + j];
    for (std::size_t j = 0; j < half; ++j) h2[j] = std::max(h2[j] + mlp_b2[j], 0.0);
    double z = mlp_b3[0];
    for (std::size_t i = 0; i < half; ++i) z += h2[i] * mlp_w3[i];
    return 1.0 / (1.0 + std::exp(-z));
  }
};

// ---- instance fixtures and the frozen-structure loss probe ------------------------

struct ProbeFixture {
  ccl::FeatureTable features;
  ccl::TrainingInstance instance;
  std::vector<ccl::ItemId> pool;
  ccl::ModelParams params;
  ccl::MarginConfig margin;
  ccl::LossSet losses = ccl::LossSet::full;
  ccl::InstanceAugmentation aug;  // sampled once, then frozen
};

inline ProbeFixture make_probe(std::size_t dim, std::size_t n_u, std::size_t n_targets,
                               std::size_t n_z, std::size_t n_p, std::size_t n_n,
                               std::uint64_t seed) {
  ProbeFixture fx;
  ccl::Rng rng(seed);

  const std::size_t n_items = n_u + n_targets + n_z + 8;
  fx.features.n_items = n_items;
  fx.features.dim = dim;
  fx.features.values.resize(n_items * dim);
  {
    ccl::Rng r = rng.split("features");
    for (auto& v : fx.features.values) v = r.uniform(-1.0, 1.0);
  }

  ccl::Rng pick = rng.split("items");
  const auto ids = pick.sample_without_replacement(n_items, n_u + n_targets + n_z);
  fx.instance.user = 0;
  for (std::size_t i = 0; i < n_u; ++i) fx.instance.history.push_back(ids[i]);
  ccl::Rng labels = rng.split("labels");
  for (std::size_t i = 0; i < n_targets; ++i) {
    // always at least one clicked and one unclicked target
    const std::uint8_t label =
        i == 0 ? 1 : (i == 1 ? 0 : (labels.uniform() < 0.5 ? 1 : 0));
    fx.instance.targets.emplace_back(ids[n_u + i], label);
  }
  for (std::size_t i = 0; i < n_z; ++i) fx.pool.push_back(ids[n_u + n_targets + i]);

  fx.params = ccl::ModelParams::init(dim, rng.split("init"));
  {
    // evaluate the check at a generic parameter point: zero-initialized
    // biases would otherwise pin relu pre-activations exactly onto their kink
    ccl::Rng jitter = rng.split("jitter");
    for (auto t : fx.params.all()) {
      auto v = t.values_mut();
      for (auto& x : v) x += jitter.uniform(-0.05, 0.05);
    }
  }
  fx.margin = ccl::MarginConfig{1.0, 0.5, 1.5};

  const ccl::Tensor pool_projection = ccl::project_pool(fx.params, fx.features, fx.pool);
  ccl::StrategyState strategy{ccl::Strategy::easy2hard, 0.5, 0};
  ccl::Rng aug_rng = rng.split("augment");
  fx.aug = ccl::sample_augmentation(fx.params, fx.features, fx.instance, pool_projection,
                                    fx.pool, n_p, n_n, strategy, aug_rng);
  return fx;
}

/// Total loss at the current parameter values with the augmentation structure
/// and hardness scores held fixed. This is the function whose analytic
/// gradient `backward` produces: hardness and margins are constants on the
/// tape by construction.
inline double probe_loss(const ProbeFixture& fx) {
  ccl::Tape tape;
  ccl::BatchLossBuilder builder{tape, fx.params, fx.features, fx.margin, fx.losses};
  builder.add_instance(fx.instance, fx.aug);
  return builder.finish().total.item();
}

/// Analytic gradients of the probe loss for every parameter tensor.
inline std::vector<std::vector<double>> probe_gradients(ProbeFixture& fx) {
  ccl::Tape tape;
  ccl::BatchLossBuilder builder{tape, fx.params, fx.features, fx.margin, fx.losses};
  builder.add_instance(fx.instance, fx.aug);
  auto breakdown = builder.finish();
  fx.params.zero_grad();
  tape.backward(breakdown.total);
  std::vector<std::vector<double>> grads;
  for (auto t : fx.params.all()) grads.emplace_back(t.grad().begin(), t.grad().end());
  return grads;
}

// ---- statistics helpers ------------------------------------------------------------

inline std::vector<double> midranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < x.size()) {
    std::size_t j = i;
    while (j < x.size() && x[order[j]] == x[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = mid;
    i = j;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// One-sided p-value for mean(a) > mean(b), two-sample z-test.
inline double one_sided_p(std::span<const double> a, std::span<const double> b) {
  auto mean_var = [](std::span<const double> s) {
    double m = 0;
    for (double v : s) m += v;
    m /= static_cast<double>(s.size());
    double var = 0;
    for (double v : s) var += (v - m) * (v - m);
    var /= static_cast<double>(s.size() - 1);
    return std::pair<double, double>{m, var};
  };
  const auto [ma, va] = mean_var(a);
  const auto [mb, vb] = mean_var(b);
  const double se = std::sqrt(va / static_cast<double>(a.size()) +
                              vb / static_cast<double>(b.size()));
  const double z = (ma - mb) / se;
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

inline double pearson_corr(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace oracle
