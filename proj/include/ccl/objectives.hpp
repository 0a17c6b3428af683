#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

/// Adaptive-margin hyper-parameters: scale, lower and upper clamp.
struct MarginConfig {
  double delta_s = 1.0;
  double delta_l = 0.5;
  double delta_u = 1.5;

  void validate() const {
    if (!(delta_s > 0.0)) throw ConfigError("margin: delta_s must be positive");
    if (!(delta_l > 0.0 && delta_l <= delta_u))
      throw ConfigError("margin: need 0 < delta_l <= delta_u");
  }
};

enum class MarginMode { sum, diff };

/// clamp(combined * delta_s, delta_l, delta_u). Hardness scores are detached
/// by construction, so the result is a plain constant on any tape.
inline double adaptive_margin(double a_first, double a_second, MarginMode mode,
                              const MarginConfig& cfg) {
  const double combined = mode == MarginMode::sum ? a_first + a_second : a_first - a_second;
  return std::max(std::min(combined * cfg.delta_s, cfg.delta_u), cfg.delta_l);
}

/// Cosine distance 1 - <a,b>/(|a||b|), in [0, 2].
inline Tensor distance(Tape& tape, const Tensor& a, const Tensor& b) {
  Tensor na = tape.l2_norm(a);
  Tensor nb = tape.l2_norm(b);
  if (na.item() == 0.0 || nb.item() == 0.0)
    throw DomainError("distance: zero-norm representation");
  Tensor cosine = tape.div(tape.dot(a, b), tape.mul(na, nb));
  return tape.add_const(tape.scale(cosine, -1.0), 1.0);
}

/// A representation paired with its (detached) hardness score.
struct ScoredRep {
  Tensor rep;
  double hardness;
};

namespace detail {

inline Tensor accumulate(Tape& tape, Tensor total, const Tensor& term, bool& first) {
  if (first) {
    first = false;
    return term;
  }
  return tape.add(total, term);
}

inline std::vector<Tensor> distances_to(Tape& tape, const Tensor& query,
                                        std::span<const ScoredRep> reps) {
  std::vector<Tensor> d;
  d.reserve(reps.size());
  for (const auto& r : reps) d.push_back(distance(tape, query, r.rep));
  return d;
}

}  // namespace detail

/// Query-vs-augmented triplet loss over all positive x negative pairs, each
/// with its own margin from the summed hardness scores. Plain sum, no pair
/// normalization.
inline Tensor loss_ccl(Tape& tape, const Tensor& query, std::span<const ScoredRep> positives,
                       std::span<const ScoredRep> negatives, const MarginConfig& cfg) {
  if (positives.empty() || negatives.empty())
    throw ContractError("loss_ccl: need at least one positive and one negative");
  const auto d_pos = detail::distances_to(tape, query, positives);
  const auto d_neg = detail::distances_to(tape, query, negatives);
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (std::size_t i = 0; i < positives.size(); ++i)
    for (std::size_t j = 0; j < negatives.size(); ++j) {
      const double margin =
          adaptive_margin(positives[i].hardness, negatives[j].hardness, MarginMode::sum, cfg);
      Tensor term = tape.relu(tape.add_const(tape.sub(d_pos[i], d_neg[j]), margin));
      total = detail::accumulate(tape, total, term, first);
    }
  return total;
}

/// Contrast among positives: for every ordered pair with a+_k < a+_i the
/// higher-quality positive i must sit closer to the query than k by the
/// difference-scaled margin. Zero when all hardness scores tie.
inline Tensor loss_ccl_pos(Tape& tape, const Tensor& query, std::span<const ScoredRep> positives,
                           const MarginConfig& cfg) {
  if (positives.empty()) throw ContractError("loss_ccl_pos: no positives");
  const auto d = detail::distances_to(tape, query, positives);
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (std::size_t i = 0; i < positives.size(); ++i)
    for (std::size_t k = 0; k < positives.size(); ++k) {
      if (!(positives[k].hardness < positives[i].hardness)) continue;
      const double margin =
          adaptive_margin(positives[i].hardness, positives[k].hardness, MarginMode::diff, cfg);
      Tensor term = tape.relu(tape.add_const(tape.sub(d[i], d[k]), margin));
      total = detail::accumulate(tape, total, term, first);
    }
  return total;
}

/// Contrast among negatives, mirrored: the harder negative i must end up
/// farther from the query than k by the margin.
inline Tensor loss_ccl_neg(Tape& tape, const Tensor& query, std::span<const ScoredRep> negatives,
                           const MarginConfig& cfg) {
  if (negatives.empty()) throw ContractError("loss_ccl_neg: no negatives");
  const auto d = detail::distances_to(tape, query, negatives);
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (std::size_t i = 0; i < negatives.size(); ++i)
    for (std::size_t k = 0; k < negatives.size(); ++k) {
      if (!(negatives[k].hardness < negatives[i].hardness)) continue;
      const double margin =
          adaptive_margin(negatives[i].hardness, negatives[k].hardness, MarginMode::diff, cfg);
      Tensor term = tape.relu(tape.add_const(tape.sub(d[k], d[i]), margin));
      total = detail::accumulate(tape, total, term, first);
    }
  return total;
}

enum class CeVariant { query, positive, negative };

/// Binary cross-entropy over (prediction, label) pairs. The negative variant
/// drops label-0 targets and supervises the rest toward 0 (ground truth
/// reverted). Predictions are clamped to [1e-12, 1 - 1e-12] before the log.
inline Tensor loss_ce(Tape& tape, std::span<const std::pair<Tensor, std::uint8_t>> predictions,
                      CeVariant variant) {
  std::vector<Tensor> kept;
  std::vector<double> pos_mask;
  for (const auto& [y_hat, label] : predictions) {
    if (variant == CeVariant::negative && label == 0) continue;
    kept.push_back(y_hat);
    pos_mask.push_back(variant == CeVariant::negative ? 0.0 : static_cast<double>(label));
  }
  if (kept.empty()) return Tensor::scalar(0.0);

  Tensor y = tape.concat(std::span<const Tensor>(kept));
  Tensor c = tape.clamp(y, 1e-12, 1.0 - 1e-12);
  Tensor one_minus = tape.add_const(tape.scale(c, -1.0), 1.0);
  std::vector<double> neg_mask(pos_mask.size());
  for (std::size_t i = 0; i < pos_mask.size(); ++i) neg_mask[i] = 1.0 - pos_mask[i];
  Tensor ce = tape.add(tape.dot(tape.log(c), Tensor::row_vector(std::move(pos_mask))),
                       tape.dot(tape.log(one_minus), Tensor::row_vector(std::move(neg_mask))));
  return tape.scale(ce, -1.0);
}

/// User-item contrast: per user, -log of the exp-prediction mass on clicked
/// targets over the total. Users without a clicked target are skipped; a user
/// with no unclicked targets contributes exactly zero.
inline Tensor loss_cui(Tape& tape,
                       std::span<const std::vector<std::pair<Tensor, std::uint8_t>>> by_user) {
  Tensor total = Tensor::scalar(0.0);
  bool first = true;
  for (const auto& predictions : by_user) {
    if (predictions.empty()) continue;
    bool has_positive = false;
    for (const auto& [y_hat, label] : predictions) has_positive = has_positive || label == 1;
    if (!has_positive) continue;

    std::vector<Tensor> scalars;
    std::vector<double> pos_mask;
    scalars.reserve(predictions.size());
    for (const auto& [y_hat, label] : predictions) {
      scalars.push_back(y_hat);
      pos_mask.push_back(static_cast<double>(label));
    }
    Tensor e = tape.exp(tape.concat(std::span<const Tensor>(scalars)));
    Tensor pos_sum = tape.dot(e, Tensor::row_vector(std::move(pos_mask)));
    Tensor all_sum = tape.sum(e);
    Tensor term = tape.sub(tape.log(all_sum), tape.log(pos_sum));
    total = detail::accumulate(tape, total, term, first);
  }
  return total;
}

/// The seven loss terms of one training step and their unweighted sum.
struct LossBreakdown {
  Tensor l_ccl, l_ccl_pos, l_ccl_neg;
  Tensor l_ce, l_ce_pos, l_ce_neg;
  Tensor l_cui;
  Tensor total;
};

inline LossBreakdown total_loss(Tape& tape, Tensor l_ccl, Tensor l_ccl_pos, Tensor l_ccl_neg,
                                Tensor l_ce, Tensor l_ce_pos, Tensor l_ce_neg, Tensor l_cui) {
  LossBreakdown b;
  b.l_ccl = std::move(l_ccl);
  b.l_ccl_pos = std::move(l_ccl_pos);
  b.l_ccl_neg = std::move(l_ccl_neg);
  b.l_ce = std::move(l_ce);
  b.l_ce_pos = std::move(l_ce_pos);
  b.l_ce_neg = std::move(l_ce_neg);
  b.l_cui = std::move(l_cui);
  Tensor sum = b.l_ccl;
  for (const Tensor* term : {&b.l_ccl_pos, &b.l_ccl_neg, &b.l_ce, &b.l_ce_pos, &b.l_ce_neg,
                             &b.l_cui})
    sum = tape.add(sum, *term);
  b.total = sum;
  return b;
}

}  // namespace ccl
