#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

enum class Polarity { positive, negative };

enum class Strategy { random, harder, easier, easy2hard, hard2easy };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::harder: return "harder";
    case Strategy::easier: return "easier";
    case Strategy::easy2hard: return "easy2hard";
    case Strategy::hard2easy: return "hard2easy";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::random, Strategy::harder, Strategy::easier, Strategy::easy2hard,
                     Strategy::hard2easy})
    if (name == strategy_name(s)) return s;
  throw ConfigError("unknown strategy '" + name +
                    "' (valid: random, harder, easier, easy2hard, hard2easy)");
}

/// One replaced behavior: history position `position` swapped for pool entry
/// `substitute`.
struct Replacement {
  std::size_t position;
  std::size_t substitute;  // index into the substitute pool
};

struct AugmentedSequence {
  Polarity polarity = Polarity::positive;
  double hardness = 0.0;
  std::vector<Replacement> replacements;
  std::vector<ItemId> item_ids;  // post-replacement history
};

/// Where in training we are and how samples should be drawn. `n_r` overrides
/// the default replacement count (ceil of half the candidate set) when set.
struct StrategyState {
  Strategy strategy = Strategy::easy2hard;
  double progress = 0.0;  // fraction of training elapsed, in [0, 1]
  std::size_t n_r = 0;    // 0 = derive from the sequence length
};

namespace detail {

inline std::vector<double> stable_softmax(std::span<const double> scores, bool negate) {
  std::vector<double> out(scores.size());
  double max_x = negate ? -scores[0] : scores[0];
  for (std::size_t i = 0; i < scores.size(); ++i)
    max_x = std::max(max_x, negate ? -scores[i] : scores[i]);
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((negate ? -scores[i] : scores[i]) - max_x);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

inline std::span<const double> beta_row(const Tensor& beta, std::size_t row) {
  const std::size_t n_z = beta.shape()[1];
  return beta.values().subspan(row * n_z, n_z);
}

}  // namespace detail

/// Hardness of a corrupted sequence as a potential negative: the relative
/// importance mass of each replaced behavior times the relative relatedness of
/// its substitute, summed over replacements. Pure function of detached scores.
inline double hardness_negative(std::span<const double> detached_alpha, const Tensor& beta,
                                std::span<const Replacement> replacements) {
  if (replacements.empty()) throw ContractError("hardness: no replacements");
  const auto importance = detail::stable_softmax(detached_alpha, false);
  double hardness = 0.0;
  for (const auto& r : replacements) {
    const auto relatedness = detail::stable_softmax(detail::beta_row(beta, r.position), false);
    hardness += importance[r.position] * relatedness[r.substitute];
  }
  return hardness;
}

/// Same with negated scores inside both softmaxes: unimportance times
/// unrelatedness, the quality of a potential positive.
inline double hardness_positive(std::span<const double> detached_alpha, const Tensor& beta,
                                std::span<const Replacement> replacements) {
  if (replacements.empty()) throw ContractError("hardness: no replacements");
  const auto unimportance = detail::stable_softmax(detached_alpha, true);
  double hardness = 0.0;
  for (const auto& r : replacements) {
    const auto unrelatedness = detail::stable_softmax(detail::beta_row(beta, r.position), true);
    hardness += unimportance[r.position] * unrelatedness[r.substitute];
  }
  return hardness;
}

inline double hardness_of(Polarity polarity, std::span<const double> detached_alpha,
                          const Tensor& beta, std::span<const Replacement> replacements) {
  return polarity == Polarity::negative ? hardness_negative(detached_alpha, beta, replacements)
                                        : hardness_positive(detached_alpha, beta, replacements);
}

/// Sampling distribution over one score vector for the given polarity and
/// strategy. "Hard" samples use importance/relatedness weights for both
/// polarities (hard negatives are confusable corruptions, hard positives are
/// low-quality ones); "easy" uses the negated scores. easy2hard mixes linearly
/// from easy to hard with progress.
inline std::vector<double> sampling_weights(std::span<const double> scores, Polarity /*polarity*/,
                                            const StrategyState& state) {
  if (scores.empty()) throw ContractError("sampling_weights: empty scores");
  const std::size_t n = scores.size();
  if (state.strategy == Strategy::random)
    return std::vector<double>(n, 1.0 / static_cast<double>(n));

  auto hard = [&] { return detail::stable_softmax(scores, false); };
  auto easy = [&] { return detail::stable_softmax(scores, true); };

  switch (state.strategy) {
    case Strategy::harder: return hard();
    case Strategy::easier: return easy();
    case Strategy::easy2hard:
    case Strategy::hard2easy: {
      const double toward_hard =
          state.strategy == Strategy::easy2hard ? state.progress : 1.0 - state.progress;
      auto h = hard();
      auto e = easy();
      std::vector<double> mixed(n);
      for (std::size_t i = 0; i < n; ++i)
        mixed[i] = (1.0 - toward_hard) * e[i] + toward_hard * h[i];
      return mixed;
    }
    default: break;
  }
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

/// Replacement augmentation. Candidate positions are the ceil(N/2) most
/// important items for negatives (least important for positives, ties broken
/// by lower index); N_r = ceil(|candidates|/2) of them are drawn without
/// replacement using the strategy weights, and substitutes are drawn from each
/// position's relatedness row, restricted to items outside the history.
inline std::vector<AugmentedSequence> construct(std::span<const ItemId> history,
                                                std::span<const double> detached_alpha,
                                                const Tensor& beta,
                                                std::span<const ItemId> pool, Polarity polarity,
                                                std::size_t n, const StrategyState& state,
                                                Rng& rng) {
  const std::size_t n_u = history.size();
  if (n_u < 2) throw ContractError("construct: need at least two behaviors");
  if (detached_alpha.size() != n_u || beta.shape()[0] != n_u)
    throw ShapeError("construct: score shapes do not match the history");
  if (beta.shape()[1] != pool.size())
    throw ShapeError("construct: beta columns do not match the pool");
  if (pool.empty()) throw ContractError("construct: empty pool");

  // importance ranking, ties by lower index
  std::vector<std::size_t> order(n_u);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (polarity == Polarity::negative) return detached_alpha[a] > detached_alpha[b];
    return detached_alpha[a] < detached_alpha[b];
  });
  const std::size_t n_candidates = (n_u + 1) / 2;
  std::vector<std::size_t> candidates(order.begin(),
                                      order.begin() + static_cast<std::ptrdiff_t>(n_candidates));
  const std::size_t n_r =
      state.n_r > 0 ? std::min(state.n_r, n_candidates) : (n_candidates + 1) / 2;

  std::vector<double> candidate_scores(n_candidates);
  for (std::size_t i = 0; i < n_candidates; ++i) candidate_scores[i] = detached_alpha[candidates[i]];

  std::unordered_set<ItemId> history_items(history.begin(), history.end());

  std::vector<AugmentedSequence> out;
  out.reserve(n);
  for (std::size_t sample = 0; sample < n; ++sample) {
    AugmentedSequence aug;
    aug.polarity = polarity;
    aug.item_ids.assign(history.begin(), history.end());

    // positions: weighted draw without replacement over the candidate set
    auto weights = sampling_weights(candidate_scores, polarity, state);
    std::vector<std::size_t> chosen;
    for (std::size_t r = 0; r < n_r; ++r) {
      const std::size_t pick = rng.weighted_index(weights);
      chosen.push_back(candidates[pick]);
      weights[pick] = 0.0;
    }
    std::sort(chosen.begin(), chosen.end());

    for (std::size_t position : chosen) {
      const auto row = detail::beta_row(beta, position);
      auto sub_weights = sampling_weights(row, polarity, state);
      // substitutes must come from outside the behavior sequence: sample the
      // conditional distribution directly by masking colliding pool entries
      double eligible = 0.0;
      for (std::size_t k = 0; k < sub_weights.size(); ++k) {
        if (history_items.count(pool[k])) sub_weights[k] = 0.0;
        eligible += sub_weights[k];
      }
      if (eligible <= 0.0)
        throw AugmentationError(
            "construct: no substitute weight outside the history (pool too small)");
      const std::size_t k = rng.weighted_index(sub_weights);
      aug.replacements.push_back({position, k});
      aug.item_ids[position] = pool[k];
    }
    aug.hardness = hardness_of(polarity, detached_alpha, beta, aug.replacements);
    out.push_back(std::move(aug));
  }
  return out;
}

}  // namespace ccl
