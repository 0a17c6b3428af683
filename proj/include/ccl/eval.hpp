#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccl/augment.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/model.hpp"
#include "ccl/objectives.hpp"

namespace ccl {

struct ScoredTarget {
  ItemId item = 0;
  double score = 0.0;
  std::uint8_t label = 0;
};

/// Probability that a clicked item outranks an unclicked one, ties counted
/// half. Rank-sum formulation, O(n log n).
inline double auc(std::span<const std::pair<double, std::uint8_t>> predictions) {
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& [score, label] : predictions) (label ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auc: need at least one positive and one negative label");

  std::vector<std::size_t> order(predictions.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].first < predictions[b].first;
  });

  double positive_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && predictions[order[j]].first == predictions[order[i]].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based midrank
    for (std::size_t k = i; k < j; ++k)
      if (predictions[order[k]].second) positive_rank_sum += mid_rank;
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

struct TopKMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Macro-averaged P@k / R@k / F1@k. Per user the cutoff is min(k, #targets);
/// score ties break by ascending item id. Users without a clicked target are
/// excluded from recall; F1 is the harmonic mean of the averaged P and R.
inline TopKMetrics precision_recall_f1_at_k(std::span<const std::vector<ScoredTarget>> per_user,
                                            std::size_t k) {
  if (k == 0) throw ContractError("precision_recall_f1_at_k: k must be positive");
  double precision_sum = 0.0, recall_sum = 0.0;
  std::size_t precision_users = 0, recall_users = 0;
  std::vector<ScoredTarget> ranked;
  for (const auto& targets : per_user) {
    if (targets.empty()) continue;
    ranked.assign(targets.begin(), targets.end());
    std::sort(ranked.begin(), ranked.end(), [](const ScoredTarget& a, const ScoredTarget& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.item < b.item;
    });
    const std::size_t cutoff = std::min(k, ranked.size());
    std::size_t hits = 0, clicked = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      if (ranked[i].label) {
        ++clicked;
        if (i < cutoff) ++hits;
      }
    }
    precision_sum += static_cast<double>(hits) / static_cast<double>(cutoff);
    ++precision_users;
    if (clicked > 0) {
      recall_sum += static_cast<double>(hits) / static_cast<double>(clicked);
      ++recall_users;
    }
  }
  if (precision_users == 0)
    throw MetricError("precision_recall_f1_at_k: no user with evaluation targets");
  if (recall_users == 0)
    throw MetricError("precision_recall_f1_at_k: no user with clicked targets");
  TopKMetrics m;
  m.precision = precision_sum / static_cast<double>(precision_users);
  m.recall = recall_sum / static_cast<double>(recall_users);
  m.f1 = (m.precision + m.recall) > 0.0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

struct EvalSummary {
  double auc = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Scores every target of every instance with the model and reports AUC over
/// the pooled predictions plus macro P/R/F1 at k.
inline EvalSummary evaluate_model(const ModelParams& params, const FeatureTable& features,
                                  std::span<const TrainingInstance> instances, std::size_t k) {
  std::vector<std::pair<double, std::uint8_t>> flat;
  std::vector<std::vector<ScoredTarget>> per_user;
  for (const auto& instance : instances) {
    Tape tape;
    const auto scored = score_sequence(tape, params, features, instance.history);
    const Tensor rep = encode(tape, params, scored);
    std::vector<ScoredTarget> targets;
    targets.reserve(instance.targets.size());
    for (const auto& [item, label] : instance.targets) {
      const double y_hat = predict_ctr(tape, params, rep, item, features).item();
      targets.push_back({item, y_hat, label});
      flat.emplace_back(y_hat, label);
    }
    per_user.push_back(std::move(targets));
  }
  EvalSummary summary;
  summary.auc = auc(flat);
  const auto topk = precision_recall_f1_at_k(per_user, k);
  summary.precision = topk.precision;
  summary.recall = topk.recall;
  summary.f1 = topk.f1;
  return summary;
}

/// Inputs for the offline case-study plot: per sampled user, the query
/// representation plus augmented positives/negatives with hardness scores.
/// CSV columns: user_id, role, hardness (empty for the query), dim_0..dim_{d-1}.
inline void export_case_study(const ModelParams& params, const FeatureTable& features,
                              std::span<const TrainingInstance> instances, std::size_t n_users,
                              std::size_t n_p, std::size_t n_n, std::size_t n_z,
                              const StrategyState& strategy, Rng rng, const std::string& path) {
  // latest instance per user with enough history to augment
  std::vector<std::size_t> latest;
  {
    std::vector<std::pair<UserId, std::size_t>> seen;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].history.size() < 2) continue;
      bool found = false;
      for (auto& [user, idx] : seen)
        if (user == instances[i].user) {
          idx = i;
          found = true;
          break;
        }
      if (!found) seen.emplace_back(instances[i].user, i);
    }
    for (const auto& [user, idx] : seen) latest.push_back(idx);
  }
  if (latest.empty()) throw ContractError("export_case_study: no augmentable user");
  Rng pick = rng.split("pick-users");
  pick.shuffle(latest);
  if (latest.size() > n_users) latest.resize(n_users);

  std::ofstream out(path);
  if (!out) throw IoError("cannot write case study: " + path);
  out << "user_id,role,hardness";
  for (std::size_t j = 0; j < params.dim; ++j) out << ",dim_" << j;
  out << '\n';

  char buffer[64];
  auto write_rep = [&](UserId user, const char* role, const double* hardness,
                       std::span<const double> rep) {
    out << user << ',' << role << ',';
    if (hardness) {
      std::snprintf(buffer, sizeof(buffer), "%.10g", *hardness);
      out << buffer;
    }
    for (double v : rep) {
      std::snprintf(buffer, sizeof(buffer), "%.10g", v);
      out << ',' << buffer;
    }
    out << '\n';
  };

  for (std::size_t idx : latest) {
    const auto& instance = instances[idx];
    Tape tape;
    const auto scored = score_sequence(tape, params, features, instance.history);
    const Tensor query = encode(tape, params, scored);

    Rng pool_rng = rng.split("pool", instance.user);
    const auto pool = sample_substitute_pool(features.n_items, std::min(n_z, features.n_items),
                                             {}, pool_rng);
    const Tensor beta = score_substitutes(params, scored, features, pool);
    const auto alpha = scored.detached_alpha.values();

    Rng aug_rng = rng.split("augment", instance.user);
    const auto positives = construct(instance.history, alpha, beta, pool, Polarity::positive,
                                     n_p, strategy, aug_rng);
    const auto negatives = construct(instance.history, alpha, beta, pool, Polarity::negative,
                                     n_n, strategy, aug_rng);

    write_rep(instance.user, "query", nullptr, query.values());
    for (const auto& aug : positives) {
      const auto s = score_sequence(tape, params, features, aug.item_ids);
      write_rep(instance.user, "pos", &aug.hardness, encode(tape, params, s).values());
    }
    for (const auto& aug : negatives) {
      const auto s = score_sequence(tape, params, features, aug.item_ids);
      write_rep(instance.user, "neg", &aug.hardness, encode(tape, params, s).values());
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace ccl
