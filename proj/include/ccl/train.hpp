#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ccl/augment.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/eval.hpp"
#include "ccl/model.hpp"
#include "ccl/objectives.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

/// Bias-corrected Adam with decoupled weight decay.
struct AdamState {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-7;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  static AdamState init(std::span<const Tensor> params, double lr = 0.003,
                        double weight_decay = 1e-7) {
    AdamState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    for (const auto& p : params) {
      s.m.emplace_back(p.size(), 0.0);
      s.v.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

/// One optimizer step from the gradients currently held by the parameters.
/// Aborts without touching anything if any gradient is non-finite.
inline void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.m.size())
    throw ContractError("adam_step: state does not match the parameter list");
  const auto& names = ModelParams::names();
  for (std::size_t p = 0; p < params.size(); ++p) {
    params[p].ensure_grad();  // a parameter untouched by the tape has zero gradient
    const auto g = params[p].grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!std::isfinite(g[i])) {
        const std::string name = p < names.size() ? names[p] : std::to_string(p);
        throw GradientError("adam_step: non-finite gradient in " + name + "[" +
                            std::to_string(i) + "]");
      }
  }
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto theta = params[p].values_mut();
    const auto g = params[p].grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (m.size() != theta.size()) throw ContractError("adam_step: moment shape mismatch");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.epsilon) +
                  state.lr * state.weight_decay * theta[i];
    }
  }
}

/// Which of the seven loss terms participate. Mirrors the ablation ladder:
/// full > no_ccl_pair (drop the positive/negative pair contrasts) > no_ccl
/// (drop all user contrasts) > ce_only (drop the user-item contrast too).
enum class LossSet { full, no_ccl_pair, no_ccl, ce_only };

inline const char* loss_set_name(LossSet s) {
  switch (s) {
    case LossSet::full: return "full";
    case LossSet::no_ccl_pair: return "no_ccl_pair";
    case LossSet::no_ccl: return "no_ccl";
    case LossSet::ce_only: return "ce_only";
  }
  return "?";
}

inline LossSet parse_loss_set(const std::string& name) {
  for (LossSet s : {LossSet::full, LossSet::no_ccl_pair, LossSet::no_ccl, LossSet::ce_only})
    if (name == loss_set_name(s)) return s;
  throw ConfigError("unknown loss set '" + name +
                    "' (valid: full, no_ccl_pair, no_ccl, ce_only)");
}

inline bool uses_ccl(LossSet s) { return s == LossSet::full || s == LossSet::no_ccl_pair; }
inline bool uses_ccl_pair(LossSet s) { return s == LossSet::full; }
inline bool uses_cui(LossSet s) { return s != LossSet::ce_only; }

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  double lr = 0.003;
  double weight_decay = 1e-7;
  std::size_t n_p = 3;  // augmented positives per user
  std::size_t n_n = 3;  // augmented negatives per user
  std::size_t n_z = 256;  // substitute pool size (paper scale: 10000)
  std::size_t n_max = 50;
  MarginConfig margin;
  Strategy strategy = Strategy::easy2hard;
  LossSet losses = LossSet::full;
  std::uint64_t seed = 42;
  std::size_t eval_k = 50;

  void validate() const {
    if (batch_size == 0 || n_p == 0 || n_n == 0 || n_z == 0 || n_max == 0 || eval_k == 0)
      throw ConfigError("train: counts must be positive");
    margin.validate();
  }
};

struct LossValues {
  double ccl = 0.0, ccl_pos = 0.0, ccl_neg = 0.0;
  double ce = 0.0, ce_pos = 0.0, ce_neg = 0.0;
  double cui = 0.0, total = 0.0;
};

inline LossValues to_values(const LossBreakdown& b) {
  return {b.l_ccl.item(),    b.l_ccl_pos.item(), b.l_ccl_neg.item(), b.l_ce.item(),
          b.l_ce_pos.item(), b.l_ce_neg.item(),  b.l_cui.item(),     b.total.item()};
}

/// Everything the loss assembly needs to know about one instance beyond the
/// live forward pass: the augmented variants with their frozen hardness
/// scores. Keeping them explicit lets verification re-run the assembly at
/// perturbed parameters without re-sampling.
struct InstanceAugmentation {
  std::vector<AugmentedSequence> positives;
  std::vector<AugmentedSequence> negatives;
};

/// Runs the live forward pass for one instance and appends its contributions
/// to the batch-level accumulators.
struct BatchLossBuilder {
  Tape& tape;
  const ModelParams& params;
  const FeatureTable& features;
  const MarginConfig& margin;
  LossSet losses;

  std::vector<Tensor> ccl_terms, ccl_pos_terms, ccl_neg_terms;
  std::vector<std::pair<Tensor, std::uint8_t>> query_preds, pos_preds, neg_preds;
  std::vector<std::vector<std::pair<Tensor, std::uint8_t>>> cui_by_user;

  void add_instance(const TrainingInstance& instance, const InstanceAugmentation& aug) {
    const auto scored = score_sequence(tape, params, features, instance.history);
    const Tensor query = encode(tape, params, scored);

    std::vector<std::pair<Tensor, std::uint8_t>> this_user;
    for (const auto& [item, label] : instance.targets) {
      Tensor y_hat = predict_ctr(tape, params, query, item, features);
      query_preds.emplace_back(y_hat, label);
      this_user.emplace_back(y_hat, label);
    }
    cui_by_user.push_back(std::move(this_user));

    if (aug.positives.empty() && aug.negatives.empty()) return;

    std::vector<ScoredRep> pos_reps, neg_reps;
    for (const auto& a : aug.positives) {
      const auto s = score_sequence(tape, params, features, a.item_ids);
      pos_reps.push_back({encode(tape, params, s), a.hardness});
    }
    for (const auto& a : aug.negatives) {
      const auto s = score_sequence(tape, params, features, a.item_ids);
      neg_reps.push_back({encode(tape, params, s), a.hardness});
    }

    for (const auto& rep : pos_reps)
      for (const auto& [item, label] : instance.targets)
        pos_preds.emplace_back(predict_ctr(tape, params, rep.rep, item, features), label);
    for (const auto& rep : neg_reps)
      for (const auto& [item, label] : instance.targets)
        neg_preds.emplace_back(predict_ctr(tape, params, rep.rep, item, features), label);

    if (uses_ccl(losses) && !pos_reps.empty() && !neg_reps.empty())
      ccl_terms.push_back(loss_ccl(tape, query, pos_reps, neg_reps, margin));
    if (uses_ccl_pair(losses)) {
      if (!pos_reps.empty()) ccl_pos_terms.push_back(loss_ccl_pos(tape, query, pos_reps, margin));
      if (!neg_reps.empty()) ccl_neg_terms.push_back(loss_ccl_neg(tape, query, neg_reps, margin));
    }
  }

  LossBreakdown finish() {
    auto sum_terms = [&](std::vector<Tensor>& terms) {
      if (terms.empty()) return Tensor::scalar(0.0);
      Tensor total = terms[0];
      for (std::size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
      return total;
    };
    Tensor l_ccl = sum_terms(ccl_terms);
    Tensor l_ccl_pos = sum_terms(ccl_pos_terms);
    Tensor l_ccl_neg = sum_terms(ccl_neg_terms);
    Tensor l_ce = loss_ce(tape, query_preds, CeVariant::query);
    Tensor l_ce_pos = loss_ce(tape, pos_preds, CeVariant::positive);
    Tensor l_ce_neg = loss_ce(tape, neg_preds, CeVariant::negative);
    Tensor l_cui = uses_cui(losses) ? loss_cui(tape, cui_by_user) : Tensor::scalar(0.0);
    return total_loss(tape, l_ccl, l_ccl_pos, l_ccl_neg, l_ce, l_ce_pos, l_ce_neg, l_cui);
  }
};

/// Samples the augmentation set for one instance at the current parameters.
/// Sequences shorter than two behaviors cannot be augmented and train on the
/// cross-entropy terms alone.
inline InstanceAugmentation sample_augmentation(const ModelParams& params,
                                                const FeatureTable& features,
                                                const TrainingInstance& instance,
                                                const Tensor& pool_projection,
                                                std::span<const ItemId> pool, std::size_t n_p,
                                                std::size_t n_n, const StrategyState& strategy,
                                                Rng& rng) {
  InstanceAugmentation aug;
  if (instance.history.size() < 2) return aug;
  Tape scratch;
  const auto scored = score_sequence(scratch, params, features, instance.history);
  const Tensor beta = score_substitutes(scored, pool_projection);
  const auto alpha = scored.detached_alpha.values();
  aug.positives =
      construct(instance.history, alpha, beta, pool, Polarity::positive, n_p, strategy, rng);
  aug.negatives =
      construct(instance.history, alpha, beta, pool, Polarity::negative, n_n, strategy, rng);
  return aug;
}

inline std::string format_step_line(std::uint64_t step, const LossValues& v) {
  char line[256];
  std::snprintf(line, sizeof(line), "%llu %.10g %.10g %.10g %.10g %.10g %.10g %.10g %.10g",
                static_cast<unsigned long long>(step), v.total, v.ccl, v.ccl_pos, v.ccl_neg, v.ce,
                v.ce_pos, v.ce_neg, v.cui);
  return line;
}

inline std::string format_epoch_line(std::size_t epoch, const EvalSummary& eval) {
  char line[256];
  std::snprintf(line, sizeof(line), "epoch %zu %.10g %.10g %.10g %.10g", epoch, eval.auc,
                eval.precision, eval.recall, eval.f1);
  return line;
}

struct EpochResult {
  LossValues mean;
  std::size_t steps = 0;
};

/// One pass over the shuffled training instances. Per batch: one shared
/// substitute pool, per-user augmentation with seed-split streams, the seven
/// losses on a single tape, backward, one Adam step, then curriculum progress
/// advances by one step.
inline EpochResult train_epoch(ModelParams& params, AdamState& adam,
                               const FeatureTable& features,
                               std::span<const TrainingInstance> instances,
                               const TrainConfig& config, StrategyState& strategy,
                               std::uint64_t total_steps, std::uint64_t& global_step,
                               const Rng& run_rng, std::size_t epoch,
                               std::vector<std::string>* log_lines) {
  EpochResult result;
  if (instances.empty()) return result;

  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng = run_rng.split("shuffle", epoch);
  shuffle_rng.shuffle(order);

  auto params_list = params.all();
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(start + config.batch_size, order.size());
    Rng pool_rng = run_rng.split("pool", global_step);
    const auto pool = sample_substitute_pool(features.n_items, config.n_z, {}, pool_rng);
    const Tensor pool_projection = project_pool(params, features, pool);

    Tape tape;
    BatchLossBuilder builder{tape, params, features, config.margin, config.losses};
    for (std::size_t b = start; b < end; ++b) {
      const auto& instance = instances[order[b]];
      Rng aug_rng = run_rng.split("augment", global_step).split(instance.user);
      const auto aug = sample_augmentation(params, features, instance, pool_projection, pool,
                                           config.n_p, config.n_n, strategy, aug_rng);
      builder.add_instance(instance, aug);
    }
    LossBreakdown breakdown = builder.finish();
    params.zero_grad();
    tape.backward(breakdown.total);
    adam_step(params_list, adam);

    global_step += 1;
    strategy.progress = static_cast<double>(global_step) / static_cast<double>(total_steps);

    const LossValues values = to_values(breakdown);
    if (log_lines) log_lines->push_back(format_step_line(global_step, values));
    result.mean.ccl += values.ccl;
    result.mean.ccl_pos += values.ccl_pos;
    result.mean.ccl_neg += values.ccl_neg;
    result.mean.ce += values.ce;
    result.mean.ce_pos += values.ce_pos;
    result.mean.ce_neg += values.ce_neg;
    result.mean.cui += values.cui;
    result.mean.total += values.total;
    result.steps += 1;
  }
  if (result.steps > 0) {
    const double inv = 1.0 / static_cast<double>(result.steps);
    result.mean.ccl *= inv;
    result.mean.ccl_pos *= inv;
    result.mean.ccl_neg *= inv;
    result.mean.ce *= inv;
    result.mean.ce_pos *= inv;
    result.mean.ce_neg *= inv;
    result.mean.cui *= inv;
    result.mean.total *= inv;
  }
  return result;
}

// ---- leave-latest-out split ---------------------------------------------------

struct DataSplit {
  std::vector<TrainingInstance> train;
  std::vector<TrainingInstance> eval;  // one single-target instance per user
};

/// Holds out each user's chronologically last target together with its
/// history; everything else trains.
inline DataSplit split_leave_latest_out(std::vector<TrainingInstance> instances) {
  DataSplit split;
  std::unordered_map<UserId, std::size_t> last_of_user;
  for (std::size_t i = 0; i < instances.size(); ++i) last_of_user[instances[i].user] = i;

  for (std::size_t i = 0; i < instances.size(); ++i) {
    auto& instance = instances[i];
    const auto it = last_of_user.find(instance.user);
    if (it != last_of_user.end() && it->second == i) {
      TrainingInstance held;
      held.user = instance.user;
      held.history = instance.history;
      held.targets = {instance.targets.back()};
      split.eval.push_back(std::move(held));
      instance.targets.pop_back();
      if (instance.targets.empty()) continue;
    }
    split.train.push_back(std::move(instance));
  }
  return split;
}

// ---- full runs ----------------------------------------------------------------

struct TrainOutcome {
  ModelParams params;
  AdamState adam;
  std::vector<EvalSummary> eval_by_epoch;  // index 0 = before training
  std::vector<std::string> log_lines;
  std::size_t train_instances = 0;
  std::size_t eval_instances = 0;
};

/// Trains for config.epochs over the log, evaluating the held-out split after
/// every epoch (and once before training). All randomness derives from
/// config.seed through named streams.
inline TrainOutcome run_training(const TrainConfig& config, const FeatureTable& features,
                                 std::span<const Interaction> log) {
  config.validate();
  if (log.empty()) throw ContractError("run_training: empty interaction log");

  const Rng run_rng(config.seed);
  auto instances = build_instances(log, config.n_max);
  auto split = split_leave_latest_out(std::move(instances));

  TrainOutcome outcome;
  outcome.params = ModelParams::init(features.dim, run_rng.split("init"));
  auto params_list = outcome.params.all();
  outcome.adam = AdamState::init(params_list, config.lr, config.weight_decay);
  outcome.train_instances = split.train.size();
  outcome.eval_instances = split.eval.size();

  const std::size_t steps_per_epoch =
      (split.train.size() + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total_steps =
      std::max<std::uint64_t>(1, config.epochs * steps_per_epoch);

  StrategyState strategy{config.strategy, 0.0, 0};
  std::uint64_t global_step = 0;

  outcome.eval_by_epoch.push_back(
      evaluate_model(outcome.params, features, split.eval, config.eval_k));
  outcome.log_lines.push_back(format_epoch_line(0, outcome.eval_by_epoch.back()));

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    train_epoch(outcome.params, outcome.adam, features, split.train, config, strategy,
                total_steps, global_step, run_rng, epoch, &outcome.log_lines);
    outcome.eval_by_epoch.push_back(
        evaluate_model(outcome.params, features, split.eval, config.eval_k));
    outcome.log_lines.push_back(format_epoch_line(epoch, outcome.eval_by_epoch.back()));
  }
  return outcome;
}

// ---- checkpoint with optimizer state -------------------------------------------

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const AdamState* adam = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  write_params_block(out, params);
  const std::uint8_t has_adam = adam != nullptr ? 1 : 0;
  out.write(reinterpret_cast<const char*>(&has_adam), 1);
  if (adam) {
    out.write(reinterpret_cast<const char*>(&adam->step_count), 8);
    const auto params_list = params.all();
    for (std::size_t p = 0; p < params_list.size(); ++p)
      detail::write_tensor(out, Tensor::from(params_list[p].shape(),
                                             std::vector<double>(adam->m[p])));
    for (std::size_t p = 0; p < params_list.size(); ++p)
      detail::write_tensor(out, Tensor::from(params_list[p].shape(),
                                             std::vector<double>(adam->v[p])));
  }
  if (!out) throw IoError("write failed: " + path);
}

struct Checkpoint {
  ModelParams params;
  AdamState adam;
  bool has_adam = false;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Checkpoint ckpt;
  ckpt.params = read_params_block(in);
  std::uint8_t has_adam = 0;
  in.read(reinterpret_cast<char*>(&has_adam), 1);
  if (in && has_adam == 1) {
    ckpt.has_adam = true;
    auto params_list = ckpt.params.all();
    ckpt.adam = AdamState::init(params_list);
    in.read(reinterpret_cast<char*>(&ckpt.adam.step_count), 8);
    for (std::size_t p = 0; p < params_list.size(); ++p) {
      const Tensor t = detail::read_tensor(in, false);
      ckpt.adam.m[p].assign(t.values().begin(), t.values().end());
    }
    for (std::size_t p = 0; p < params_list.size(); ++p) {
      const Tensor t = detail::read_tensor(in, false);
      ckpt.adam.v[p].assign(t.values().begin(), t.values().end());
    }
    if (!in) throw ParseError("checkpoint: truncated optimizer state", 0);
  }
  return ckpt;
}

inline void write_metrics_log(const std::string& path, std::span<const std::string> lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics log: " + path);
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace ccl
