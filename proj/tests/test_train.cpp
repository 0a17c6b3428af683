#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "ccl/train.hpp"
#include "support.hpp"

using namespace ccl;

TEST_CASE("adam: first-step magnitude and zero-gradient fixture") {
  std::vector<Tensor> params = {Tensor::scalar(1.0, true)};
  AdamState state = AdamState::init(params, 0.003, 0.0);
  params[0].grad_mut()[0] = 1.0;
  adam_step(params, state);
  CHECK(params[0].item() == doctest::Approx(1.0 - 0.003).epsilon(1e-7));
  CHECK(state.step_count == 1);

  // zero gradient, zero decay: parameters hold still
  std::vector<Tensor> frozen = {Tensor::scalar(0.7, true)};
  AdamState fs = AdamState::init(frozen, 0.003, 0.0);
  frozen[0].ensure_grad();
  adam_step(frozen, fs);
  CHECK(frozen[0].item() == 0.7);
}

TEST_CASE("adam: drives a quadratic toward zero") {
  std::vector<Tensor> params = {Tensor::scalar(1.0, true)};
  AdamState state = AdamState::init(params, 0.05, 0.0);
  double prev = 1.0;
  for (int step = 0; step < 10; ++step) {
    Tape tape;
    const Tensor loss = tape.mul(params[0], params[0]);
    params[0].zero_grad();
    tape.backward(loss);
    adam_step(params, state);
    CHECK(std::abs(params[0].item()) < std::abs(prev));
    prev = params[0].item();
  }
}

TEST_CASE("adam: aborts on a non-finite gradient, naming the parameter") {
  Rng rng(107);
  auto model = ModelParams::init(2, rng);
  auto params = model.all();
  AdamState state = AdamState::init(params);
  for (auto& p : params) p.ensure_grad();
  params[0].grad_mut()[3] = std::nan("");
  const std::vector<double> before(params[0].values().begin(), params[0].values().end());
  CHECK_THROWS_WITH_AS(adam_step(params, state), doctest::Contains("W1"), GradientError);
  CHECK(state.step_count == 0);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(params[0].values()[i] == before[i]);
}

TEST_CASE("adam: decoupled weight decay behavior") {
  // lr = 0 freezes everything regardless of decay
  std::vector<Tensor> params = {Tensor::from({3}, {1.0, -2.0, 0.5}, true)};
  AdamState state = AdamState::init(params, 0.0, 0.1);
  params[0].grad_mut()[0] = 1.0;
  adam_step(params, state);
  CHECK(params[0].values()[0] == 1.0);
  CHECK(params[0].values()[1] == -2.0);

  // zero gradients with decay shrink the norm monotonically
  std::vector<Tensor> decayed = {Tensor::from({2}, {3.0, -4.0}, true)};
  AdamState ds = AdamState::init(decayed, 0.01, 0.5);
  decayed[0].ensure_grad();
  double prev_norm = 5.0;
  for (int step = 0; step < 5; ++step) {
    adam_step(decayed, ds);
    const double norm = std::hypot(decayed[0].values()[0], decayed[0].values()[1]);
    CHECK(norm < prev_norm);
    prev_norm = norm;
  }
}

TEST_CASE("split_leave_latest_out: holds out each user's final target") {
  std::vector<TrainingInstance> instances;
  instances.push_back({0, {1}, {{2, 1}}});
  instances.push_back({0, {1, 2}, {{3, 0}, {4, 1}}});
  instances.push_back({1, {5}, {{6, 0}}});
  auto split = split_leave_latest_out(instances);

  REQUIRE(split.eval.size() == 2);
  CHECK(split.eval[0].user == 0);
  CHECK(split.eval[0].history == std::vector<ItemId>{1, 2});
  CHECK(split.eval[0].targets == std::vector<std::pair<ItemId, std::uint8_t>>{{4, 1}});
  CHECK(split.eval[1].user == 1);

  // user 0 keeps two training instances (the second loses its last target),
  // user 1's only instance disappears entirely
  REQUIRE(split.train.size() == 2);
  CHECK(split.train[1].targets == std::vector<std::pair<ItemId, std::uint8_t>>{{3, 0}});
}

TEST_CASE("train_epoch: empty instance list is a no-op") {
  Rng rng(109);
  auto params = ModelParams::init(4, rng);
  auto params_list = params.all();
  AdamState adam = AdamState::init(params_list);
  FeatureTable features;
  features.n_items = 4;
  features.dim = 4;
  features.values.resize(16, 0.1);
  TrainConfig config;
  StrategyState strategy;
  std::uint64_t step = 0;
  const auto result = train_epoch(params, adam, features, {}, config, strategy, 1, step,
                                  Rng(1), 1, nullptr);
  CHECK(result.steps == 0);
  CHECK(step == 0);
}

namespace {

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.n_users = 24;
  spec.n_items = 60;
  spec.dim = 8;
  spec.latent_dim = 4;
  spec.click_noise_rate = 0.1;
  spec.events_per_user = 12;
  spec.seed = 5;
  return spec;
}

TrainConfig tiny_config(std::size_t epochs) {
  TrainConfig config;
  config.batch_size = 8;
  config.epochs = epochs;
  config.n_p = 2;
  config.n_n = 2;
  config.n_z = 24;
  config.seed = 11;
  config.eval_k = 5;
  return config;
}

}  // namespace

TEST_CASE("run_training: deterministic given the seed") {
  const auto corpus = generate_synthetic(tiny_spec());
  const auto config = tiny_config(2);
  const auto a = run_training(config, corpus.features, corpus.log);
  const auto b = run_training(config, corpus.features, corpus.log);

  REQUIRE(a.log_lines.size() == b.log_lines.size());
  for (std::size_t i = 0; i < a.log_lines.size(); ++i) CHECK(a.log_lines[i] == b.log_lines[i]);
  const auto pa = a.params.all();
  const auto pb = b.params.all();
  for (std::size_t p = 0; p < pa.size(); ++p)
    for (std::size_t i = 0; i < pa[p].size(); ++i)
      CHECK(pa[p].values()[i] == pb[p].values()[i]);

  // a different seed moves the trajectory
  auto other = config;
  other.seed = 12;
  const auto c = run_training(other, corpus.features, corpus.log);
  bool identical = true;
  const auto pc = c.params.all();
  for (std::size_t p = 0; p < pa.size() && identical; ++p)
    for (std::size_t i = 0; i < pa[p].size() && identical; ++i)
      identical = pa[p].values()[i] == pc[p].values()[i];
  CHECK_FALSE(identical);
}

TEST_CASE("run_training: loss trends down and progress ends at one") {
  const auto corpus = generate_synthetic(tiny_spec());
  auto config = tiny_config(5);
  const auto outcome = run_training(config, corpus.features, corpus.log);

  // mean step loss of the first epoch vs the last epoch, from the log
  std::vector<double> totals;
  for (const auto& line : outcome.log_lines) {
    if (line.rfind("epoch", 0) == 0) continue;
    std::size_t sp = line.find(' ');
    totals.push_back(std::stod(line.substr(sp + 1)));
  }
  REQUIRE(totals.size() >= 10);
  const std::size_t per_epoch = totals.size() / 5;
  double first = 0.0, last = 0.0;
  for (std::size_t i = 0; i < per_epoch; ++i) {
    first += totals[i];
    last += totals[totals.size() - per_epoch + i];
  }
  CHECK(last < first);
  CHECK(outcome.params.all_finite());
  CHECK(outcome.eval_by_epoch.size() == 6);
}

TEST_CASE("run_training: epochs=0 checkpoint reproduces its evaluation") {
  const auto corpus = generate_synthetic(tiny_spec());
  auto config = tiny_config(0);
  const auto outcome = run_training(config, corpus.features, corpus.log);
  REQUIRE(outcome.eval_by_epoch.size() == 1);

  const auto path = (std::filesystem::temp_directory_path() / "ccl_init.cclm").string();
  save_checkpoint(path, outcome.params, &outcome.adam);
  const auto restored = load_checkpoint(path);
  CHECK(restored.has_adam);
  CHECK(restored.adam.step_count == 0);

  auto instances = build_instances(corpus.log, config.n_max);
  const auto split = split_leave_latest_out(std::move(instances));
  const auto eval = evaluate_model(restored.params, corpus.features, split.eval, config.eval_k);
  CHECK(eval.auc == outcome.eval_by_epoch[0].auc);
  CHECK(eval.precision == outcome.eval_by_epoch[0].precision);
  CHECK(eval.recall == outcome.eval_by_epoch[0].recall);
  CHECK(eval.f1 == outcome.eval_by_epoch[0].f1);
}

TEST_CASE("checkpoint: optimizer state round trips exactly") {
  const auto corpus = generate_synthetic(tiny_spec());
  const auto outcome = run_training(tiny_config(1), corpus.features, corpus.log);
  const auto path = (std::filesystem::temp_directory_path() / "ccl_adam.cclm").string();
  save_checkpoint(path, outcome.params, &outcome.adam);
  const auto restored = load_checkpoint(path);
  REQUIRE(restored.has_adam);
  CHECK(restored.adam.step_count == outcome.adam.step_count);
  for (std::size_t p = 0; p < outcome.adam.m.size(); ++p) {
    CHECK(restored.adam.m[p] == outcome.adam.m[p]);
    CHECK(restored.adam.v[p] == outcome.adam.v[p]);
  }
}

TEST_CASE("strategy progress: one step per batch, exact terminal value") {
  const auto corpus = generate_synthetic(tiny_spec());
  auto config = tiny_config(3);
  const Rng run_rng(config.seed);
  auto instances = build_instances(corpus.log, config.n_max);
  auto split = split_leave_latest_out(std::move(instances));
  auto params = ModelParams::init(corpus.features.dim, run_rng.split("init"));
  auto params_list = params.all();
  AdamState adam = AdamState::init(params_list, config.lr, config.weight_decay);
  const std::size_t steps_per_epoch =
      (split.train.size() + config.batch_size - 1) / config.batch_size;
  const std::uint64_t total = config.epochs * steps_per_epoch;
  StrategyState strategy{config.strategy, 0.0, 0};
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto result = train_epoch(params, adam, corpus.features, split.train, config, strategy,
                                    total, step, run_rng, epoch, nullptr);
    CHECK(result.steps == steps_per_epoch);
  }
  CHECK(step == total);
  CHECK(strategy.progress == 1.0);
  CHECK(adam.step_count == total);
}

TEST_CASE("end-to-end gradient: total loss matches finite differences") {
  // dim=4, N_u=4, N_p=N_n=2, N_z=8 probe with frozen augmentation structure
  auto fx = oracle::make_probe(4, 4, 3, 8, 2, 2, 211);
  const auto analytic = oracle::probe_gradients(fx);
  const double f0 = oracle::probe_loss(fx);
  const auto params = fx.params.all();
  for (std::size_t p = 0; p < params.size(); ++p) {
    CAPTURE(ModelParams::names()[p]);
    const auto fd = oracle::finite_diff_tensor([&]() { return oracle::probe_loss(fx); },
                                               params[p], 1e-5);
    for (std::size_t i = 0; i < fd.size(); ++i) {
      CAPTURE(i);
      CHECK(oracle::fd_rel_err(analytic[p][i], fd[i], f0, 1e-5) <= 1e-4);
    }
  }
}

TEST_CASE("loss set toggles drop exactly the advertised terms") {
  auto fx = oracle::make_probe(4, 5, 3, 8, 2, 2, 223);

  auto values_for = [&](LossSet set) {
    Tape tape;
    auto copy = fx;
    copy.losses = set;
    BatchLossBuilder builder{tape, copy.params, copy.features, copy.margin, copy.losses};
    builder.add_instance(copy.instance, copy.aug);
    return to_values(builder.finish());
  };

  const auto full = values_for(LossSet::full);
  CHECK(full.ccl > 0.0);
  CHECK(full.cui > 0.0);

  const auto no_pair = values_for(LossSet::no_ccl_pair);
  CHECK(no_pair.ccl == full.ccl);
  CHECK(no_pair.ccl_pos == 0.0);
  CHECK(no_pair.ccl_neg == 0.0);

  const auto no_ccl = values_for(LossSet::no_ccl);
  CHECK(no_ccl.ccl == 0.0);
  CHECK(no_ccl.cui == full.cui);

  const auto ce_only = values_for(LossSet::ce_only);
  CHECK(ce_only.ccl == 0.0);
  CHECK(ce_only.cui == 0.0);
  CHECK(ce_only.ce == full.ce);
  CHECK(ce_only.ce_pos == full.ce_pos);
  CHECK(ce_only.ce_neg == full.ce_neg);
  CHECK(ce_only.total == doctest::Approx(ce_only.ce + ce_only.ce_pos + ce_only.ce_neg));
}
