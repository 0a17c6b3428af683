#pragma once

#include <charconv>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccl/augment.hpp"
#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/train.hpp"

namespace ccl {

/// Full run description: either a synthetic corpus spec or dataset paths,
/// plus training hyper-parameters and the output directory.
struct RunConfig {
  std::optional<SyntheticSpec> synthetic;
  std::string interactions_path;
  std::string features_path;
  std::string out_dir = "out";
  TrainConfig train;

  bool has_dataset_paths() const { return !interactions_path.empty() || !features_path.empty(); }

  /// For subcommands that need data: exactly one source must be configured.
  void validate_data_source() const {
    if (synthetic.has_value() == has_dataset_paths())
      throw ConfigError("config: exactly one of [synthetic] and [data] must be present");
    if (has_dataset_paths() && (interactions_path.empty() || features_path.empty()))
      throw ConfigError("config: [data] needs both interactions and features paths");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::size_t parse_count(const std::string& key, std::string_view value) {
  std::uint64_t out = 0;
  if (!parse_u64(value, out)) throw ConfigError("config: " + key + " expects a non-negative integer");
  return static_cast<std::size_t>(out);
}

inline std::uint64_t parse_seed(const std::string& key, std::string_view value) {
  std::uint64_t out = 0;
  if (!parse_u64(value, out)) throw ConfigError("config: " + key + " expects an integer seed");
  return out;
}

inline double parse_real(const std::string& key, std::string_view value) {
  try {
    std::size_t used = 0;
    const std::string s(value);
    const double out = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a real number");
  }
}

}  // namespace detail

/// Applies one `section.key = value` assignment. Unknown keys are rejected.
inline void apply_config_entry(RunConfig& config, const std::string& section,
                               const std::string& key, const std::string& value) {
  const std::string full = section.empty() ? key : section + "." + key;
  auto count = [&] { return detail::parse_count(full, value); };
  auto real = [&] { return detail::parse_real(full, value); };

  if (section == "data") {
    if (key == "interactions") { config.interactions_path = value; return; }
    if (key == "features") { config.features_path = value; return; }
  } else if (section == "synthetic") {
    if (!config.synthetic) config.synthetic.emplace();
    auto& s = *config.synthetic;
    if (key == "n_users") { s.n_users = count(); return; }
    if (key == "n_items") { s.n_items = count(); return; }
    if (key == "dim") { s.dim = count(); return; }
    if (key == "latent_dim") { s.latent_dim = count(); return; }
    if (key == "click_noise_rate") { s.click_noise_rate = real(); return; }
    if (key == "seed") { s.seed = detail::parse_seed(full, value); return; }
    if (key == "events_per_user") { s.events_per_user = count(); return; }
    if (key == "logit_scale") { s.logit_scale = real(); return; }
    if (key == "history_weight") { s.history_weight = real(); return; }
    if (key == "click_bias") { s.click_bias = real(); return; }
  } else if (section == "train") {
    auto& t = config.train;
    if (key == "batch_size") { t.batch_size = count(); return; }
    if (key == "epochs") { t.epochs = count(); return; }
    if (key == "lr") { t.lr = real(); return; }
    if (key == "weight_decay") { t.weight_decay = real(); return; }
    if (key == "n_p") { t.n_p = count(); return; }
    if (key == "n_n") { t.n_n = count(); return; }
    if (key == "n_z") { t.n_z = count(); return; }
    if (key == "n_max") { t.n_max = count(); return; }
    if (key == "strategy") { t.strategy = parse_strategy(value); return; }
    if (key == "losses") { t.losses = parse_loss_set(value); return; }
    if (key == "seed") { t.seed = detail::parse_seed(full, value); return; }
    if (key == "eval_k") { t.eval_k = count(); return; }
  } else if (section == "margin") {
    auto& m = config.train.margin;
    if (key == "delta_s") { m.delta_s = real(); return; }
    if (key == "delta_u") { m.delta_u = real(); return; }
    if (key == "delta_l") { m.delta_l = real(); return; }
  } else if (section == "output") {
    if (key == "dir") { config.out_dir = value; return; }
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
  throw ConfigError("config: unknown key '" + key + "' in [" + section + "]");
}

/// `key=value` lines under `[section]` headers; '#' starts a comment line.
inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  RunConfig config;
  std::string line;
  std::string section;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const auto trimmed = detail::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (trimmed.front() == '[') {
      if (trimmed.back() != ']')
        throw ConfigError("config: bad section header at line " + std::to_string(line_number));
      section = std::string(detail::trim(trimmed.substr(1, trimmed.size() - 2)));
      continue;
    }
    const auto eq = trimmed.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config: expected key=value at line " + std::to_string(line_number));
    const std::string key(detail::trim(trimmed.substr(0, eq)));
    const std::string value(detail::trim(trimmed.substr(eq + 1)));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(line_number));
    apply_config_entry(config, section, key, value);
  }
  return config;
}

/// Generic `section.key=value` override (command line wins over the file).
inline void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);
  const auto dot = path.find('.');
  if (dot == std::string::npos)
    throw ConfigError("override '" + assignment + "' must name a section, e.g. train.epochs=5");
  apply_config_entry(config, path.substr(0, dot), path.substr(dot + 1), value);
}

struct RunInputs {
  FeatureTable features;
  std::vector<Interaction> log;
};

/// Generates or loads the corpus named by the config.
inline RunInputs materialize_inputs(const RunConfig& config) {
  config.validate_data_source();
  RunInputs inputs;
  if (config.synthetic) {
    auto corpus = generate_synthetic(*config.synthetic);
    inputs.features = std::move(corpus.features);
    inputs.log = std::move(corpus.log);
    return inputs;
  }
  inputs.features = load_features(config.features_path);
  inputs.log = load_interactions(config.interactions_path).records;
  for (const auto& r : inputs.log)
    if (r.item >= inputs.features.n_items)
      throw IndexError("interaction references item " + std::to_string(r.item) +
                       " outside the feature table (" + std::to_string(inputs.features.n_items) +
                       " items)");
  return inputs;
}

}  // namespace ccl
