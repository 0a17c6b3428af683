#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ccl/errors.hpp"
#include "ccl/rng.hpp"

namespace ccl {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

/// Fixed, non-trainable item feature vectors.
struct FeatureTable {
  std::size_t n_items = 0;
  std::size_t dim = 0;
  std::vector<double> values;  // row-major, n_items x dim

  std::span<const double> row(ItemId item) const {
    if (item >= n_items)
      throw IndexError("feature table: item " + std::to_string(item) + " out of range [0, " +
                       std::to_string(n_items) + ")");
    return std::span<const double>(values).subspan(static_cast<std::size_t>(item) * dim, dim);
  }
};

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  std::int64_t timestamp = 0;
  std::uint8_t label = 0;  // 1 = clicked

  bool operator==(const Interaction&) const = default;
};

/// One user's clicked-history window plus the exposures scored against it.
struct TrainingInstance {
  UserId user = 0;
  std::vector<ItemId> history;                         // clicked items, oldest first
  std::vector<std::pair<ItemId, std::uint8_t>> targets;  // (item, label)
};

/// Controls the latent-factor corpus generator used for verification runs.
/// Click probabilities blend a hidden per-user preference factor with the
/// running mean of recently clicked item factors, so part of the evidence for
/// every label is observable in the behavior sequence itself. history_weight 0
/// reduces to a pure static-preference model.
struct SyntheticSpec {
  std::size_t n_users = 200;
  std::size_t n_items = 500;
  std::size_t dim = 16;
  std::size_t latent_dim = 8;
  double click_noise_rate = 0.1;  // probability a sampled label is flipped
  std::uint64_t seed = 42;
  std::size_t events_per_user = 30;
  double logit_scale = 6.0;     // sharpness of the click probability
  double history_weight = 0.7;  // observable-evidence share of the click logit
  double click_bias = 0.0;      // additive logit offset; negative lowers the click rate

  void validate() const {
    if (!(click_noise_rate >= 0.0 && click_noise_rate <= 0.5))
      throw ConfigError("synthetic: click_noise_rate must be in [0, 0.5]");
    if (n_users == 0 || n_items == 0 || dim == 0 || latent_dim == 0 || events_per_user == 0)
      throw ConfigError("synthetic: counts must be positive");
    if (latent_dim > dim) throw ConfigError("synthetic: latent_dim must not exceed dim");
    if (events_per_user > n_items)
      throw ConfigError("synthetic: events_per_user exceeds the item gallery");
    if (!(logit_scale > 0.0)) throw ConfigError("synthetic: logit_scale must be positive");
    if (!(history_weight >= 0.0 && history_weight <= 1.0))
      throw ConfigError("synthetic: history_weight must be in [0, 1]");
  }
};

// ---- interaction log io -----------------------------------------------------

struct LoadedLog {
  std::vector<Interaction> records;
  std::size_t skipped_lines = 0;  // blank lines and the optional header
};

namespace detail {

inline bool parse_u64(std::string_view field, std::uint64_t& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline bool parse_i64(std::string_view field, std::int64_t& out) {
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == '\t' || line[i] == ' ')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != '\t' && line[i] != ' ') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

}  // namespace detail

/// Reads a tab-separated `user item timestamp label` log. Records come back
/// sorted by (user, timestamp). A non-numeric first field on the first
/// populated line is treated as a header and skipped.
inline LoadedLog load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interaction log: " + path);

  LoadedLog result;
  std::string line;
  std::size_t line_number = 0;
  bool saw_data_or_header = false;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = detail::split_fields(line);
    if (fields.empty()) {
      ++result.skipped_lines;
      continue;
    }
    std::uint64_t probe = 0;
    if (!saw_data_or_header && !detail::parse_u64(fields[0], probe)) {
      saw_data_or_header = true;  // header line
      ++result.skipped_lines;
      continue;
    }
    saw_data_or_header = true;
    if (fields.size() != 4)
      throw ParseError(path + ": expected 4 fields, got " + std::to_string(fields.size()),
                       line_number);
    std::uint64_t user = 0, item = 0, label = 0;
    std::int64_t ts = 0;
    if (!detail::parse_u64(fields[0], user)) throw ParseError(path + ": bad user id", line_number);
    if (!detail::parse_u64(fields[1], item)) throw ParseError(path + ": bad item id", line_number);
    if (!detail::parse_i64(fields[2], ts)) throw ParseError(path + ": bad timestamp", line_number);
    if (!detail::parse_u64(fields[3], label) || label > 1)
      throw ParseError(path + ": label must be 0 or 1", line_number);
    result.records.push_back({static_cast<UserId>(user), static_cast<ItemId>(item), ts,
                              static_cast<std::uint8_t>(label)});
  }
  std::stable_sort(result.records.begin(), result.records.end(),
                   [](const Interaction& a, const Interaction& b) {
                     if (a.user != b.user) return a.user < b.user;
                     return a.timestamp < b.timestamp;
                   });
  return result;
}

inline void write_interactions(const std::string& path, std::span<const Interaction> records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write interaction log: " + path);
  out << "user_id\titem_id\ttimestamp\tlabel\n";
  for (const auto& r : records)
    out << r.user << '\t' << r.item << '\t' << r.timestamp << '\t' << int(r.label) << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// ---- feature table io -------------------------------------------------------

inline constexpr char kFeatureMagic[4] = {'C', 'C', 'L', 'F'};

inline void save_features(const std::string& path, const FeatureTable& table) {
  if (path.size() >= 4 && path.ends_with(".csv")) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write feature table: " + path);
    out.precision(9);
    for (std::size_t i = 0; i < table.n_items; ++i) {
      for (std::size_t j = 0; j < table.dim; ++j) {
        if (j) out << ',';
        out << static_cast<float>(table.values[i * table.dim + j]);
      }
      out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write feature table: " + path);
  out.write(kFeatureMagic, 4);
  const auto n = static_cast<std::uint32_t>(table.n_items);
  const auto d = static_cast<std::uint32_t>(table.dim);
  out.write(reinterpret_cast<const char*>(&n), 4);
  out.write(reinterpret_cast<const char*>(&d), 4);
  std::vector<float> row(table.dim);
  for (std::size_t i = 0; i < table.n_items; ++i) {
    for (std::size_t j = 0; j < table.dim; ++j)
      row[j] = static_cast<float>(table.values[i * table.dim + j]);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path);
}

inline FeatureTable load_features(const std::string& path) {
  FeatureTable table;
  if (path.size() >= 4 && path.ends_with(".csv")) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feature table: " + path);
    std::string line;
    std::size_t line_number = 0;
    while (std::getline(in, line)) {
      ++line_number;
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string cell;
      std::vector<double> row;
      while (std::getline(ss, cell, ',')) {
        try {
          row.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ParseError(path + ": bad feature value '" + cell + "'", line_number);
        }
      }
      if (table.dim == 0) table.dim = row.size();
      if (row.size() != table.dim)
        throw ParseError(path + ": inconsistent row width", line_number);
      table.values.insert(table.values.end(), row.begin(), row.end());
      ++table.n_items;
    }
    if (table.dim == 0) throw ParseError(path + ": empty feature table", 0);
    return table;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature table: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw ParseError(path + ": not a CCLF feature file", 0);
  std::uint32_t n = 0, d = 0;
  in.read(reinterpret_cast<char*>(&n), 4);
  in.read(reinterpret_cast<char*>(&d), 4);
  if (!in || d == 0) throw ParseError(path + ": corrupt CCLF header", 0);
  table.n_items = n;
  table.dim = d;
  table.values.resize(std::size_t(n) * d);
  std::vector<float> row(d);
  for (std::size_t i = 0; i < table.n_items; ++i) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(d * sizeof(float)));
    if (!in) throw ParseError(path + ": truncated feature rows", 0);
    for (std::size_t j = 0; j < d; ++j) table.values[i * d + j] = row[j];
  }
  return table;
}

// ---- instance construction --------------------------------------------------

/// Windows a per-user-sorted log into training instances: every exposure is a
/// target scored against the clicked history strictly before it. Exposures
/// whose item is already in the history are dropped, as are exposures with an
/// empty history. Instance histories keep the `n_max` most recent clicks.
inline std::vector<TrainingInstance> build_instances(std::span<const Interaction> log,
                                                     std::size_t n_max) {
  if (n_max == 0) throw ContractError("build_instances: n_max must be positive");
  std::vector<TrainingInstance> instances;
  std::size_t i = 0;
  while (i < log.size()) {
    const UserId user = log[i].user;
    std::vector<ItemId> history;
    std::unordered_set<ItemId> seen;
    TrainingInstance open;
    bool open_active = false;
    auto flush = [&]() {
      if (open_active && !open.targets.empty()) instances.push_back(std::move(open));
      open = TrainingInstance{};
      open_active = false;
    };
    for (; i < log.size() && log[i].user == user; ++i) {
      const auto& event = log[i];
      const bool fresh = !seen.count(event.item);
      if (fresh && !history.empty()) {
        if (!open_active) {
          open.user = user;
          const std::size_t start = history.size() > n_max ? history.size() - n_max : 0;
          open.history.assign(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
          open_active = true;
        }
        open.targets.emplace_back(event.item, event.label);
      }
      if (event.label == 1 && fresh) {
        flush();
        history.push_back(event.item);
        seen.insert(event.item);
      }
    }
    flush();
  }
  return instances;
}

// ---- synthetic corpus -------------------------------------------------------

namespace detail {

/// Columns of a random dim x latent matrix, orthonormalized.
inline std::vector<double> orthogonal_lift(std::size_t dim, std::size_t latent, Rng rng) {
  std::vector<double> q(dim * latent);
  for (auto& v : q) v = rng.normal();
  for (std::size_t c = 0; c < latent; ++c) {
    for (std::size_t prev = 0; prev < c; ++prev) {
      double proj = 0.0;
      for (std::size_t r = 0; r < dim; ++r) proj += q[r * latent + c] * q[r * latent + prev];
      for (std::size_t r = 0; r < dim; ++r) q[r * latent + c] -= proj * q[r * latent + prev];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < dim; ++r) norm += q[r * latent + c] * q[r * latent + c];
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw DomainError("orthogonal_lift: degenerate column");
    for (std::size_t r = 0; r < dim; ++r) q[r * latent + c] /= norm;
  }
  return q;
}

}  // namespace detail

struct SyntheticCorpus {
  FeatureTable features;
  std::vector<Interaction> log;
  // ground truth, exposed for verification tests
  std::vector<double> user_factors;  // n_users x latent_dim
  std::vector<double> item_factors;  // n_items x latent_dim
  std::vector<double> latent_scores;  // one per log record, pre-noise logit scale
};

/// Latent-factor corpus: standard-normal user/item factors; the click logit
/// for an exposure is logit_scale * <p, i> / sqrt(latent_dim) where p blends
/// the hidden user factor with the normalized mean of the last few clicked
/// item factors (weight history_weight). Labels are sampled from the sigmoid
/// and flipped with click_noise_rate. Item features are the item factors
/// pushed through a fixed random orthogonal lift plus small noise. Pure
/// function of the spec.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng root(spec.seed);

  SyntheticCorpus corpus;
  corpus.user_factors.resize(spec.n_users * spec.latent_dim);
  corpus.item_factors.resize(spec.n_items * spec.latent_dim);
  {
    Rng r = root.split("user-factors");
    for (auto& v : corpus.user_factors) v = r.normal();
  }
  {
    Rng r = root.split("item-factors");
    for (auto& v : corpus.item_factors) v = r.normal();
  }

  const auto lift = detail::orthogonal_lift(spec.dim, spec.latent_dim, root.split("lift"));
  corpus.features.n_items = spec.n_items;
  corpus.features.dim = spec.dim;
  corpus.features.values.resize(spec.n_items * spec.dim);
  {
    Rng noise = root.split("feature-noise");
    constexpr double kFeatureNoiseSd = 0.05;
    for (std::size_t it = 0; it < spec.n_items; ++it)
      for (std::size_t r = 0; r < spec.dim; ++r) {
        double v = 0.0;
        for (std::size_t c = 0; c < spec.latent_dim; ++c)
          v += lift[r * spec.latent_dim + c] * corpus.item_factors[it * spec.latent_dim + c];
        corpus.features.values[it * spec.dim + r] = v + kFeatureNoiseSd * noise.normal();
      }
  }

  const std::size_t latent = spec.latent_dim;
  const double inv_sqrt_latent = 1.0 / std::sqrt(static_cast<double>(latent));
  const double factor_norm = std::sqrt(static_cast<double>(latent));
  constexpr std::size_t kInterestWindow = 50;  // clicks that define the running interest
  for (std::size_t u = 0; u < spec.n_users; ++u) {
    Rng exposure_rng = root.split("exposures", u);
    Rng label_rng = root.split("labels", u);
    const auto items =
        exposure_rng.sample_without_replacement(spec.n_items, spec.events_per_user);
    std::vector<ItemId> clicked;
    std::vector<double> preference(latent);
    for (std::size_t t = 0; t < items.size(); ++t) {
      const ItemId item = items[t];
      // blend the hidden factor with the recent clicked-history direction,
      // rescaled so both components carry comparable magnitude
      for (std::size_t c = 0; c < latent; ++c)
        preference[c] = corpus.user_factors[u * latent + c];
      if (spec.history_weight > 0.0 && !clicked.empty()) {
        std::vector<double> recent(latent, 0.0);
        const std::size_t start =
            clicked.size() > kInterestWindow ? clicked.size() - kInterestWindow : 0;
        for (std::size_t s = start; s < clicked.size(); ++s)
          for (std::size_t c = 0; c < latent; ++c)
            recent[c] += corpus.item_factors[std::size_t(clicked[s]) * latent + c];
        double norm = 0.0;
        for (double v : recent) norm += v * v;
        norm = std::sqrt(norm);
        if (norm > 1e-12) {
          const double rescale = factor_norm / norm;
          for (std::size_t c = 0; c < latent; ++c)
            preference[c] = (1.0 - spec.history_weight) * preference[c] +
                            spec.history_weight * rescale * recent[c];
        }
      }
      double score = 0.0;
      for (std::size_t c = 0; c < latent; ++c)
        score += preference[c] * corpus.item_factors[std::size_t(item) * latent + c];
      score *= inv_sqrt_latent;
      const double p = 1.0 / (1.0 + std::exp(-(spec.logit_scale * score + spec.click_bias)));
      const std::uint8_t genuine = label_rng.uniform() < p ? 1 : 0;
      std::uint8_t label = genuine;
      if (label_rng.uniform() < spec.click_noise_rate) label = 1 - label;
      // the user's interest evolves on genuine likes; flips stay observation
      // noise in the log rather than changing future behavior
      if (genuine == 1) clicked.push_back(item);
      corpus.log.push_back(
          {static_cast<UserId>(u), item, static_cast<std::int64_t>(t), label});
      corpus.latent_scores.push_back(score);
    }
  }
  return corpus;
}

// ---- substitute pools -------------------------------------------------------

/// n_z distinct items drawn uniformly from the gallery minus `exclude`. One
/// pool is shared by all users in a batch; per-user history exclusion happens
/// at augmentation time, so `exclude` is normally empty.
inline std::vector<ItemId> sample_substitute_pool(std::size_t n_items, std::size_t n_z,
                                                  const std::unordered_set<ItemId>& exclude,
                                                  Rng& rng) {
  std::size_t eligible = 0;
  for (std::size_t i = 0; i < n_items; ++i)
    if (!exclude.count(static_cast<ItemId>(i))) ++eligible;
  if (n_z > eligible)
    throw CapacityError("sample_substitute_pool: requested " + std::to_string(n_z) +
                        " of " + std::to_string(eligible) + " eligible items");
  if (n_z == 0) return {};
  if (exclude.empty()) return rng.sample_without_replacement(n_items, n_z);
  std::vector<ItemId> pool_space;
  pool_space.reserve(eligible);
  for (std::size_t i = 0; i < n_items; ++i)
    if (!exclude.count(static_cast<ItemId>(i))) pool_space.push_back(static_cast<ItemId>(i));
  const auto picks = rng.sample_without_replacement(pool_space.size(), n_z);
  std::vector<ItemId> pool(n_z);
  for (std::size_t i = 0; i < n_z; ++i) pool[i] = pool_space[picks[i]];
  return pool;
}

}  // namespace ccl
