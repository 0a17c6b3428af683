#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ccl/data.hpp"
#include "ccl/errors.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

/// The trainable tensors: four scoring/projection matrices plus a small MLP
/// head (3d -> d -> d/2 -> 1, relu/relu/sigmoid).
struct ModelParams {
  std::size_t dim = 0;
  Tensor w1, w2;  // pairwise relevance scoring
  Tensor w3;      // sequence encoder projection
  Tensor w4;      // target projection for the CTR head
  Tensor mlp_w1, mlp_b1;
  Tensor mlp_w2, mlp_b2;
  Tensor mlp_w3, mlp_b3;

  /// Weights from uniform(-1/sqrt(dim), 1/sqrt(dim)), biases zero.
  static ModelParams init(std::size_t dim, Rng rng) {
    if (dim < 2 || dim % 2 != 0) throw ContractError("ModelParams: dim must be even and >= 2");
    const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
    auto uniform_tensor = [&](Shape shape) {
      std::vector<double> v(numel(shape));
      for (auto& x : v) x = rng.uniform(-bound, bound);
      return Tensor::from(std::move(shape), std::move(v), /*requires_grad=*/true);
    };
    ModelParams p;
    p.dim = dim;
    p.w1 = uniform_tensor({dim, dim});
    p.w2 = uniform_tensor({dim, dim});
    p.w3 = uniform_tensor({dim, dim});
    p.w4 = uniform_tensor({dim, dim});
    p.mlp_w1 = uniform_tensor({3 * dim, dim});
    p.mlp_b1 = Tensor::zeros({dim}, true);
    p.mlp_w2 = uniform_tensor({dim, dim / 2});
    p.mlp_b2 = Tensor::zeros({dim / 2}, true);
    p.mlp_w3 = uniform_tensor({dim / 2, 1});
    p.mlp_b3 = Tensor::zeros({1}, true);
    return p;
  }

  std::vector<Tensor> all() const {
    return {w1, w2, w3, w4, mlp_w1, mlp_b1, mlp_w2, mlp_b2, mlp_w3, mlp_b3};
  }

  static const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"W1",     "W2",     "W3",     "W4",     "mlp.w1",
                                               "mlp.b1", "mlp.w2", "mlp.b2", "mlp.w3", "mlp.b3"};
    return n;
  }

  void zero_grad() {
    for (auto t : all()) t.zero_grad();
  }

  bool all_finite() const {
    for (const auto& t : all())
      if (!t.all_finite()) return false;
    return true;
  }
};

/// Trainable-parameter count for one embedding dimension.
inline std::size_t param_count(std::size_t dim) {
  if (dim % 2 != 0) throw ContractError("param_count: dim must be even");
  return 4 * dim * dim                     // W1..W4
         + (3 * dim * dim + dim)           // mlp layer 1
         + (dim * dim / 2 + dim / 2)       // mlp layer 2
         + (dim / 2 + 1);                  // mlp layer 3
}

/// A scored behavior sequence: pairwise relevance, per-item importance, and
/// the stop-gradient copy consumed by augmentation and margins.
struct ScoredSequence {
  std::vector<ItemId> items;
  Tensor features;        // N x dim, constant
  Tensor proj_w1;         // N x dim, live (reused for substitute scoring)
  Tensor alpha_pair;      // N x N, live
  Tensor alpha;           // N, live (exact row sums of alpha_pair)
  Tensor detached_alpha;  // value-equal to alpha, no gradient
};

enum class Role { query, positive, negative };

struct UserRepresentation {
  Tensor vec;
  Role role = Role::query;
  std::size_t index = 0;  // which positive/negative; 0 for the query
};

/// Gathers feature rows for a history into a constant N x dim tensor.
inline Tensor gather_features(const FeatureTable& features, std::span<const ItemId> items) {
  std::vector<double> v;
  v.reserve(items.size() * features.dim);
  for (ItemId item : items) {
    const auto row = features.row(item);
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor::from({items.size(), features.dim}, std::move(v));
}

/// alpha_pair[i][j] = (v_i W1)^T (v_j W2); alpha = row sums.
inline ScoredSequence score_sequence(Tape& tape, const ModelParams& params,
                                     const FeatureTable& features,
                                     std::span<const ItemId> history) {
  if (history.empty()) throw ContractError("score_sequence: empty history");
  if (features.dim != params.dim)
    throw ShapeError("score_sequence: feature dim " + std::to_string(features.dim) +
                     " != model dim " + std::to_string(params.dim));
  ScoredSequence scored;
  scored.items.assign(history.begin(), history.end());
  scored.features = gather_features(features, history);
  scored.proj_w1 = tape.matmul(scored.features, params.w1);
  Tensor proj_w2 = tape.matmul(scored.features, params.w2);
  scored.alpha_pair = tape.matmul(scored.proj_w1, tape.transpose(proj_w2));
  scored.alpha = tape.row_sum(scored.alpha_pair);
  scored.detached_alpha = scored.alpha.detach();
  return scored;
}

/// W2-projected pool features, computed once per batch (the pool is shared).
inline Tensor project_pool(const ModelParams& params, const FeatureTable& features,
                           std::span<const ItemId> pool) {
  const std::size_t d = params.dim;
  std::vector<double> out(pool.size() * d, 0.0);
  const auto w2 = params.w2.values();
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto row = features.row(pool[k]);
    for (std::size_t i = 0; i < d; ++i) {
      const double vi = row[i];
      if (vi == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out[k * d + j] += vi * w2[i * d + j];
    }
  }
  return Tensor::from({pool.size(), d}, std::move(out));
}

/// beta[t][k] = (v_t W1)^T (v_k^z W2), emitted in detached form: relatedness
/// scores only ever feed augmentation and margins.
inline Tensor score_substitutes(const ScoredSequence& scored, const Tensor& pool_projection) {
  const std::size_t n = scored.items.size();
  const std::size_t d = scored.proj_w1.shape()[1];
  const std::size_t n_z = pool_projection.shape()[0];
  if (n_z == 0) throw ContractError("score_substitutes: empty pool");
  if (pool_projection.shape()[1] != d)
    throw ShapeError("score_substitutes: projection dim mismatch");
  std::vector<double> beta(n * n_z, 0.0);
  const auto a = scored.proj_w1.values();
  const auto b = pool_projection.values();
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < n_z; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += a[t * d + j] * b[k * d + j];
      beta[t * n_z + k] = acc;
    }
  return Tensor::from({n, n_z}, std::move(beta));
}

inline Tensor score_substitutes(const ModelParams& params, const ScoredSequence& scored,
                                const FeatureTable& features, std::span<const ItemId> pool) {
  if (pool.empty()) throw ContractError("score_substitutes: empty pool");
  return score_substitutes(scored, project_pool(params, features, pool));
}

/// Attention-pooled user representation:
///   v_hat_t = sum_i (v_i W3) softmax_i(alpha_pair[t][.])
///   u       = sum_t v_hat_t softmax_t(alpha)
/// Both softmaxes run over the live scores, so gradient reaches W1/W2 here.
inline Tensor encode(Tape& tape, const ModelParams& params, const ScoredSequence& scored) {
  Tensor attention = tape.softmax_rows(scored.alpha_pair);
  Tensor proj_w3 = tape.matmul(scored.features, params.w3);
  Tensor pooled = tape.matmul(attention, proj_w3);  // N x dim of v_hat rows
  Tensor weights = tape.softmax(scored.alpha);
  return tape.matvec(weights, pooled);
}

/// CTR head: sigmoid MLP over [u, v W4, u * (v W4)].
inline Tensor predict_ctr(Tape& tape, const ModelParams& params, const Tensor& user_rep,
                          ItemId target, const FeatureTable& features) {
  const auto row = features.row(target);
  Tensor v = Tensor::from({features.dim}, std::vector<double>(row.begin(), row.end()));
  Tensor vw4 = tape.matvec(v, params.w4);
  Tensor h = tape.concat({user_rep, vw4, tape.mul(user_rep, vw4)});
  Tensor h1 = tape.relu(tape.add(tape.matvec(h, params.mlp_w1), params.mlp_b1));
  Tensor h2 = tape.relu(tape.add(tape.matvec(h1, params.mlp_w2), params.mlp_b2));
  return tape.sigmoid(tape.add(tape.matvec(h2, params.mlp_w3), params.mlp_b3));
}

// ---- checkpoint encoding ------------------------------------------------------

inline constexpr char kModelMagic[4] = {'C', 'C', 'L', 'M'};

namespace detail {

inline void write_tensor(std::ostream& out, const Tensor& t) {
  const auto rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (std::size_t d : t.shape()) {
    const auto dim = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&dim), 4);
  }
  out.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline Tensor read_tensor(std::istream& in, bool requires_grad) {
  std::uint32_t rank = 0;
  in.read(reinterpret_cast<char*>(&rank), 4);
  if (!in || rank > 8) throw ParseError("checkpoint: corrupt tensor rank", 0);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t dim = 0;
    in.read(reinterpret_cast<char*>(&dim), 4);
    shape[i] = dim;
  }
  std::vector<double> values(numel(shape));
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw ParseError("checkpoint: truncated tensor payload", 0);
  return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

}  // namespace detail

/// CCLM block: magic, u32 dim, then W1,W2,W3,W4 and the MLP layers in order.
inline void write_params_block(std::ostream& out, const ModelParams& params) {
  out.write(kModelMagic, 4);
  const auto dim = static_cast<std::uint32_t>(params.dim);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  for (const auto& t : params.all()) detail::write_tensor(out, t);
}

inline ModelParams read_params_block(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw ParseError("checkpoint: not a CCLM file", 0);
  std::uint32_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), 4);
  if (!in || dim == 0) throw ParseError("checkpoint: corrupt header", 0);
  ModelParams p;
  p.dim = dim;
  p.w1 = detail::read_tensor(in, true);
  p.w2 = detail::read_tensor(in, true);
  p.w3 = detail::read_tensor(in, true);
  p.w4 = detail::read_tensor(in, true);
  p.mlp_w1 = detail::read_tensor(in, true);
  p.mlp_b1 = detail::read_tensor(in, true);
  p.mlp_w2 = detail::read_tensor(in, true);
  p.mlp_b2 = detail::read_tensor(in, true);
  p.mlp_w3 = detail::read_tensor(in, true);
  p.mlp_b3 = detail::read_tensor(in, true);
  if (p.w1.shape() != Shape{dim, dim}) throw ParseError("checkpoint: W1 shape mismatch", 0);
  return p;
}

}  // namespace ccl
