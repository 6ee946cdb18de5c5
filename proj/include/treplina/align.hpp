#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "treplina/model.hpp"
#include "treplina/tensor.hpp"

namespace treplina {

struct AlignmentConfig {
  int64_t layer = 2;           // 1-based block index; 0 is the embedding output
  double lambda = 0.05;        // weight of the similarity penalty
  double mu = 0.05;            // weight of the anchoring penalty
  int64_t repina_cadence = 2;  // optimizer steps between anchoring applications

  void validate(int64_t n_layers) const {
    if (layer < 1 || layer > n_layers)
      throw ConfigError("alignment: layer " + std::to_string(layer) + " outside [1, " +
                        std::to_string(n_layers) + "]");
    if (lambda < 0.0 || mu < 0.0) throw ConfigError("alignment: lambda and mu must be >= 0");
    if (repina_cadence < 1) throw ConfigError("alignment: cadence must be >= 1");
  }
};

/// Flattens the non-pad hidden vectors at one layer into an [N, d] matrix,
/// batch-major then position order.
inline Tensor gather_layer_states(const ForwardOutput& out, int64_t layer,
                                  const TokenBatch& batch) {
  if (layer < 0 || layer >= static_cast<int64_t>(out.hidden.size()))
    throw ConfigError("gather: layer " + std::to_string(layer) + " outside [0, " +
                      std::to_string(out.hidden.size() - 1) + "]");
  const Tensor& h = out.hidden[layer];
  const int64_t B = h.dim(0), T = h.dim(1), d = h.dim(2);
  if (B != batch.size || T != batch.seq_len)
    throw ShapeError("gather: mask shape does not match hidden states");
  std::vector<int64_t> rows;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      if (batch.on(b, t)) rows.push_back(b * T + t);
  if (rows.size() < 2)
    throw InsufficientTokensError("gather: " + std::to_string(rows.size()) +
                                  " non-pad tokens, need at least 2");
  return take_rows(reshape(h, {B * T, d}), rows);
}

/// Keeps the first min(N_a, N_b) rows of each.
inline std::pair<Tensor, Tensor> pair_truncate(const Tensor& a, const Tensor& b) {
  const int64_t n = std::min(a.dim(0), b.dim(0));
  if (n < 2)
    throw InsufficientTokensError("pair_truncate: " + std::to_string(n) +
                                  " shared rows, need at least 2");
  if (a.dim(0) == b.dim(0)) return {a, b};
  return {a.dim(0) == n ? a : slice_rows(a, 0, n), b.dim(0) == n ? b : slice_rows(b, 0, n)};
}

inline Tensor mean_center(const Tensor& x) {
  const int64_t n = x.dim(0);
  if (n < 2) throw InsufficientTokensError("mean_center: need at least 2 rows");
  Tensor col_mean = matmul(Tensor::full({1, n}, 1.0 / static_cast<double>(n)), x);
  return sub(x, matmul(Tensor::full({n, 1}, 1.0), col_mean));
}

namespace detail {

inline double frob_sq_of_product(const Tensor& a, const Tensor& b) {
  // ||A^T B||_F^2 without building the graph
  const int64_t n = a.dim(0), da = a.dim(1), db = b.dim(1);
  double total = 0.0;
  for (int64_t i = 0; i < da; ++i)
    for (int64_t j = 0; j < db; ++j) {
      double s = 0.0;
      for (int64_t r = 0; r < n; ++r) s += a.at(r, i) * b.at(r, j);
      total += s * s;
    }
  return total;
}

}  // namespace detail

/// Similarity of two already-centered representation matrices:
/// ||X^T Y||_F^2 / (||X^T X||_F ||Y^T Y||_F), clamped to [0, 1].
inline double linear_cka(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.dim(0) != y.dim(0))
    throw ShapeError("cka: need equal row counts, got " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  const double sxx = detail::frob_sq_of_product(x, x);
  const double syy = detail::frob_sq_of_product(y, y);
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInputError("cka: an argument is all-zero after centering");
  const double sxy = detail::frob_sq_of_product(x, y);
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), 0.0, 1.0);
}

/// Differentiable 1 - CKA over centered matrices; gradients flow into both.
inline Tensor cka_loss_from_centered(const Tensor& x, const Tensor& y) {
  if (x.ndim() != 2 || y.ndim() != 2 || x.dim(0) != y.dim(0))
    throw ShapeError("cka: need equal row counts, got " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  Tensor xty = matmul(transpose(x), y);
  Tensor xtx = matmul(transpose(x), x);
  Tensor yty = matmul(transpose(y), y);
  Tensor sxy = sum(mul(xty, xty));
  Tensor sxx = sum(mul(xtx, xtx));
  Tensor syy = sum(mul(yty, yty));
  if (sxx.item() == 0.0 || syy.item() == 0.0)
    throw DegenerateInputError("cka: an argument is all-zero after centering");
  Tensor ratio = div(sxy, mul(sqrt(sxx), sqrt(syy)));
  return sub(Tensor::scalar(1.0), ratio);
}

/// Truncate-to-shared-rows, center, then 1 - CKA.
inline Tensor cka_loss_from_states(const Tensor& a, const Tensor& b) {
  auto [ta, tb] = pair_truncate(a, b);
  return cka_loss_from_centered(mean_center(ta), mean_center(tb));
}

inline Tensor cka_loss(const ForwardOutput& out_a, const TokenBatch& batch_a,
                       const ForwardOutput& out_b, const TokenBatch& batch_b, int64_t layer) {
  return cka_loss_from_states(gather_layer_states(out_a, layer, batch_a),
                              gather_layer_states(out_b, layer, batch_b));
}

/// Measured similarity (not a loss) for logging and probes.
inline double measure_cka(const ForwardOutput& out_a, const TokenBatch& batch_a,
                          const ForwardOutput& out_b, const TokenBatch& batch_b, int64_t layer) {
  auto [ta, tb] = pair_truncate(gather_layer_states(out_a, layer, batch_a),
                                gather_layer_states(out_b, layer, batch_b));
  return linear_cka(mean_center(ta), mean_center(tb));
}

/// Mean squared deviation from a frozen reference; the reference is detached
/// here, so gradient flows only into the current states.
inline Tensor repina_loss(const Tensor& current, const Tensor& reference) {
  if (current.shape() != reference.shape())
    throw ShapeError("repina: shape mismatch " + shape_str(current.shape()) + " vs " +
                     shape_str(reference.shape()));
  Tensor diff = sub(current, reference.detach());
  return mean(mul(diff, diff));
}

/// L_total = L_mt + lambda * L_cka + mu * L_repina (the anchoring term only
/// on cadence steps). Zero weights skip their term entirely, so lambda=mu=0
/// reduces bit-exactly to the task loss.
inline Tensor combined_loss(const Tensor& l_mt, const Tensor* l_cka, const Tensor* l_repina,
                            const AlignmentConfig& cfg, bool apply_repina) {
  Tensor total = l_mt;
  if (cfg.lambda != 0.0) {
    if (l_cka == nullptr) throw ValueError("combined loss: lambda > 0 but no similarity term");
    total = add(total, scale(*l_cka, cfg.lambda));
  }
  if (apply_repina && cfg.mu != 0.0) {
    if (l_repina == nullptr) throw ValueError("combined loss: mu > 0 but no anchoring term");
    total = add(total, scale(*l_repina, cfg.mu));
  }
  return total;
}

}  // namespace treplina
