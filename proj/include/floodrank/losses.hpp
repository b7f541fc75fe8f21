#pragma once

// Multi-task objective: squared-error regression on strongly labelled images plus
// a pairwise hinge on the predicted ordering of weakly labelled images,
//
//   L_total = L_reg + lambda * L_rank
//   L_reg   = mean_i (y_i - y_gt_i)^2
//   L_rank  = mean_p max(0, margin - s_p (y_a - y_b))
//
// with margin 0 unless explicitly requested.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "floodrank/errors.hpp"
#include "floodrank/pairing.hpp"

namespace floodrank {

class LossWeights {
 public:
  LossWeights() = default;
  explicit LossWeights(double lambda) : lambda_(lambda) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw DomainError("lambda must be finite and non-negative");
  }
  double lambda() const { return lambda_; }

 private:
  double lambda_ = 5.0;
};

namespace detail {
inline void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what);
}
}  // namespace detail

inline double regression_loss(double y, double y_gt) {
  detail::require_finite(y, "prediction");
  detail::require_finite(y_gt, "regression target");
  const double d = y - y_gt;
  return d * d;
}

inline double regression_loss(std::span<const double> y, std::span<const double> y_gt) {
  if (y.size() != y_gt.size()) throw DomainError("prediction/target size mismatch");
  if (y.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) sum += regression_loss(y[i], y_gt[i]);
  return sum / static_cast<double>(y.size());
}

// A margin of 0 gives the plain hinge.
inline double ranking_loss(double y1, double y2, RankTarget sign, double margin = 0.0) {
  detail::require_finite(y1, "prediction");
  detail::require_finite(y2, "prediction");
  return std::max(0.0, margin - sign.value() * (y1 - y2));
}

inline double ranking_loss(std::span<const double> y, std::span<const RankPair> pairs,
                           double margin = 0.0) {
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    if (p.index_a >= y.size() || p.index_b >= y.size())
      throw DomainError("rank pair index outside the prediction batch");
    sum += ranking_loss(y[p.index_a], y[p.index_b], p.sign, margin);
  }
  return sum / static_cast<double>(pairs.size());
}

inline double total_loss(double l_reg, double l_rank, LossWeights w) {
  if (l_reg < 0.0 || l_rank < 0.0) throw DomainError("loss terms must be non-negative");
  return l_reg + w.lambda() * l_rank;
}

struct LossEvaluation {
  double reg = 0.0;
  double rank = 0.0;
  double total = 0.0;
  std::vector<double> grad_strong;  // d total / d strong prediction
  std::vector<double> grad_weak;    // d total / d weak prediction
};

// Values and analytic gradients of the combined objective for one iteration: a
// strong batch with absolute targets and a weak batch with in-batch rank pairs.
// Either part may be empty. The hinge subgradient at the kink is 0.
inline LossEvaluation loss_gradients(std::span<const double> strong_pred,
                                     std::span<const double> strong_gt,
                                     std::span<const double> weak_pred,
                                     std::span<const RankPair> pairs, LossWeights w,
                                     double margin = 0.0) {
  LossEvaluation out;
  out.reg = regression_loss(strong_pred, strong_gt);
  out.rank = ranking_loss(weak_pred, pairs, margin);
  out.total = total_loss(out.reg, out.rank, w);

  out.grad_strong.assign(strong_pred.size(), 0.0);
  const double inv_n = strong_pred.empty() ? 0.0 : 1.0 / static_cast<double>(strong_pred.size());
  for (std::size_t i = 0; i < strong_pred.size(); ++i)
    out.grad_strong[i] = 2.0 * (strong_pred[i] - strong_gt[i]) * inv_n;

  out.grad_weak.assign(weak_pred.size(), 0.0);
  if (!pairs.empty()) {
    const double scale = w.lambda() / static_cast<double>(pairs.size());
    for (const auto& p : pairs) {
      const double s = p.sign.value();
      if (margin - s * (weak_pred[p.index_a] - weak_pred[p.index_b]) > 0.0) {
        out.grad_weak[p.index_a] -= s * scale;
        out.grad_weak[p.index_b] += s * scale;
      }
    }
  }
  return out;
}

}  // namespace floodrank
