#pragma once

// Training objectives with exact gradients with respect to their inputs:
// cross-entropy, hardest-negative one-vs-all BCE, entropy maximization on
// active unknowns, the tuplet loss to active-unknown cluster centers, and the
// combined objective backpropagated through the whole model bundle.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/nn.hpp"

namespace eoal::losses {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kDistanceEps = 1e-12;

/// A scalar loss and its gradient with respect to the loss's own input.
struct LossValue {
  double value = 0.0;
  Matrix grad;
};

struct LossWeights {
  double lambda = 0.1;  // on the tuplet term
  double beta = 0.1;    // on the own-center distance inside the tuplet term
};

namespace detail {

inline double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

// d clamp(p) / dp
inline double clamp_slope(double p) { return (p >= kProbFloor && p <= 1.0 - kProbFloor) ? 1.0 : 0.0; }

}  // namespace detail

/// Row-wise softmax with max subtraction.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Mean negative log-likelihood of the true label; labels in 0..cols-1.
inline LossValue ce_loss(const Matrix& logits, std::span<const int> labels) {
  const auto n = logits.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ConsistencyError("ce_loss: batch/label mismatch");
  LossValue lv{0.0, softmax_rows(logits)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= logits.cols()) throw ConsistencyError("ce_loss: label " + std::to_string(y) + " out of range");
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    lv.value += lse - logits(i, y);
    lv.grad(i, y) -= 1.0;
  }
  lv.value /= static_cast<double>(n);
  lv.grad /= static_cast<double>(n);
  return lv;
}

/// p^i = softmax(G_i(f))[1] for each binary head, as an n x K matrix.
inline Matrix positive_probs(const std::vector<Matrix>& head_logits) {
  if (head_logits.empty()) throw ConsistencyError("positive_probs: no heads");
  Matrix p(head_logits.front().rows(), static_cast<Eigen::Index>(head_logits.size()));
  for (std::size_t k = 0; k < head_logits.size(); ++k) {
    const auto& z = head_logits[k];
    if (z.cols() != 2) throw ConsistencyError("positive_probs: binary heads must emit 2 logits");
    p.col(static_cast<Eigen::Index>(k)) = (1.0 / (1.0 + (z.col(0) - z.col(1)).array().exp())).matrix();
  }
  return p;
}

/// Chains dL/dp back to each head's two logits.
inline std::vector<Matrix> positive_probs_backward(const Matrix& p, const Matrix& grad_p) {
  std::vector<Matrix> out;
  for (Eigen::Index k = 0; k < p.cols(); ++k) {
    Matrix g(p.rows(), 2);
    const auto slope = (p.col(k).array() * (1.0 - p.col(k).array())).matrix();
    g.col(1) = grad_p.col(k).cwiseProduct(slope);
    g.col(0) = -g.col(1);
    out.push_back(std::move(g));
  }
  return out;
}

/// Index of the hardest negative head for a sample with label y (1..K):
/// the largest p^j over j != y, lowest index on ties. Returned 0-based.
inline Eigen::Index hardest_negative(const Eigen::Ref<const RowVector>& p, int y) {
  Eigen::Index best = -1;
  for (Eigen::Index j = 0; j < p.size(); ++j) {
    if (j == y - 1) continue;
    if (best < 0 || p(j) > p(best)) best = j;
  }
  return best;
}

/// One-vs-all BCE that only pushes the positive head and the hardest negative
/// head of each sample. p is n x K, labels in 1..K.
inline LossValue bce_ova_loss(const Matrix& p, std::span<const int> labels) {
  const auto n = p.rows();
  const auto k = p.cols();
  if (k < 2) throw ConfigError("bce_ova_loss: needs K >= 2 heads");
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ConsistencyError("bce_ova_loss: batch/label mismatch");
  LossValue lv{0.0, Matrix::Zero(n, k)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 1 || y > k) throw ConsistencyError("bce_ova_loss: label " + std::to_string(y) + " out of range");
    const double pos = p(i, y - 1);
    const auto neg = hardest_negative(p.row(i), y);
    const double pneg = p(i, neg);
    lv.value -= std::log(detail::clamp_prob(pos)) + std::log(1.0 - detail::clamp_prob(pneg));
    lv.grad(i, y - 1) = -inv_n * detail::clamp_slope(pos) / detail::clamp_prob(pos);
    lv.grad(i, neg) = inv_n * detail::clamp_slope(pneg) / (1.0 - detail::clamp_prob(pneg));
  }
  lv.value *= inv_n;
  return lv;
}

/// Averaged half-weighted binary log-loss against p = 1/2 on every head;
/// bounded below by ln 2 with equality iff every p^i is exactly 1/2.
inline LossValue em_loss(const Matrix& p) {
  const auto n = p.rows();
  const auto k = p.cols();
  if (n == 0 || k == 0) throw ConsistencyError("em_loss: empty batch");
  const double scale = 1.0 / (static_cast<double>(k) * static_cast<double>(n));
  LossValue lv{0.0, Matrix(n, k)};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double pc = detail::clamp_prob(p(i, j));
      lv.value += -0.5 * std::log(pc) - 0.5 * std::log(1.0 - pc);
      lv.grad(i, j) = scale * detail::clamp_slope(p(i, j)) * (-0.5 / pc + 0.5 / (1.0 - pc));
    }
  }
  lv.value *= scale;
  return lv;
}

/// Pulls each feature toward its cluster center and away from the others:
/// mean over rows of log(1 + sum_{j != y} exp(D_y - D_j)) + beta D_y,
/// D_i = ||f - c_i||. Cluster labels are 0-based rows of `centers`, which are
/// treated as constants.
inline LossValue tuplet_loss(const Matrix& features, std::span<const int> clusters, const Matrix& centers,
                             double beta) {
  const auto n = features.rows();
  const auto k = centers.rows();
  if (k < 2) throw ConfigError("tuplet_loss: needs K >= 2 centers");
  if (centers.cols() != features.cols()) throw ConsistencyError("tuplet_loss: feature/center dim mismatch");
  if (n == 0 || static_cast<std::size_t>(n) != clusters.size()) throw ConsistencyError("tuplet_loss: batch/label mismatch");
  LossValue lv{0.0, Matrix::Zero(n, features.cols())};
  const double inv_n = 1.0 / static_cast<double>(n);
  Vector dist(k);
  Matrix diff(k, features.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = clusters[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ConsistencyError("tuplet_loss: cluster label out of range");
    for (Eigen::Index c = 0; c < k; ++c) {
      diff.row(c) = features.row(i) - centers.row(c);
      dist(c) = diff.row(c).norm();
    }
    // log(1 + s) as a log-sum-exp over {0} and {D_y - D_j}
    double m = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j != y) m = std::max(m, dist(y) - dist(j));
    }
    double denom = std::exp(-m);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j != y) denom += std::exp(dist(y) - dist(j) - m);
    }
    lv.value += m + std::log(denom) + beta * dist(y);

    // d/dD_y = s/(1+s) + beta, d/dD_j = -e^{D_y-D_j}/(1+s)
    Vector d_dist = Vector::Zero(k);
    for (Eigen::Index j = 0; j < k; ++j) {
      if (j == y) continue;
      const double w = std::exp(dist(y) - dist(j) - m) / denom;
      d_dist(j) = -w;
      d_dist(y) += w;
    }
    d_dist(y) += beta;
    for (Eigen::Index c = 0; c < k; ++c) {
      lv.grad.row(i) += inv_n * d_dist(c) / std::max(dist(c), kDistanceEps) * diff.row(c);
    }
  }
  lv.value *= inv_n;
  return lv;
}

/// Which terms of the combined objective are active. The ablations switch
/// these off; the default is the full objective.
struct LossTerms {
  bool bce = true;
  bool em = true;
  bool tuplet = true;
};

/// Active-unknown cluster assignment: 0-based cluster per row plus centers.
struct ClusterTargets {
  std::vector<int> labels;
  Matrix centers;
};

struct TotalLoss {
  double value = 0.0;
  double ce = 0.0;
  double bce = 0.0;
  double em = 0.0;
  double tuplet = 0.0;
  nn::ModelBundle grad;
};

/// The combined objective on one mini-batch. Cross-entropy covers labeled and
/// active-unknown rows (the latter with label 0); BCE covers labeled rows;
/// entropy maximization and the tuplet term cover active-unknown rows and are
/// only present when that part of the batch is non-empty. All gradients are
/// accumulated into the returned bundle-shaped gradient.
inline TotalLoss total_loss(const nn::ModelBundle& model, const Matrix& x_labeled, std::span<const int> y_labeled,
                            const Matrix& x_unknown, const ClusterTargets* targets, const LossWeights& weights,
                            const LossTerms& terms = {}) {
  const auto n_l = x_labeled.rows();
  const auto n_au = x_unknown.rows();
  if (static_cast<std::size_t>(n_l) != y_labeled.size()) throw ConsistencyError("total_loss: labeled batch mismatch");
  if (n_l + n_au == 0) throw ConsistencyError("total_loss: empty batch");
  const bool use_tuplet = terms.tuplet && n_au > 0 && weights.lambda != 0.0;
  if (use_tuplet && (targets == nullptr || static_cast<Eigen::Index>(targets->labels.size()) != n_au)) {
    throw ConsistencyError("total_loss: active unknowns present but cluster centers missing");
  }
  const auto cols = n_l > 0 ? x_labeled.cols() : x_unknown.cols();
  Matrix x(n_l + n_au, cols);
  if (n_l > 0) x.topRows(n_l) = x_labeled;
  if (n_au > 0) x.bottomRows(n_au) = x_unknown;

  const auto feat_act = nn::forward(model.feature, x);
  const Matrix& feats = feat_act.output();
  Matrix grad_feats = Matrix::Zero(feats.rows(), feats.cols());

  TotalLoss out;
  out.grad = model.zeros_like();

  {
    std::vector<int> labels(y_labeled.begin(), y_labeled.end());
    labels.resize(static_cast<std::size_t>(n_l + n_au), 0);
    const auto act = nn::forward(model.closed, feats);
    const auto ce = ce_loss(act.output(), labels);
    auto g = nn::backward(model.closed, act, ce.grad);
    out.ce = ce.value;
    out.grad.closed += g.params;
    grad_feats += g.input;
  }

  const bool use_bce = terms.bce && n_l > 0;
  const bool use_em = terms.em && n_au > 0;
  if (use_bce || use_em) {
    const auto k = model.binary.size();
    std::vector<nn::Activations> acts;
    std::vector<Matrix> logits;
    for (std::size_t h = 0; h < k; ++h) {
      acts.push_back(nn::forward(model.binary[h], feats));
      logits.push_back(acts.back().output());
    }
    const Matrix p = positive_probs(logits);
    Matrix grad_p = Matrix::Zero(p.rows(), p.cols());
    if (use_bce) {
      const auto bce = bce_ova_loss(p.topRows(n_l), y_labeled);
      out.bce = bce.value;
      grad_p.topRows(n_l) += bce.grad;
    }
    if (use_em) {
      const auto em = em_loss(p.bottomRows(n_au));
      out.em = em.value;
      grad_p.bottomRows(n_au) += em.grad;
    }
    const auto grad_logits = positive_probs_backward(p, grad_p);
    for (std::size_t h = 0; h < k; ++h) {
      auto g = nn::backward(model.binary[h], acts[h], grad_logits[h]);
      out.grad.binary[h] += g.params;
      grad_feats += g.input;
    }
  }

  if (use_tuplet) {
    const auto t = tuplet_loss(feats.bottomRows(n_au), targets->labels, targets->centers, weights.beta);
    out.tuplet = t.value;
    grad_feats.bottomRows(n_au) += weights.lambda * t.grad;
  }

  out.value = out.ce + out.bce + out.em + (use_tuplet ? weights.lambda * out.tuplet : 0.0);
  if (!std::isfinite(out.value)) throw DivergenceError("total_loss: non-finite loss");
  out.grad.feature += nn::backward(model.feature, feat_act, grad_feats).params;
  return out;
}

}  // namespace eoal::losses
