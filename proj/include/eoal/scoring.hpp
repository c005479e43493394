#pragma once

// Per-sample query scores over the unlabeled pool: the closed-set entropy of
// the binary heads, the distance-based entropy to active-unknown cluster
// centers, and their difference.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/data.hpp"
#include "eoal/io.hpp"
#include "eoal/losses.hpp"
#include "eoal/nn.hpp"

namespace eoal::scoring {

inline constexpr double kLn2 = 0.69314718055994530942;

struct Temperature {
  double t = 1.0;

  explicit Temperature(double value = 1.0) : t(value) {
    if (!(t > 0.0)) throw ConfigError("temperature must be > 0");
  }
};

// -x ln x with 0 ln 0 = 0
inline double xlogx_neg(double x) { return x > 0.0 ? -x * std::log(x) : 0.0; }

inline double binary_entropy(double p) { return xlogx_neg(p) + xlogx_neg(1.0 - p); }

/// Mean binary entropy of the K positive probabilities, normalized to [0,1].
inline double closed_set_entropy(std::span<const double> p) {
  if (p.empty()) throw ConfigError("closed_set_entropy: no heads");
  double sum = 0.0;
  for (const double pi : p) sum += binary_entropy(std::clamp(pi, 0.0, 1.0));
  return std::clamp(sum / (static_cast<double>(p.size()) * kLn2), 0.0, 1.0);
}

/// Cluster-membership probabilities softmax(-||f - c_i|| / T).
inline Vector cluster_probs(const Eigen::Ref<const RowVector>& feature, const Matrix& centers, Temperature temp) {
  const auto k = centers.rows();
  Vector logits(k);
  for (Eigen::Index i = 0; i < k; ++i) logits(i) = -(feature - centers.row(i)).norm() / temp.t;
  const double m = logits.maxCoeff();
  Vector q = (logits.array() - m).exp().matrix();
  return q / q.sum();
}

/// Normalized entropy of the cluster-membership distribution, in [0,1].
inline double distance_entropy(const Eigen::Ref<const RowVector>& feature, const Matrix& centers, Temperature temp) {
  const auto k = centers.rows();
  if (k < 2) throw ConfigError("distance_entropy: needs at least 2 centers");
  if (centers.cols() != feature.size()) throw ConsistencyError("distance_entropy: dim mismatch");
  const Vector q = cluster_probs(feature, centers, temp);
  double h = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) h += xlogx_neg(q(i));
  return std::clamp(h / std::log(static_cast<double>(k)), 0.0, 1.0);
}

struct ScoreRecord {
  SampleId id;
  double s_c;
  double s_d;
  double s;
  int predicted_class;  // argmax of the closed-set head, 0 = open set
};

/// Scores for the unlabeled pool in id order, with the extracted features
/// kept row-aligned for the diversity clustering step.
struct ScoreTable {
  std::vector<ScoreRecord> rows;
  Matrix features;
};

struct ScoringOptions {
  bool use_s_c = true;
  bool use_s_d = true;
  // When false, closed-set entropy comes from the closed-set head's known-class
  // softmax outputs instead of the binary heads.
  bool use_bc = true;
};

/// Known-class probabilities per row: binary-head positives, or the closed-set
/// head's softmax restricted to classes 1..K.
inline Matrix known_probabilities(const nn::ModelBundle& model, const Matrix& feats, bool use_bc) {
  if (use_bc) {
    std::vector<Matrix> logits;
    for (const auto& g : model.binary) logits.push_back(nn::predict(g, feats));
    return losses::positive_probs(logits);
  }
  const Matrix probs = losses::softmax_rows(nn::predict(model.closed, feats));
  return probs.rightCols(probs.cols() - 1);
}

/// Scores every unlabeled sample. `au_centers` are the active-unknown cluster
/// centers in feature space, or null when there are no active unknowns.
inline ScoreTable score_pool(const Dataset& ds, const PoolState& pools, const nn::ModelBundle& model,
                             const Matrix* au_centers, Temperature temp, const ScoringOptions& opts = {}) {
  ScoreTable table;
  if (pools.unlabeled.empty()) return table;
  if (!pools.active_unknown.empty() && opts.use_s_d && au_centers == nullptr) {
    throw ConsistencyError("score_pool: active unknowns present but no cluster centers");
  }
  const bool with_distance = opts.use_s_d && au_centers != nullptr && au_centers->rows() >= 2;

  const Matrix x = ds.gather(pools.unlabeled);
  table.features = nn::predict(model.feature, x);
  const Matrix closed_logits = nn::predict(model.closed, table.features);
  const Matrix p = known_probabilities(model, table.features, opts.use_bc);

  table.rows.reserve(pools.unlabeled.size());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    ScoreRecord r{pools.unlabeled[static_cast<std::size_t>(i)], 0.0, 0.0, 0.0, 0};
    if (opts.use_s_c) {
      const RowVector row = p.row(i);
      r.s_c = closed_set_entropy(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    }
    if (with_distance) r.s_d = distance_entropy(table.features.row(i), *au_centers, temp);
    r.s = r.s_c - r.s_d;
    Eigen::Index arg = 0;
    closed_logits.row(i).maxCoeff(&arg);
    r.predicted_class = static_cast<int>(arg);
    table.rows.push_back(r);
  }
  return table;
}

/// `id,s_c,s_d,s,predicted_class,true_is_known`
inline std::string score_table_csv(const ScoreTable& table, const Dataset& ds, const OpenSetSplit& split) {
  std::string out = "id,s_c,s_d,s,predicted_class,true_is_known\n";
  for (const auto& r : table.rows) {
    out += std::to_string(r.id) + ',' + io::format_double(r.s_c) + ',' + io::format_double(r.s_d) + ',' +
           io::format_double(r.s) + ',' + std::to_string(r.predicted_class) + ',' +
           (split.is_known(ds.label_of(r.id)) ? "1" : "0") + '\n';
  }
  return out;
}

}  // namespace eoal::scoring
