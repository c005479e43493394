#pragma once

// First-neighbor hierarchical clustering. One level links every sample to its
// nearest neighbor and takes connected components; levels are built by
// re-running the same step on the previous level's centroids. partition_at_k
// reconciles the hierarchy with a requested cluster count.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "eoal/common.hpp"

namespace eoal::finch {

enum class Metric { euclidean, cosine };

inline Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::euclidean;
  if (name == "cosine") return Metric::cosine;
  throw ConfigError("unknown metric '" + std::string(name) + "' (expected euclidean or cosine)");
}

inline std::string_view metric_name(Metric m) { return m == Metric::euclidean ? "euclidean" : "cosine"; }

/// Per-sample labels in 0..k-1 (numbered by first appearance) and the mean
/// feature of each cluster.
struct Partition {
  std::vector<int> labels;
  int k = 0;
  Matrix centroids;

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(static_cast<std::size_t>(k), 0);
    for (const int l : labels) ++s[static_cast<std::size_t>(l)];
    return s;
  }
};

namespace detail {

// Comparable dissimilarity between rows: squared distance for euclidean,
// 1 - cos for cosine. Monotone in the true distance, so argmin is preserved.
class Dissimilarity {
 public:
  Dissimilarity(const Matrix& x, Metric metric) : x_(x), metric_(metric) {
    if (metric_ == Metric::cosine) {
      norms_ = x.rowwise().norm();
      for (Eigen::Index i = 0; i < norms_.size(); ++i) norms_(i) = std::max(norms_(i), 1e-12);
    }
  }

  double operator()(Eigen::Index i, Eigen::Index j) const {
    const double* a = x_.data() + i * x_.cols();
    const double* b = x_.data() + j * x_.cols();
    double acc = 0.0;
    if (metric_ == Metric::euclidean) {
      for (Eigen::Index t = 0; t < x_.cols(); ++t) {
        const double d = a[t] - b[t];
        acc += d * d;
      }
      return acc;
    }
    for (Eigen::Index t = 0; t < x_.cols(); ++t) acc += a[t] * b[t];
    return 1.0 - acc / (norms_(i) * norms_(j));
  }

 private:
  const Matrix& x_;
  Metric metric_;
  Vector norms_;
};

inline double distance(const Eigen::Ref<const RowVector>& a, const Eigen::Ref<const RowVector>& b, Metric metric) {
  if (metric == Metric::euclidean) return (a - b).norm();
  const double na = std::max(a.norm(), 1e-12);
  const double nb = std::max(b.norm(), 1e-12);
  return 1.0 - a.dot(b) / (na * nb);
}

struct UnionFind {
  std::vector<std::size_t> parent;

  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

// Renumbers non-negative keys to 0..k-1 by order of first appearance.
inline std::vector<int> canonical_labels(const std::vector<int>& keys, int* k_out) {
  std::vector<int> map(keys.empty() ? 0 : static_cast<std::size_t>(*std::max_element(keys.begin(), keys.end()) + 1), -1);
  std::vector<int> labels(keys.size());
  int next = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto& slot = map[static_cast<std::size_t>(keys[i])];
    if (slot < 0) slot = next++;
    labels[i] = slot;
  }
  *k_out = next;
  return labels;
}

}  // namespace detail

/// Cluster means for the given labels.
inline Matrix compute_centroids(const Matrix& x, const std::vector<int>& labels, int k) {
  Matrix c = Matrix::Zero(k, x.cols());
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    c.row(labels[i]) += x.row(static_cast<Eigen::Index>(i));
    counts[static_cast<std::size_t>(labels[i])] += 1.0;
  }
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] == 0.0) throw ConsistencyError("compute_centroids: empty cluster");
    c.row(j) /= counts[static_cast<std::size_t>(j)];
  }
  return c;
}

inline Partition make_partition(const Matrix& x, const std::vector<int>& raw_labels) {
  Partition p;
  p.labels = detail::canonical_labels(raw_labels, &p.k);
  p.centroids = compute_centroids(x, p.labels, p.k);
  return p;
}

/// Index of each row's nearest other row; ties go to the smaller index.
inline std::vector<std::size_t> first_neighbors(const Matrix& x, Metric metric = Metric::euclidean) {
  const auto n = x.rows();
  if (n < 2) throw ConfigError("first_neighbors: need at least 2 samples");
  const detail::Dissimilarity d(x, metric);
  std::vector<std::size_t> nn(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = -1;
    double best_d = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dij = d(i, j);
      if (best < 0 || dij < best_d) {
        best = j;
        best_d = dij;
      }
    }
    nn[static_cast<std::size_t>(i)] = static_cast<std::size_t>(best);
  }
  return nn;
}

/// One linkage level: connected components of the first-neighbor graph.
/// Linking each sample to its first neighbor already connects every pair
/// sharing a neighbor, so the i -> nn(i) edges suffice.
inline Partition finch_partition(const Matrix& x, Metric metric = Metric::euclidean) {
  const auto nn = first_neighbors(x, metric);
  detail::UnionFind uf(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) uf.unite(i, nn[i]);
  std::vector<int> roots(nn.size());
  for (std::size_t i = 0; i < nn.size(); ++i) roots[i] = static_cast<int>(uf.find(i));
  return make_partition(x, roots);
}

/// Successively coarser partitions with strictly decreasing k. Each level
/// clusters the previous level's centroids; labels are composed back onto the
/// original rows and centroids are means of the original rows.
inline std::vector<Partition> finch_hierarchy(const Matrix& x, Metric metric = Metric::euclidean) {
  std::vector<Partition> levels;
  levels.push_back(finch_partition(x, metric));
  while (levels.back().k > 1) {
    const auto& prev = levels.back();
    const auto coarse = finch_partition(prev.centroids, metric);
    if (coarse.k >= prev.k) break;
    std::vector<int> composed(prev.labels.size());
    for (std::size_t i = 0; i < composed.size(); ++i) {
      composed[i] = coarse.labels[static_cast<std::size_t>(prev.labels[i])];
    }
    levels.push_back(make_partition(x, composed));
  }
  return levels;
}

namespace detail {

// Greedily merges the two clusters with the closest centroids until k == target.
// Ties go to the lexicographically smallest (i, j) pair; the merged cluster
// keeps the smaller label.
inline Partition merge_down(const Matrix& x, Partition p, int target, Metric metric) {
  std::vector<std::size_t> sizes = p.sizes();
  while (p.k > target) {
    int bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < p.k; ++i) {
      for (int j = i + 1; j < p.k; ++j) {
        const double d = distance(p.centroids.row(i), p.centroids.row(j), metric);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    const auto wi = static_cast<double>(sizes[static_cast<std::size_t>(bi)]);
    const auto wj = static_cast<double>(sizes[static_cast<std::size_t>(bj)]);
    p.centroids.row(bi) = (wi * p.centroids.row(bi) + wj * p.centroids.row(bj)) / (wi + wj);
    sizes[static_cast<std::size_t>(bi)] += sizes[static_cast<std::size_t>(bj)];
    for (auto& l : p.labels) {
      if (l == bj) l = bi;
      else if (l > bj) --l;
    }
    sizes.erase(sizes.begin() + bj);
    Matrix c(p.k - 1, p.centroids.cols());
    c.topRows(bj) = p.centroids.topRows(bj);
    c.bottomRows(p.k - 1 - bj) = p.centroids.bottomRows(p.k - 1 - bj);
    p.centroids = std::move(c);
    --p.k;
  }
  // Exact means after merging, in first-appearance order.
  return make_partition(x, p.labels);
}

}  // namespace detail

/// A partition with exactly `k` non-empty clusters. Uses the coarsest
/// hierarchy level with at least k clusters and merges closest centroids down
/// to k; if every level is too coarse, repeatedly splits the largest cluster
/// (by its own first-neighbor partition, or into singletons when that does
/// not divide it) and merges back if a split overshoots.
inline Partition partition_at_k(const Matrix& x, int k, Metric metric = Metric::euclidean) {
  const auto n = static_cast<int>(x.rows());
  if (k < 1) throw ConfigError("partition_at_k: k must be >= 1");
  if (k > n) {
    throw ConfigError("partition_at_k: k = " + std::to_string(k) + " exceeds sample count " + std::to_string(n));
  }
  if (k == n) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    std::iota(labels.begin(), labels.end(), 0);
    return make_partition(x, labels);
  }
  if (k == 1) return make_partition(x, std::vector<int>(static_cast<std::size_t>(n), 0));

  const auto levels = finch_hierarchy(x, metric);
  const Partition* chosen = nullptr;
  for (const auto& level : levels) {
    if (level.k >= k && (chosen == nullptr || level.k < chosen->k)) chosen = &level;
  }
  if (chosen != nullptr) return detail::merge_down(x, *chosen, k, metric);

  Partition p = levels.front();
  while (p.k < k) {
    const auto sizes = p.sizes();
    const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    std::vector<Eigen::Index> members;
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (p.labels[i] == largest) members.push_back(static_cast<Eigen::Index>(i));
    }
    Matrix sub(static_cast<Eigen::Index>(members.size()), x.cols());
    for (std::size_t i = 0; i < members.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = x.row(members[i]);
    std::vector<int> sub_labels(members.size());
    const auto sub_part = finch_partition(sub, metric);
    if (sub_part.k >= 2) {
      sub_labels = sub_part.labels;
    } else {
      std::iota(sub_labels.begin(), sub_labels.end(), 0);
    }
    std::vector<int> raw = p.labels;
    for (std::size_t i = 0; i < members.size(); ++i) {
      raw[static_cast<std::size_t>(members[i])] = sub_labels[i] == 0 ? largest : p.k + sub_labels[i] - 1;
    }
    p = make_partition(x, raw);
  }
  if (p.k > k) p = detail::merge_down(x, std::move(p), k, metric);
  return p;
}

}  // namespace eoal::finch
