#pragma once

// Query strategies. Each returns min(b, |pool|) distinct ids from the
// unlabeled pool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/finch.hpp"
#include "eoal/scoring.hpp"

namespace eoal::samplers {

enum class Strategy { eoal, random, entropy, certainty, coreset };

inline Strategy parse_strategy(std::string_view name) {
  if (name == "eoal") return Strategy::eoal;
  if (name == "random") return Strategy::random;
  if (name == "entropy") return Strategy::entropy;
  if (name == "certainty") return Strategy::certainty;
  if (name == "coreset") return Strategy::coreset;
  throw ConfigError("unknown strategy '" + std::string(name) +
                    "' (expected eoal, random, entropy, certainty or coreset)");
}

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::eoal: return "eoal";
    case Strategy::random: return "random";
    case Strategy::entropy: return "entropy";
    case Strategy::certainty: return "certainty";
    case Strategy::coreset: return "coreset";
  }
  return "?";
}

enum class ClusterDomain { predicted_known, all_unlabeled };

inline ClusterDomain parse_cluster_domain(std::string_view name) {
  if (name == "predicted_known") return ClusterDomain::predicted_known;
  if (name == "all_unlabeled") return ClusterDomain::all_unlabeled;
  throw ConfigError("unknown cluster_domain '" + std::string(name) + "'");
}

inline std::string_view cluster_domain_name(ClusterDomain d) {
  return d == ClusterDomain::predicted_known ? "predicted_known" : "all_unlabeled";
}

struct QueryResult {
  std::vector<SampleId> selected_ids;
  std::vector<std::size_t> per_cluster_counts;  // eoal only
};

struct EoalQueryOptions {
  bool use_diversity = true;
  // Pick uniformly at random inside each cluster instead of by lowest score.
  bool diversity_only = false;
  ClusterDomain domain = ClusterDomain::predicted_known;
  finch::Metric metric = finch::Metric::euclidean;
  std::uint64_t seed = 0;
};

/// Lowest combined score first, spread over K feature-space clusters of the
/// pool samples the closed-set head assigns to a known class.
///
/// Each cluster gets floor(b/K) picks, the remainder going one each to the
/// largest clusters. Quota a cluster cannot fill spills to the lowest-score
/// unselected clustered samples; if fewer than b samples were clustered at
/// all, the rest of the pool fills in by ascending score.
inline QueryResult eoal_query(const scoring::ScoreTable& table, int b, int num_known,
                              const EoalQueryOptions& opts = {}) {
  const auto& rows = table.rows;
  if (rows.empty()) throw ConfigError("eoal_query: unlabeled pool is empty");
  if (b < 1) throw ConfigError("eoal_query: budget must be >= 1");
  if (num_known < 1) throw ConfigError("eoal_query: K must be >= 1");
  if (table.features.rows() != static_cast<Eigen::Index>(rows.size())) {
    throw ConsistencyError("eoal_query: cached features do not match the score table");
  }
  const std::size_t budget = std::min(static_cast<std::size_t>(b), rows.size());

  auto by_score = [&](std::size_t a, std::size_t c) {
    if (rows[a].s != rows[c].s) return rows[a].s < rows[c].s;
    return rows[a].id < rows[c].id;
  };

  QueryResult out;
  std::vector<char> taken(rows.size(), 0);
  auto take = [&](std::size_t i) {
    taken[i] = 1;
    out.selected_ids.push_back(rows[i].id);
  };
  auto fill_from = [&](std::vector<std::size_t> candidates) {
    std::sort(candidates.begin(), candidates.end(), by_score);
    for (const auto i : candidates) {
      if (out.selected_ids.size() >= budget) break;
      if (!taken[i]) take(i);
    }
  };

  std::vector<std::size_t> all(rows.size());
  std::iota(all.begin(), all.end(), 0);
  if (!opts.use_diversity) {
    fill_from(all);
    return out;
  }

  std::vector<std::size_t> domain;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int pc = rows[i].predicted_class;
    if (opts.domain == ClusterDomain::all_unlabeled || (pc >= 1 && pc <= num_known)) domain.push_back(i);
  }

  Rng rng(opts.seed);
  if (domain.size() > budget) {
    const int k = std::min(num_known, static_cast<int>(domain.size()));
    Matrix feats(static_cast<Eigen::Index>(domain.size()), table.features.cols());
    for (std::size_t i = 0; i < domain.size(); ++i) {
      feats.row(static_cast<Eigen::Index>(i)) = table.features.row(static_cast<Eigen::Index>(domain[i]));
    }
    const auto part = finch::partition_at_k(feats, k, opts.metric);
    std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < domain.size(); ++i) members[static_cast<std::size_t>(part.labels[i])].push_back(domain[i]);

    std::vector<std::size_t> quota(static_cast<std::size_t>(k), budget / static_cast<std::size_t>(k));
    std::vector<std::size_t> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t c) { return members[a].size() > members[c].size(); });
    for (std::size_t r = 0; r < budget % static_cast<std::size_t>(k); ++r) ++quota[order[r]];

    out.per_cluster_counts.assign(static_cast<std::size_t>(k), 0);
    for (std::size_t c = 0; c < members.size(); ++c) {
      auto& m = members[c];
      if (opts.diversity_only) {
        shuffle_in_place(m, rng);
      } else {
        std::sort(m.begin(), m.end(), by_score);
      }
      const auto n_take = std::min(quota[c], m.size());
      for (std::size_t t = 0; t < n_take; ++t) take(m[t]);
      out.per_cluster_counts[c] = n_take;
    }
    if (opts.diversity_only) {
      std::vector<std::size_t> rest;
      for (const auto i : domain) {
        if (!taken[i]) rest.push_back(i);
      }
      shuffle_in_place(rest, rng);
      for (const auto i : rest) {
        if (out.selected_ids.size() >= budget) break;
        take(i);
      }
    }
    fill_from(domain);
  } else {
    for (const auto i : domain) take(i);
  }
  fill_from(all);
  return out;
}

/// Uniform sample without replacement.
inline QueryResult random_query(std::vector<SampleId> unlabeled_ids, int b, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t budget = std::min(static_cast<std::size_t>(std::max(b, 0)), unlabeled_ids.size());
  for (std::size_t i = 0; i < budget; ++i) {
    std::swap(unlabeled_ids[i], unlabeled_ids[i + uniform_index(rng, unlabeled_ids.size() - i)]);
  }
  unlabeled_ids.resize(budget);
  return {std::move(unlabeled_ids), {}};
}

namespace detail {

// Top-b rows by descending key, ties to the lower id.
inline QueryResult top_by_key(const std::vector<double>& key, const std::vector<SampleId>& ids, int b) {
  if (key.size() != ids.size()) throw ConsistencyError("query: scores and ids differ in length");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
    if (key[a] != key[c]) return key[a] > key[c];
    return ids[a] < ids[c];
  });
  const std::size_t budget = std::min(static_cast<std::size_t>(std::max(b, 0)), ids.size());
  QueryResult out;
  for (std::size_t i = 0; i < budget; ++i) out.selected_ids.push_back(ids[order[i]]);
  return out;
}

}  // namespace detail

/// Highest predictive (Shannon) entropy first. `probs` is n x K softmax output.
inline QueryResult entropy_query(const Matrix& probs, const std::vector<SampleId>& ids, int b) {
  std::vector<double> h(ids.size(), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    for (Eigen::Index j = 0; j < probs.cols(); ++j) h[static_cast<std::size_t>(i)] += scoring::xlogx_neg(probs(i, j));
  }
  return detail::top_by_key(h, ids, b);
}

/// Highest max-class probability first.
inline QueryResult certainty_query(const Matrix& probs, const std::vector<SampleId>& ids, int b) {
  std::vector<double> conf(ids.size(), 0.0);
  for (Eigen::Index i = 0; i < probs.rows(); ++i) conf[static_cast<std::size_t>(i)] = probs.row(i).maxCoeff();
  return detail::top_by_key(conf, ids, b);
}

/// Greedy k-center: repeatedly take the unlabeled point farthest from every
/// labeled or already selected point.
inline QueryResult coreset_query(const Matrix& labeled_features, const Matrix& unlabeled_features,
                                 const std::vector<SampleId>& unlabeled_ids, int b) {
  if (labeled_features.rows() == 0) throw ConfigError("coreset_query: labeled set is empty");
  if (unlabeled_features.rows() != static_cast<Eigen::Index>(unlabeled_ids.size())) {
    throw ConsistencyError("coreset_query: features and ids differ in length");
  }
  const auto n = unlabeled_features.rows();
  Vector min_dist(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < labeled_features.rows(); ++j) {
      best = std::min(best, (unlabeled_features.row(i) - labeled_features.row(j)).norm());
    }
    min_dist(i) = best;
  }
  const std::size_t budget = std::min(static_cast<std::size_t>(std::max(b, 0)), unlabeled_ids.size());
  QueryResult out;
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  for (std::size_t step = 0; step < budget; ++step) {
    Eigen::Index pick = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (chosen[static_cast<std::size_t>(i)]) continue;
      if (pick < 0 || min_dist(i) > min_dist(pick) ||
          (min_dist(i) == min_dist(pick) && unlabeled_ids[static_cast<std::size_t>(i)] < unlabeled_ids[static_cast<std::size_t>(pick)])) {
        pick = i;
      }
    }
    chosen[static_cast<std::size_t>(pick)] = 1;
    out.selected_ids.push_back(unlabeled_ids[static_cast<std::size_t>(pick)]);
    for (Eigen::Index i = 0; i < n; ++i) {
      min_dist(i) = std::min(min_dist(i), (unlabeled_features.row(i) - unlabeled_features.row(pick)).norm());
    }
  }
  return out;
}

}  // namespace eoal::samplers
