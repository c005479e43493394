#pragma once

// Datasets, open-set class splits and the four-way sample pool partition
// (labeled knowns, active unknowns, unlabeled pool, frozen test set).

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "eoal/common.hpp"
#include "eoal/io.hpp"

namespace eoal {

/// A feature matrix with one id and one original class label per row.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<SampleId> ids, std::vector<int> labels, Matrix features)
      : ids_(std::move(ids)), labels_(std::move(labels)), features_(std::move(features)) {
    if (ids_.size() != labels_.size() || static_cast<Eigen::Index>(ids_.size()) != features_.rows()) {
      throw ConsistencyError("dataset: ids, labels and feature rows differ in length");
    }
    if (!features_.allFinite()) throw ConfigError("dataset: non-finite feature value");
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i] < 0) throw ConfigError("dataset: negative sample id " + std::to_string(ids_[i]));
      if (!index_.emplace(ids_[i], i).second) {
        throw ConfigError("dataset: duplicate sample id " + std::to_string(ids_[i]));
      }
    }
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }

  const std::vector<SampleId>& ids() const { return ids_; }
  const std::vector<int>& labels() const { return labels_; }
  const Matrix& features() const { return features_; }

  bool contains(SampleId id) const { return index_.count(id) != 0; }

  std::size_t row_of(SampleId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ConsistencyError("unknown sample id " + std::to_string(id));
    return it->second;
  }

  int label_of(SampleId id) const { return labels_[row_of(id)]; }

  // Sorted distinct class labels.
  std::vector<int> classes() const {
    std::set<int> s(labels_.begin(), labels_.end());
    return {s.begin(), s.end()};
  }

  // Feature rows for the given ids, in the given order.
  Matrix gather(const std::vector<SampleId>& ids) const {
    Matrix out(static_cast<Eigen::Index>(ids.size()), features_.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.row(static_cast<Eigen::Index>(i)) = features_.row(static_cast<Eigen::Index>(row_of(ids[i])));
    }
    return out;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.ids_ == b.ids_ && a.labels_ == b.labels_ && a.features_.rows() == b.features_.rows() &&
           a.features_.cols() == b.features_.cols() && a.features_ == b.features_;
  }

 private:
  std::vector<SampleId> ids_;
  std::vector<int> labels_;
  Matrix features_;
  std::unordered_map<SampleId, std::size_t> index_;
};

/// Isotropic Gaussian blobs around class means drawn uniformly on a sphere.
/// Labels are 1..n_classes, ids are 0..n-1 in class-major order.
inline Dataset generate_blobs(int n_classes, int per_class, int dim, double radius, double sigma,
                              std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("generate_blobs: n_classes must be >= 2");
  if (per_class < 1) throw ConfigError("generate_blobs: per_class must be >= 1");
  if (dim < 2) throw ConfigError("generate_blobs: dim must be >= 2");
  if (!(radius > 0.0)) throw ConfigError("generate_blobs: radius must be > 0");
  if (!(sigma >= 0.0)) throw ConfigError("generate_blobs: sigma must be >= 0");

  Rng rng(seed);
  Matrix means(n_classes, dim);
  for (int c = 0; c < n_classes; ++c) {
    RowVector v(dim);
    double norm = 0.0;
    do {
      for (int j = 0; j < dim; ++j) v(j) = standard_normal(rng);
      norm = v.norm();
    } while (norm < 1e-12);
    means.row(c) = v * (radius / norm);
  }

  const std::size_t n = static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(per_class);
  std::vector<SampleId> ids(n);
  std::vector<int> labels(n);
  Matrix features(static_cast<Eigen::Index>(n), dim);
  std::size_t row = 0;
  for (int c = 0; c < n_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      ids[row] = static_cast<SampleId>(row);
      labels[row] = c + 1;
      for (int j = 0; j < dim; ++j) {
        features(static_cast<Eigen::Index>(row), j) = means(c, j) + sigma * standard_normal(rng);
      }
    }
  }
  return Dataset(std::move(ids), std::move(labels), std::move(features));
}

/// Per-feature zero mean and unit variance over all rows. Uses no labels.
/// Constant features are only centered.
inline Dataset standardize(const Dataset& ds) {
  Matrix x = ds.features();
  if (x.rows() == 0) return ds;
  const RowVector mean = x.colwise().mean();
  x.rowwise() -= mean;
  const RowVector sd = (x.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt().matrix();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (sd(j) > 1e-12) x.col(j) /= sd(j);
  }
  return Dataset(ds.ids(), ds.labels(), std::move(x));
}

/// Parses the `id,label,f1,...,fd` format. Errors name the 1-based line.
inline Dataset parse_csv(std::string_view text) {
  const auto lines = io::read_lines(text);
  if (lines.empty()) throw ParseError("csv: empty input, expected header id,label,f1,...");
  const auto header = io::split_line(lines[0]);
  if (header.size() < 3 || header[0] != "id" || header[1] != "label") {
    throw ParseError("csv line 1: header must be id,label,f1,...,fd");
  }
  const std::size_t d = header.size() - 2;

  std::vector<SampleId> ids;
  std::vector<int> labels;
  std::vector<double> values;
  std::unordered_map<SampleId, std::size_t> seen;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto where = "csv line " + std::to_string(ln + 1) + ": ";
    const auto fields = io::split_line(lines[ln]);
    if (fields.size() != d + 2) {
      throw ParseError(where + "expected " + std::to_string(d + 2) + " fields, got " +
                       std::to_string(fields.size()));
    }
    auto parse_int = [&](const std::string& f, auto& out, const char* what) {
      const auto* end = f.data() + f.size();
      const auto res = std::from_chars(f.data(), end, out);
      if (res.ec != std::errc() || res.ptr != end) throw ParseError(where + "non-numeric " + what + " '" + f + "'");
    };
    SampleId id = 0;
    int label = 0;
    parse_int(fields[0], id, "id");
    parse_int(fields[1], label, "label");
    if (id < 0) throw ParseError(where + "negative id");
    if (!seen.emplace(id, ln).second) throw ParseError(where + "duplicate id " + fields[0]);
    for (std::size_t j = 0; j < d; ++j) {
      const auto& f = fields[j + 2];
      double v = 0.0;
      const auto* end = f.data() + f.size();
      const auto res = std::from_chars(f.data(), end, v);
      if (f.empty() || res.ec != std::errc() || res.ptr != end) {
        throw ParseError(where + "non-numeric feature '" + f + "'");
      }
      if (!std::isfinite(v)) throw ParseError(where + "non-finite feature '" + f + "'");
      values.push_back(v);
    }
    ids.push_back(id);
    labels.push_back(label);
  }
  Matrix features = Eigen::Map<const Matrix>(values.data(), static_cast<Eigen::Index>(ids.size()),
                                             static_cast<Eigen::Index>(d));
  return Dataset(std::move(ids), std::move(labels), std::move(features));
}

inline Dataset load_csv(const std::filesystem::path& path) { return parse_csv(io::read_file(path)); }

inline std::string to_csv(const Dataset& ds) {
  std::string out = "id,label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out += ",f" + std::to_string(j + 1);
  out += '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out += std::to_string(ds.ids()[i]) + ',' + std::to_string(ds.labels()[i]);
    for (std::size_t j = 0; j < ds.dim(); ++j) {
      out += ',' + io::format_double(ds.features()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
    }
    out += '\n';
  }
  return out;
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, to_csv(ds));
}

/// Which original classes are known, with their contiguous 1..K relabeling.
/// The open-set label is 0.
struct OpenSetSplit {
  static constexpr int open_set_label = 0;

  std::vector<int> known_classes;    // ascending
  std::vector<int> unknown_classes;  // ascending
  std::map<int, int> remap;          // original id -> 1..K

  int num_known() const { return static_cast<int>(known_classes.size()); }

  double mismatch_ratio() const {
    return static_cast<double>(known_classes.size()) /
           static_cast<double>(known_classes.size() + unknown_classes.size());
  }

  bool is_known(int original_class) const { return remap.count(original_class) != 0; }

  int remap_label(int original_class) const {
    const auto it = remap.find(original_class);
    if (it == remap.end()) throw ConsistencyError("class " + std::to_string(original_class) + " is not known");
    return it->second;
  }

  friend bool operator==(const OpenSetSplit&, const OpenSetSplit&) = default;
};

inline OpenSetSplit make_split(const Dataset& ds, double mismatch_ratio, std::uint64_t seed) {
  auto classes = ds.classes();
  const auto total = static_cast<double>(classes.size());
  const double exact = mismatch_ratio * total;
  const auto k = static_cast<std::size_t>(std::llround(exact));
  if (!(mismatch_ratio > 0.0 && mismatch_ratio < 1.0) || std::abs(exact - static_cast<double>(k)) > 1e-6) {
    throw ConfigError("make_split: mismatch ratio " + io::format_double(mismatch_ratio) +
                      " does not give an integer known-class count over " + std::to_string(classes.size()) +
                      " classes");
  }
  if (k < 2) throw ConfigError("make_split: fewer than 2 known classes");
  if (k >= classes.size()) throw ConfigError("make_split: no unknown classes would remain");

  Rng rng(seed);
  shuffle_in_place(classes, rng);
  OpenSetSplit split;
  split.known_classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(k));
  split.unknown_classes.assign(classes.begin() + static_cast<std::ptrdiff_t>(k), classes.end());
  std::sort(split.known_classes.begin(), split.known_classes.end());
  std::sort(split.unknown_classes.begin(), split.unknown_classes.end());
  for (std::size_t i = 0; i < split.known_classes.size(); ++i) {
    split.remap[split.known_classes[i]] = static_cast<int>(i) + 1;
  }
  return split;
}

struct LabeledId {
  SampleId id;
  int label;  // remapped, 1..K
  friend bool operator==(const LabeledId&, const LabeledId&) = default;
  friend auto operator<=>(const LabeledId&, const LabeledId&) = default;
};

/// The evolving sample sets. Every list is kept sorted by id.
struct PoolState {
  std::vector<LabeledId> labeled;
  std::vector<SampleId> active_unknown;
  std::vector<SampleId> unlabeled;
  std::vector<LabeledId> test;

  std::size_t total() const { return labeled.size() + active_unknown.size() + unlabeled.size() + test.size(); }

  std::vector<SampleId> labeled_ids() const {
    std::vector<SampleId> out;
    out.reserve(labeled.size());
    for (const auto& l : labeled) out.push_back(l.id);
    return out;
  }

  friend bool operator==(const PoolState&, const PoolState&) = default;
};

namespace detail {

inline std::size_t fraction_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
}

}  // namespace detail

/// Carves a per-class test split out of the known samples, then draws the
/// initial labeled set uniformly from the remaining knowns with a floor of one
/// sample per known class. Everything else goes to the unlabeled pool.
inline PoolState init_pools(const Dataset& ds, const OpenSetSplit& split, double initial_label_fraction,
                            double test_fraction, std::uint64_t seed) {
  if (!(initial_label_fraction > 0.0 && initial_label_fraction < 1.0)) {
    throw ConfigError("init_pools: initial_label_fraction must be in (0,1)");
  }
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("init_pools: test_fraction must be in (0,1)");

  Rng rng(seed);
  std::map<int, std::vector<SampleId>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (split.is_known(ds.labels()[i])) by_class[ds.labels()[i]].push_back(ds.ids()[i]);
  }

  PoolState pools;
  std::map<int, std::vector<SampleId>> remaining;
  for (auto& [cls, ids] : by_class) {
    shuffle_in_place(ids, rng);
    const auto n_test = detail::fraction_count(test_fraction, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i < n_test) {
        pools.test.push_back({ids[i], split.remap_label(cls)});
      } else {
        remaining[cls].push_back(ids[i]);
      }
    }
  }
  if (pools.test.empty()) throw ConfigError("init_pools: test split is empty");

  std::vector<SampleId> candidates;
  for (const auto& [cls, ids] : remaining) candidates.insert(candidates.end(), ids.begin(), ids.end());
  shuffle_in_place(candidates, rng);
  const auto n_init = std::min(detail::fraction_count(initial_label_fraction, candidates.size()), candidates.size());
  std::set<SampleId> chosen(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n_init));
  for (const auto& [cls, ids] : remaining) {
    const bool covered = std::any_of(ids.begin(), ids.end(), [&](SampleId id) { return chosen.count(id) != 0; });
    if (!covered && !ids.empty()) chosen.insert(ids[uniform_index(rng, ids.size())]);
  }
  if (chosen.empty()) throw ConfigError("init_pools: initial labeled set is empty");

  std::set<SampleId> test_ids;
  for (const auto& t : pools.test) test_ids.insert(t.id);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const SampleId id = ds.ids()[i];
    if (test_ids.count(id)) continue;
    if (chosen.count(id)) {
      pools.labeled.push_back({id, split.remap_label(ds.labels()[i])});
    } else {
      pools.unlabeled.push_back(id);
    }
  }
  std::sort(pools.labeled.begin(), pools.labeled.end());
  std::sort(pools.unlabeled.begin(), pools.unlabeled.end());
  std::sort(pools.test.begin(), pools.test.end());
  return pools;
}

/// Moves oracle-annotated ids out of the unlabeled pool. Every id must be in
/// the pool and its assignment must agree with its true class.
inline PoolState apply_annotations(const Dataset& ds, const OpenSetSplit& split, PoolState pools,
                                   const std::vector<LabeledId>& known_adds,
                                   const std::vector<SampleId>& unknown_adds) {
  std::set<SampleId> moving;
  auto take = [&](SampleId id) {
    if (!std::binary_search(pools.unlabeled.begin(), pools.unlabeled.end(), id)) {
      throw ConsistencyError("apply_annotations: id " + std::to_string(id) + " is not in the unlabeled pool");
    }
    if (!moving.insert(id).second) {
      throw ConsistencyError("apply_annotations: id " + std::to_string(id) + " annotated twice");
    }
  };
  for (const auto& k : known_adds) {
    take(k.id);
    const int cls = ds.label_of(k.id);
    if (!split.is_known(cls) || split.remap_label(cls) != k.label) {
      throw ConsistencyError("apply_annotations: id " + std::to_string(k.id) + " labeled " +
                             std::to_string(k.label) + " contradicts its true class");
    }
  }
  for (const auto id : unknown_adds) {
    take(id);
    if (split.is_known(ds.label_of(id))) {
      throw ConsistencyError("apply_annotations: id " + std::to_string(id) + " is a known-class sample");
    }
  }

  std::erase_if(pools.unlabeled, [&](SampleId id) { return moving.count(id) != 0; });
  pools.labeled.insert(pools.labeled.end(), known_adds.begin(), known_adds.end());
  pools.active_unknown.insert(pools.active_unknown.end(), unknown_adds.begin(), unknown_adds.end());
  std::sort(pools.labeled.begin(), pools.labeled.end());
  std::sort(pools.active_unknown.begin(), pools.active_unknown.end());
  return pools;
}

/// Splits queried ids by true-class membership, remapping known labels.
inline std::pair<std::vector<LabeledId>, std::vector<SampleId>> oracle_annotate(const Dataset& ds,
                                                                               const OpenSetSplit& split,
                                                                               const std::vector<SampleId>& ids) {
  std::vector<LabeledId> known;
  std::vector<SampleId> unknown;
  for (const auto id : ids) {
    const int cls = ds.label_of(id);
    if (split.is_known(cls)) {
      known.push_back({id, split.remap_label(cls)});
    } else {
      unknown.push_back(id);
    }
  }
  return {std::move(known), std::move(unknown)};
}

/// Throws ConsistencyError naming the first broken pool invariant.
inline void check_pool_invariants(const Dataset& ds, const OpenSetSplit& split, const PoolState& pools) {
  std::set<SampleId> seen;
  auto claim = [&](SampleId id, const char* pool) {
    if (!ds.contains(id)) throw ConsistencyError(std::string(pool) + ": id not in dataset");
    if (!seen.insert(id).second) {
      throw ConsistencyError(std::string(pool) + ": id " + std::to_string(id) + " appears in two pools");
    }
  };
  for (const auto& l : pools.labeled) {
    claim(l.id, "labeled");
    const int cls = ds.label_of(l.id);
    if (!split.is_known(cls) || split.remap_label(cls) != l.label) throw ConsistencyError("labeled: wrong label");
  }
  for (const auto& t : pools.test) {
    claim(t.id, "test");
    const int cls = ds.label_of(t.id);
    if (!split.is_known(cls) || split.remap_label(cls) != t.label) throw ConsistencyError("test: wrong label");
  }
  for (const auto id : pools.active_unknown) {
    claim(id, "active_unknown");
    if (split.is_known(ds.label_of(id))) throw ConsistencyError("active_unknown: known-class sample");
  }
  for (const auto id : pools.unlabeled) claim(id, "unlabeled");
  if (seen.size() != ds.size()) throw ConsistencyError("pools do not cover the dataset");
}

}  // namespace eoal
