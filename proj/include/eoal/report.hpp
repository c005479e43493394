#pragma once

// Reading rounds tables back and aggregating them per (strategy, cycle).

#include <map>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "eoal/alloop.hpp"
#include "eoal/io.hpp"

namespace eoal::report {

/// Parses a rounds table (the rounds.csv / sweep.csv format).
inline std::vector<RoundMetrics> parse_rounds_csv(std::string_view text, const std::string& source = "rounds") {
  const auto lines = io::read_lines(text);
  if (lines.empty() || lines.front() != kRoundsHeader) {
    throw ParseError(source + ": expected header " + std::string(kRoundsHeader));
  }
  std::vector<RoundMetrics> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    if (lines[n].empty()) continue;
    const auto f = io::split_line(lines[n]);
    const auto where = source + " line " + std::to_string(n + 1);
    if (f.size() != 9) throw ParseError(where + ": expected 9 fields, got " + std::to_string(f.size()));
    try {
      RoundMetrics m;
      m.seed = std::stoll(f[0]);
      m.cycle = std::stoi(f[1]);
      m.strategy = f[2];
      m.accuracy = std::stod(f[3]);
      m.precision = std::stod(f[4]);
      m.n_labeled = std::stoull(f[5]);
      m.n_active_unknown = std::stoull(f[6]);
      m.n_unlabeled = std::stoull(f[7]);
      m.wall_ms = std::stod(f[8]);
      out.push_back(std::move(m));
    } catch (const std::logic_error&) {
      throw ParseError(where + ": malformed number");
    }
  }
  return out;
}

struct SummaryRow {
  std::string strategy;
  CycleSummary stats;
};

/// Mean and sample std of accuracy and precision per (strategy, cycle),
/// sorted by strategy name then cycle.
inline std::vector<SummaryRow> summarize_rounds(const std::vector<RoundMetrics>& rounds) {
  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (const auto& m : rounds) {
    auto& g = groups[{m.strategy, m.cycle}];
    g.first.push_back(m.accuracy);
    g.second.push_back(m.precision);
  }
  std::vector<SummaryRow> out;
  for (const auto& [key, vals] : groups) {
    SummaryRow row{key.first, {}};
    row.stats.cycle = key.second;
    row.stats.n = vals.first.size();
    std::tie(row.stats.accuracy_mean, row.stats.accuracy_std) = mean_std(vals.first);
    std::tie(row.stats.precision_mean, row.stats.precision_std) = mean_std(vals.second);
    out.push_back(std::move(row));
  }
  return out;
}

inline constexpr std::string_view kSummaryHeader =
    "strategy,cycle,n,accuracy_mean,accuracy_std,precision_mean,precision_std";

inline std::string summary_csv(const std::vector<SummaryRow>& rows) {
  std::string out(kSummaryHeader);
  out += '\n';
  for (const auto& r : rows) {
    const auto& s = r.stats;
    out += r.strategy + ',' + std::to_string(s.cycle) + ',' + std::to_string(s.n) + ',' +
           io::format_double(s.accuracy_mean) + ',' + io::format_double(s.accuracy_std) + ',' +
           io::format_double(s.precision_mean) + ',' + io::format_double(s.precision_std) + '\n';
  }
  return out;
}

}  // namespace eoal::report
