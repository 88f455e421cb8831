// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "drl/experiments/evaluation.hpp"

namespace drl::experiments {

struct ComparisonRow {
  std::string name;
  Metrics metrics;
  TTest vs_baseline;  // absolute errors of this report against the baseline's
  std::string stars;
  std::vector<double> cohort_mae;  // in Comparison::cohorts order
  double average_rank = 0;
};

struct Comparison {
  relations::StrategyId strategy = relations::StrategyId::S3;
  std::size_t baseline = 0;
  std::vector<std::string> cohorts;
  std::vector<ComparisonRow> rows;

  nlohmann::json to_json() const;
  /// Aligned plain-text table.
  std::string table() const;
};

/// Reports must cover the same held-out subjects and the chosen strategy.
Comparison compare_reports(const std::vector<std::string>& names,
                           const std::vector<EvalReport>& reports, relations::StrategyId strategy,
                           std::size_t baseline = 0);

/// comparison.json and comparison.csv in `dir`.
void write_comparison(const Comparison& c, const std::filesystem::path& dir);

}  // namespace drl::experiments
