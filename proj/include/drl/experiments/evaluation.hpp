// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "drl/data/dataset.hpp"
#include "drl/experiments/config.hpp"
#include "drl/experiments/metrics.hpp"
#include "drl/model/pair_model.hpp"
#include "drl/relations/recovery.hpp"
#include "json.hpp"

namespace drl::experiments {

/// Backbone features of a subject list for every model and input slot,
/// computed once in evaluation mode.
class FeatureBank {
 public:
  FeatureBank(const std::vector<model::PairModel<float>*>& models,
              const std::vector<data::Subject>& subjects, std::size_t chunk = 64);

  /// (N, d, spatial...) features of `model` through the backbone of `slot`.
  const nn::Tensor<float>& features(std::size_t model, std::size_t slot) const {
    return features_.at(model).at(slot);
  }
  std::size_t size() const { return size_; }

 private:
  std::size_t size_;
  std::vector<std::array<nn::Tensor<float>, 2>> features_;
};

/// Relations of (x = xs[i], y = ys[j]) for each listed pair, merged across the
/// models; together the models must cover r1..r4.
std::vector<relations::RelationVector> predict_relations(
    const std::vector<model::PairModel<float>*>& models, const FeatureBank& xs,
    const FeatureBank& ys, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
    std::size_t chunk = 256);

constexpr std::size_t kStrategyCount = 16;

struct SubjectEstimates {
  std::string id;
  double tau = 0;
  std::string cohort;
  int fold = -1;
  std::array<double, kStrategyCount> estimate;  // index S-1; NaN when not evaluated
  double uncertainty = 0;                       // NaN with fewer than two components
};

/// Strategies whose spread defines a subject's uncertainty: every
/// non-ensemble strategy that was evaluated.
bool is_uncertainty_component(relations::StrategyId s);

struct FoldResult {
  int fold = 0;
  std::vector<SubjectEstimates> subjects;
  std::size_t references = 0;
  double self_r2_abs = 0;   // mean |r2 hat| over (x, x); NaN if self mode is off
  double cross_r2_abs = 0;  // mean |r2 hat| over x != y pairs; NaN if none
};

/// Evaluates one held-out fold under the enabled modes. References come from
/// `reference_pool` (the training folds).
FoldResult evaluate_fold(int fold, const std::vector<model::PairModel<float>*>& models,
                         const std::vector<data::Subject>& test,
                         const std::vector<data::Subject>& reference_pool,
                         const EvalConfig& config, double max_age, std::uint64_t seed);

struct StrategyReport {
  relations::StrategyId id = relations::StrategyId::S1;
  Metrics overall;                // pooled over every held-out subject
  std::vector<Metrics> per_fold;  // in report fold order
  Metrics fold_mean;              // mean of the per-fold metrics
  Metrics fold_std;               // sample std of the per-fold metrics
  std::map<std::string, double> cohort_mae;
  TTest vs_best;  // absolute errors against the lowest-MAE strategy
};

struct EvalReport {
  std::vector<int> folds;
  double alpha = 5;
  std::vector<StrategyReport> strategies;
  relations::StrategyId best = relations::StrategyId::S1;
  std::vector<SubjectEstimates> subjects;  // sorted by id
  double uncertainty_mean = 0;
  double uncertainty_age_pearson = 0;  // NaN when undefined
  std::vector<std::size_t> reference_counts;
  double self_r2_abs = 0;
  double cross_r2_abs = 0;

  const StrategyReport& strategy(relations::StrategyId s) const;
  std::vector<std::string> cohorts() const;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport build_report(const std::vector<FoldResult>& folds, const EvalConfig& config);

/// report.json, estimates.csv, fold_metrics.csv, scatter.csv and uncertainty.csv in `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);
EvalReport read_report(const std::filesystem::path& report_json);

}  // namespace drl::experiments
