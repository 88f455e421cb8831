// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "drl/data/dataset.hpp"
#include "drl/experiments/config.hpp"
#include "drl/experiments/evaluation.hpp"
#include "drl/experiments/trainer.hpp"

namespace drl::experiments {

struct CvSplit {
  int fold = 0;
  std::vector<std::size_t> train;  // indices into the subject list
  std::vector<std::size_t> test;
};

/// One split per fold from each subject's fold label; every label must lie in
/// [0, k) and every fold must be nonempty.
std::vector<CvSplit> cv_splits(const std::vector<data::Subject>& subjects, std::size_t k);

std::vector<data::Subject> select(const std::vector<data::Subject>& subjects,
                                  const std::vector<std::size_t>& indices);

/// Models trained for one fold, one per relation subset of the loss mode.
struct FoldModels {
  int fold = 0;
  std::vector<std::unique_ptr<model::PairModel<float>>> models;
  std::vector<std::vector<EpochLog>> curves;  // empty when loaded for evaluation only

  std::vector<model::PairModel<float>*> pointers() const;
};

/// Architecture of model `index` under the loss mode.
model::ModelConfig fold_model_config(const RunConfig& config, std::size_t index);
std::string checkpoint_name(int fold, std::size_t index);

struct TrainOptions {
  std::filesystem::path checkpoint_dir;  // empty: keep models in memory only
  bool resume = false;                   // continue from existing checkpoints
  /// Called after every epoch; may be called from several threads at once.
  std::function<void(int fold, std::size_t model, const EpochLog&)> on_epoch;
};

/// Folds to run: config.cv.run_folds, or all of them.
std::vector<int> folds_to_run(const RunConfig& config);

/// Trains every selected fold, config.cv.workers folds at a time.
std::vector<FoldModels> train_folds(const RunConfig& config,
                                    const std::vector<data::Subject>& subjects,
                                    const TrainOptions& options);

/// Loads previously written checkpoints; fails on an architecture mismatch.
std::vector<FoldModels> load_folds(const RunConfig& config, const std::filesystem::path& dir);

/// Each fold is evaluated on its held-out subjects with references from its
/// training folds.
EvalReport evaluate_folds(const RunConfig& config, const std::vector<data::Subject>& subjects,
                          const std::vector<FoldModels>& folds);

struct CvResult {
  EvalReport report;
  std::vector<FoldModels> folds;
};

CvResult run_cv(const RunConfig& config, const std::vector<data::Subject>& subjects,
                const TrainOptions& options = {});

/// fold,model,relations,epoch,lr,train_loss,val_mae_r1..val_mae_r4
void write_training_curves(const std::filesystem::path& path, const RunConfig& config,
                           const std::vector<FoldModels>& folds);

}  // namespace drl::experiments
