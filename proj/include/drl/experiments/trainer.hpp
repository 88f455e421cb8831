// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <vector>

#include "drl/data/dataset.hpp"
#include "drl/experiments/config.hpp"
#include "drl/model/pair_model.hpp"
#include "drl/numerics/adam.hpp"

namespace drl::experiments {

struct EpochLog {
  int epoch = 0;  // 0-based
  double lr = 0;
  double train_loss = 0;              // mean over the epoch's steps
  std::array<double, 4> val_mae{};    // years per r1..r4; NaN when not trained or no validation
};

/// Ground-truth targets (N, K) in the order of `subset`.
nn::Tensor<float> relation_targets(const std::vector<double>& tau_x,
                                   const std::vector<double>& tau_y,
                                   const std::vector<relations::Relation>& subset, double max_age);

/// Trains one pair model with Adam on age-group-balanced random pairs.
/// Every epoch's sampler is seeded from (seed, epoch), so a run resumed from a
/// checkpoint follows the uninterrupted trajectory exactly.
class Trainer {
 public:
  Trainer(const model::ModelConfig& model_config, const ScheduleConfig& schedule, double max_age,
          std::uint64_t seed);

  model::PairModel<float>& model() { return *model_; }
  /// Hands the trained model over; the trainer must not be used afterwards.
  std::unique_ptr<model::PairModel<float>> release_model() { return std::move(model_); }
  int epochs_done() const { return epochs_done_; }
  const std::vector<EpochLog>& curve() const { return curve_; }

  /// Runs epochs from epochs_done() up to `stop_epoch` (exclusive; default the
  /// schedule's end). A non-finite loss raises RuntimeFailure naming epoch and batch.
  void fit(const std::vector<data::Subject>& train, const std::vector<data::Subject>& validation,
           int stop_epoch = -1, const std::function<void(const EpochLog&)>& on_epoch = {});

  /// Model, optimizer, epoch counter and curve.
  void save(const std::filesystem::path& path);
  /// Fails if the checkpoint was written for a different architecture.
  void load(const std::filesystem::path& path);

  std::uint64_t hash() const { return hash_; }

 private:
  void validation_error(const std::vector<data::Subject>& validation, std::array<double, 4>& mae);

  model::ModelConfig config_;
  ScheduleConfig schedule_;
  double max_age_;
  std::uint64_t seed_;
  std::uint64_t hash_;
  std::unique_ptr<model::PairModel<float>> model_;
  std::unique_ptr<nn::Adam<float>> optimizer_;
  int epochs_done_ = 0;
  std::vector<EpochLog> curve_;
};

/// Loads a model for inference; the stored architecture hash must equal config_hash(config).
std::unique_ptr<model::PairModel<float>> load_model(const model::ModelConfig& config,
                                                    const std::filesystem::path& path);

}  // namespace drl::experiments
