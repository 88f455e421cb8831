// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "drl/data/dataset.hpp"
#include "drl/model/config.hpp"
#include "drl/relations/recovery.hpp"
#include "json.hpp"

namespace drl::experiments {

enum class LossMode { joint, pair, single };

struct LossConfig {
  LossMode mode = LossMode::joint;
};

/// Relation subset of every model the mode trains: joint {r1..r4}; pair
/// {r1,r2},{r3,r4}; single {r1},{r2},{r3},{r4}.
std::vector<std::vector<relations::Relation>> model_subsets(LossMode mode);

struct ScheduleConfig {
  std::string preset = "desk";
  int epochs = 30;
  int half_period = 15;
  double base_lr = 1e-4;
  std::size_t batch_size = 20;
  std::size_t steps_per_epoch = 0;  // 0: ceil(n_train / batch_size)
  std::size_t groups = 100;         // age groups of the pair sampler
  bool allow_self_pairs = false;
  std::size_t validation_pairs = 200;

  /// "desk" (30 epochs, halving every 15) or "paper-schedule" (80, 35).
  static ScheduleConfig preset_named(const std::string& name);
  void validate() const;
};

struct CvConfig {
  std::size_t folds = 5;
  std::vector<int> run_folds;  // empty: every fold
  std::size_t workers = 1;
};

struct EvalConfig {
  double alpha = 5;
  double mc_threshold = 5;
  std::size_t references_per_bin = 2;
  std::vector<relations::StrategyId> strategies = relations::all_strategies();
  std::vector<relations::EvalMode> modes{relations::EvalMode::pair, relations::EvalMode::reference,
                                         relations::EvalMode::self};
  std::size_t pairing_seeds = 1;
  std::size_t batch_pairs = 256;  // pairs per head evaluation chunk

  void validate() const;
  /// Strategies whose mode is enabled, in S-order.
  std::vector<relations::StrategyId> active_strategies() const;
};

struct RunConfig {
  data::GeneratorConfig generator;
  model::ModelConfig model;
  LossConfig loss;
  ScheduleConfig schedule;
  CvConfig cv;
  EvalConfig evaluation;
  std::uint64_t seed = 7;
  std::string output_dir;  // empty: decided by the caller

  /// Model input extents follow the generator; call after edits.
  void sync();
  void validate() const;
};

std::string to_string(LossMode m);
LossMode parse_loss_mode(const std::string& s);

nlohmann::json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const data::GeneratorConfig& c);
data::GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

/// "a.b.c=value". The value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& config, const std::string& assignment);

/// FNV-1a of the canonical JSON of the architecture (including the relation subset).
std::uint64_t config_hash(const model::ModelConfig& c);
std::string hex_hash(std::uint64_t h);

}  // namespace drl::experiments
