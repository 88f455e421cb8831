// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "drl/relations/relation.hpp"

namespace drl::relations {

/// Ground-truth (r1, r2, r3, r4) of ages in [0, max_age].
RelationVector ground_truth_relations(double tau_x, double tau_y, double max_age);

/// Any relation including the untrained r5 = tau_x * tau_y and r6 = tau_x / tau_y.
double relation_value(Relation r, double tau_x, double tau_y);

// ---------------------------------------------------------------------------
// Recovery strategies.

enum class StrategyId {
  S1 = 1, S2, S3,                 // pair recovery, both ages of a test pair
  S4,                             // maximum-consistency rule on binarized r2
  S5, S6, S7, S8, S9,             // known reference age
  S10, S11, S12, S13, S14, S15, S16  // self pair (x, x)
};

enum class EvalMode { pair, reference, self };

std::string strategy_name(StrategyId s);
StrategyId parse_strategy(std::string_view name);
/// "S8,S15" style; rejects unknown and duplicate entries.
std::vector<StrategyId> parse_strategy_list(std::string_view list);
const std::vector<StrategyId>& all_strategies();
EvalMode strategy_mode(StrategyId s);
bool is_ensemble(StrategyId s);  // S3, S9, S16
std::string mode_name(EvalMode m);
EvalMode parse_mode(std::string_view name);

struct PairEstimate {
  double tau_x = 0;
  double tau_y = 0;
};

struct PairRecovery {
  PairEstimate s1;  // ((r1 + r2) / 2, (r1 - r2) / 2)
  PairEstimate s2;  // (r3, r4) if r2 > 0, else (r4, r3)
  PairEstimate s3;  // mean of s1 and s2
};
PairRecovery recover_pair(const RelationVector& r);

/// Estimates of tau_x ordered S5, S6, S7, S8, S9 given the reference age tau_y.
std::array<double, 5> recover_with_reference(const RelationVector& r, double tau_y);

/// Estimates of tau_x from (x, x) ordered S10 .. S16.
std::array<double, 7> recover_self(const RelationVector& r);

double clamp_age(double tau, double max_age);

// ---------------------------------------------------------------------------
// Maximum-consistency rule.

enum class Order { greater, similar, smaller };

std::string_view order_name(Order o);

/// greater if r2 > t, similar if |r2| <= t, smaller if r2 < -t.
Order binarize_relation(double r2, double t);

struct Comparison {
  double reference_age = 0;
  Order order = Order::similar;
};

/// Whether candidate age tau' agrees with a verdict against a reference.
bool consistent(double candidate, const Comparison& c, double t);

struct McResult {
  double age = 0;               // integer grid point
  std::size_t consistency = 0;  // number of agreeing comparisons
};

/// argmax over tau' in {0, 1, .., floor(max_age)} of the number of consistent
/// comparisons; ties resolve to the smallest age. O(M + N).
McResult mc_estimate(const std::vector<Comparison>& comparisons, double t, double max_age);

// ---------------------------------------------------------------------------
// Reference sets.

struct Reference {
  std::string id;
  double tau = 0;
};

/// At most `per_bin` subjects per integer age bin floor(tau), drawn with `seed`.
/// Result is ordered by bin, then by draw.
std::vector<Reference> select_references(const std::vector<Reference>& pool, std::size_t per_bin,
                                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Relation prediction files.

struct RelationRecord {
  std::string pair_id;
  std::string x_id;
  std::string y_id;
  RelationVector relations;
};

/// Header: pair_id,x_id,y_id,r1_hat,r2_hat,r3_hat,r4_hat
void write_relation_csv(const std::string& path, const std::vector<RelationRecord>& records);
std::vector<RelationRecord> read_relation_csv(const std::string& path);

}  // namespace drl::relations
