// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace drl::relations {

/// Relations between the targets of an ordered pair (x, y).
/// Only r1..r4 are used as training targets; r5 (product) and r6 (quotient)
/// are unbounded in practice and exist for completeness.
enum class Relation { r1 = 0, r2, r3, r4, r5, r6 };

constexpr std::array<Relation, 4> kTrainableRelations{Relation::r1, Relation::r2, Relation::r3,
                                                      Relation::r4};

std::string_view relation_name(Relation r);
Relation parse_relation(std::string_view name);
bool is_trainable(Relation r);

/// Parses "r1,r2" style lists; rejects duplicates and r5/r6.
std::vector<Relation> parse_relation_subset(std::string_view list);
std::string format_relation_subset(const std::vector<Relation>& subset);

enum class RelationKind { ground_truth, predicted };

struct RelationVector {
  double r1 = 0;  // sum, years
  double r2 = 0;  // signed difference x - y, years
  double r3 = 0;  // max, years
  double r4 = 0;  // min, years
  RelationKind kind = RelationKind::predicted;

  double get(Relation r) const;
  void set(Relation r, double value);
};

}  // namespace drl::relations
