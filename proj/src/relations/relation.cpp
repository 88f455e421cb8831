// SPDX-License-Identifier: Apache-2.0
#include "drl/relations/relation.hpp"

#include <algorithm>

#include "drl/error.hpp"

namespace drl::relations {

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::r1: return "r1";
    case Relation::r2: return "r2";
    case Relation::r3: return "r3";
    case Relation::r4: return "r4";
    case Relation::r5: return "r5";
    case Relation::r6: return "r6";
  }
  return "?";
}

Relation parse_relation(std::string_view name) {
  static constexpr std::array<Relation, 6> all{Relation::r1, Relation::r2, Relation::r3,
                                               Relation::r4, Relation::r5, Relation::r6};
  for (auto r : all)
    if (relation_name(r) == name) return r;
  throw ValidationError("unknown relation '" + std::string(name) + "' (expected r1..r6)");
}

bool is_trainable(Relation r) { return static_cast<int>(r) < 4; }

std::vector<Relation> parse_relation_subset(std::string_view list) {
  std::vector<Relation> out;
  std::size_t start = 0;
  while (start <= list.size()) {
    auto end = list.find(',', start);
    if (end == std::string_view::npos) end = list.size();
    auto token = list.substr(start, end - start);
    while (!token.empty() && token.front() == ' ') token.remove_prefix(1);
    while (!token.empty() && token.back() == ' ') token.remove_suffix(1);
    if (!token.empty()) {
      const Relation r = parse_relation(token);
      if (!is_trainable(r))
        throw ValidationError("relation " + std::string(token) + " cannot be a training target");
      if (std::find(out.begin(), out.end(), r) != out.end())
        throw ValidationError("relation " + std::string(token) + " listed twice");
      out.push_back(r);
    }
    start = end + 1;
  }
  if (out.empty()) throw ValidationError("empty relation subset");
  return out;
}

std::string format_relation_subset(const std::vector<Relation>& subset) {
  std::string s;
  for (auto r : subset) {
    if (!s.empty()) s += ',';
    s += relation_name(r);
  }
  return s;
}

double RelationVector::get(Relation r) const {
  switch (r) {
    case Relation::r1: return r1;
    case Relation::r2: return r2;
    case Relation::r3: return r3;
    case Relation::r4: return r4;
    default: break;
  }
  throw ValidationError("relation vector stores r1..r4 only");
}

void RelationVector::set(Relation r, double value) {
  switch (r) {
    case Relation::r1: r1 = value; return;
    case Relation::r2: r2 = value; return;
    case Relation::r3: r3 = value; return;
    case Relation::r4: r4 = value; return;
    default: break;
  }
  throw ValidationError("relation vector stores r1..r4 only");
}

}  // namespace drl::relations
