// SPDX-License-Identifier: Apache-2.0
#include "drl/relations/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "drl/error.hpp"
#include "util/csv.hpp"

namespace drl::relations {

namespace {

void require_age(double tau, double max_age, const char* which) {
  if (!(tau >= 0.0 && tau <= max_age))
    throw ValidationError(std::string(which) + " = " + util::format_double(tau) +
                          " lies outside [0, " + util::format_double(max_age) + "]");
}

void require_threshold(double t) {
  if (!(t >= 0.0)) throw ValidationError("threshold t must be >= 0, got " + util::format_double(t));
}

const std::vector<StrategyId> kAll = [] {
  std::vector<StrategyId> v;
  for (int i = 1; i <= 16; ++i) v.push_back(static_cast<StrategyId>(i));
  return v;
}();

}  // namespace

RelationVector ground_truth_relations(double tau_x, double tau_y, double max_age) {
  require_age(tau_x, max_age, "tau_x");
  require_age(tau_y, max_age, "tau_y");
  return {tau_x + tau_y, tau_x - tau_y, std::max(tau_x, tau_y), std::min(tau_x, tau_y),
          RelationKind::ground_truth};
}

double relation_value(Relation r, double tau_x, double tau_y) {
  switch (r) {
    case Relation::r1: return tau_x + tau_y;
    case Relation::r2: return tau_x - tau_y;
    case Relation::r3: return std::max(tau_x, tau_y);
    case Relation::r4: return std::min(tau_x, tau_y);
    case Relation::r5: return tau_x * tau_y;
    case Relation::r6:
      if (tau_y == 0.0) throw ValidationError("r6 is undefined for tau_y = 0");
      return tau_x / tau_y;
  }
  throw ValidationError("unknown relation");
}

std::string strategy_name(StrategyId s) { return "S" + std::to_string(static_cast<int>(s)); }

StrategyId parse_strategy(std::string_view name) {
  if (name.size() >= 2 && (name[0] == 'S' || name[0] == 's')) {
    int v = 0;
    auto res = std::from_chars(name.data() + 1, name.data() + name.size(), v);
    if (res.ec == std::errc() && res.ptr == name.data() + name.size() && v >= 1 && v <= 16)
      return static_cast<StrategyId>(v);
  }
  throw ValidationError("unknown strategy '" + std::string(name) + "' (expected S1..S16)");
}

std::vector<StrategyId> parse_strategy_list(std::string_view list) {
  std::vector<StrategyId> out;
  for (const auto& item : util::split_csv_line(list)) {
    const auto s = parse_strategy(item);
    if (std::find(out.begin(), out.end(), s) != out.end())
      throw ValidationError("strategy " + item + " listed twice");
    out.push_back(s);
  }
  return out;
}

const std::vector<StrategyId>& all_strategies() { return kAll; }

EvalMode strategy_mode(StrategyId s) {
  const int i = static_cast<int>(s);
  if (i <= 3) return EvalMode::pair;
  if (i <= 9) return EvalMode::reference;
  return EvalMode::self;
}

bool is_ensemble(StrategyId s) {
  return s == StrategyId::S3 || s == StrategyId::S9 || s == StrategyId::S16;
}

std::string mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::pair: return "pair";
    case EvalMode::reference: return "reference";
    case EvalMode::self: return "self";
  }
  return "?";
}

EvalMode parse_mode(std::string_view name) {
  if (name == "pair") return EvalMode::pair;
  if (name == "reference") return EvalMode::reference;
  if (name == "self") return EvalMode::self;
  throw ValidationError("unknown evaluation mode '" + std::string(name) +
                        "' (expected pair, reference or self)");
}

PairRecovery recover_pair(const RelationVector& r) {
  PairRecovery out;
  out.s1 = {(r.r1 + r.r2) / 2, (r.r1 - r.r2) / 2};
  // r2 == 0 falls to the "otherwise" branch for both ages.
  out.s2 = r.r2 > 0 ? PairEstimate{r.r3, r.r4} : PairEstimate{r.r4, r.r3};
  out.s3 = {(out.s1.tau_x + out.s2.tau_x) / 2, (out.s1.tau_y + out.s2.tau_y) / 2};
  return out;
}

std::array<double, 5> recover_with_reference(const RelationVector& r, double tau_y) {
  const double s5 = r.r1 - tau_y;
  const double s6 = r.r2 + tau_y;
  const double s7 = (r.r1 + r.r2) / 2;
  const double s8 = r.r3 + r.r4 - tau_y;
  return {s5, s6, s7, s8, (s5 + s6 + s7 + s8) / 4};
}

std::array<double, 7> recover_self(const RelationVector& r) {
  const std::array<double, 6> s{r.r1 / 2,  (r.r1 + r.r2) / 2, (r.r1 - r.r2) / 2,
                                r.r3,      r.r4,              (r.r3 + r.r4) / 2};
  double mean = 0;
  for (double v : s) mean += v;
  return {s[0], s[1], s[2], s[3], s[4], s[5], mean / 6};
}

double clamp_age(double tau, double max_age) { return std::clamp(tau, 0.0, max_age); }

std::string_view order_name(Order o) {
  switch (o) {
    case Order::greater: return "greater";
    case Order::similar: return "similar";
    case Order::smaller: return "smaller";
  }
  return "?";
}

Order binarize_relation(double r2, double t) {
  require_threshold(t);
  if (!std::isfinite(r2)) throw ValidationError("cannot binarize a non-finite r2");
  if (r2 > t) return Order::greater;
  if (r2 < -t) return Order::smaller;
  return Order::similar;
}

bool consistent(double candidate, const Comparison& c, double t) {
  const double diff = candidate - c.reference_age;
  switch (c.order) {
    case Order::greater: return diff > t;
    case Order::similar: return std::abs(diff) <= t;
    case Order::smaller: return diff < -t;
  }
  return false;
}

McResult mc_estimate(const std::vector<Comparison>& comparisons, double t, double max_age) {
  require_threshold(t);
  if (comparisons.empty()) throw ValidationError("mc_estimate needs at least one comparison");
  if (!(max_age >= 0.0 && std::isfinite(max_age)))
    throw ValidationError("max age must be finite and >= 0");
  const long n = static_cast<long>(std::floor(max_age)) + 1;

  // Each verdict is consistent on one interval of the grid. Bounds come from
  // rounding, then are settled with the exact predicate so the result agrees
  // with evaluating every grid point.
  auto to_index = [n](double v) {
    return static_cast<long>(std::clamp(v, -1.0, static_cast<double>(n)));
  };
  std::vector<long> delta(n + 1, 0);
  for (const auto& c : comparisons) {
    if (!std::isfinite(c.reference_age))
      throw ValidationError("reference age must be finite");
    auto ok = [&](long k) { return k >= 0 && k < n && consistent(double(k), c, t); };
    long lo = 0, hi = n - 1;
    if (c.order != Order::smaller) {
      lo = to_index(std::ceil(c.order == Order::greater ? c.reference_age + t
                                                          : c.reference_age - t));
      lo = std::clamp(lo, 0L, n);
      while (lo > 0 && ok(lo - 1)) --lo;
      while (lo < n && !ok(lo) && (c.order == Order::greater || lo <= c.reference_age)) ++lo;
    }
    if (c.order != Order::greater) {
      hi = to_index(std::floor(c.order == Order::smaller ? c.reference_age - t
                                                          : c.reference_age + t));
      hi = std::clamp(hi, -1L, n - 1);
      while (hi < n - 1 && ok(hi + 1)) ++hi;
      while (hi >= 0 && !ok(hi) && (c.order == Order::smaller || hi >= c.reference_age)) --hi;
    }
    if (lo <= hi && ok(lo) && ok(hi)) {
      ++delta[lo];
      --delta[hi + 1];
    }
  }
  McResult best{0.0, 0};
  long running = 0;
  for (long k = 0; k < n; ++k) {
    running += delta[k];
    if (static_cast<std::size_t>(running) > best.consistency || k == 0)
      best = {static_cast<double>(k), static_cast<std::size_t>(running)};
  }
  return best;
}

std::vector<Reference> select_references(const std::vector<Reference>& pool, std::size_t per_bin,
                                         std::uint64_t seed) {
  if (per_bin == 0) throw ValidationError("references per age bin must be positive");
  std::map<long, std::vector<Reference>> bins;
  for (const auto& r : pool) {
    if (!(r.tau >= 0.0) || !std::isfinite(r.tau))
      throw ValidationError("reference '" + r.id + "' has an invalid age");
    bins[static_cast<long>(std::floor(r.tau))].push_back(r);
  }
  std::mt19937_64 rng(seed);
  std::vector<Reference> out;
  for (auto& [bin, members] : bins) {
    std::sort(members.begin(), members.end(),
              [](const Reference& a, const Reference& b) { return a.id < b.id; });
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t take = std::min(per_bin, members.size());
    out.insert(out.end(), members.begin(), members.begin() + static_cast<long>(take));
  }
  return out;
}

void write_relation_csv(const std::string& path, const std::vector<RelationRecord>& records) {
  util::CsvWriter out(path, {"pair_id", "x_id", "y_id", "r1_hat", "r2_hat", "r3_hat", "r4_hat"});
  for (const auto& r : records)
    out.row({r.pair_id, r.x_id, r.y_id, util::format_double(r.relations.r1),
             util::format_double(r.relations.r2), util::format_double(r.relations.r3),
             util::format_double(r.relations.r4)});
  out.close();
}

std::vector<RelationRecord> read_relation_csv(const std::string& path) {
  std::vector<RelationRecord> out;
  for (auto& row : util::read_csv(
           path, {"pair_id", "x_id", "y_id", "r1_hat", "r2_hat", "r3_hat", "r4_hat"})) {
    RelationRecord r;
    r.pair_id = row[0];
    r.x_id = row[1];
    r.y_id = row[2];
    r.relations = {util::parse_double(row[3], "r1_hat"), util::parse_double(row[4], "r2_hat"),
                   util::parse_double(row[5], "r3_hat"), util::parse_double(row[6], "r4_hat"),
                   RelationKind::predicted};
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace drl::relations
