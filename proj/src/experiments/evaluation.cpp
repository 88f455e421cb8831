// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "drl/error.hpp"
#include "util/csv.hpp"
#include "util/hash.hpp"

namespace drl::experiments {

using relations::EvalMode;
using relations::Relation;
using relations::RelationVector;
using relations::StrategyId;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kPairingStream = 0x5041;
constexpr std::uint64_t kReferenceStream = 0x5245;

std::size_t slot_of(StrategyId s) { return static_cast<std::size_t>(s) - 1; }

// Rows `rows` of an (N, ...) tensor as a new (rows.size(), ...) tensor.
nn::Tensor<float> gather_rows(const nn::Tensor<float>& t, const std::vector<std::size_t>& rows) {
  const std::size_t width = t.numel() / t.dim(0);
  std::vector<float> out(rows.size() * width);
  const auto v = t.values();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(v.begin() + std::ptrdiff_t(rows[i] * width), width,
                out.begin() + std::ptrdiff_t(i * width));
  nn::Shape shape = t.shape();
  shape[0] = rows.size();
  return nn::Tensor<float>::from(std::move(shape), std::move(out));
}

bool mode_enabled(const EvalConfig& c, EvalMode m) {
  return std::find(c.modes.begin(), c.modes.end(), m) != c.modes.end();
}

// Running mean per subject and strategy.
struct Accumulator {
  std::vector<std::array<double, kStrategyCount>> sum;
  std::vector<std::array<std::size_t, kStrategyCount>> count;

  explicit Accumulator(std::size_t n) : sum(n), count(n) {
    for (auto& s : sum) s.fill(0.0);
    for (auto& c : count) c.fill(0);
  }
  void add(std::size_t subject, StrategyId s, double v) {
    sum[subject][slot_of(s)] += v;
    ++count[subject][slot_of(s)];
  }
};

Metrics metrics_mean(const std::vector<Metrics>& ms, bool std_dev) {
  Metrics out;
  std::vector<double> mae, cs, r;
  for (const auto& m : ms) {
    mae.push_back(m.mae);
    cs.push_back(m.cs);
    r.push_back(m.pearson);
    out.n += m.n;
  }
  if (ms.empty()) return out;
  out.mae = std_dev ? sample_std(mae) : mean(mae);
  out.cs = std_dev ? sample_std(cs) : mean(cs);
  out.pearson = std_dev ? sample_std(r) : mean(r);
  return out;
}

nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
double number_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

nlohmann::json metrics_json(const Metrics& m) {
  return {{"mae", number(m.mae)}, {"cs", number(m.cs)}, {"pearson", number(m.pearson)}, {"n", m.n}};
}
Metrics metrics_from(const nlohmann::json& j) {
  Metrics m;
  m.mae = number_from(j.at("mae"));
  m.cs = number_from(j.at("cs"));
  m.pearson = number_from(j.at("pearson"));
  m.n = j.at("n").get<std::size_t>();
  return m;
}

std::string csv_number(double v) { return std::isfinite(v) ? util::format_double(v) : ""; }

}  // namespace

FeatureBank::FeatureBank(const std::vector<model::PairModel<float>*>& models,
                         const std::vector<data::Subject>& subjects, std::size_t chunk)
    : size_(subjects.size()) {
  if (subjects.empty()) throw ValidationError("feature bank needs at least one subject");
  nn::NoGradGuard no_grad;
  for (auto* m : models) {
    std::array<nn::Tensor<float>, 2> slots;
    for (std::size_t slot = 0; slot < 2; ++slot) {
      if (slot == 1 && m->backbone_count() == 1) {
        slots[1] = slots[0];
        break;
      }
      std::vector<nn::Tensor<float>> parts;
      for (std::size_t start = 0; start < subjects.size(); start += chunk) {
        std::vector<std::size_t> idx(std::min(chunk, subjects.size() - start));
        std::iota(idx.begin(), idx.end(), start);
        parts.push_back(m->extract_features(data::stack_images(subjects, idx), slot, false));
      }
      slots[slot] = parts.size() == 1 ? parts.front() : nn::concat(parts, 0);
    }
    features_.push_back(std::move(slots));
  }
}

std::vector<RelationVector> predict_relations(const std::vector<model::PairModel<float>*>& models,
                                              const FeatureBank& xs, const FeatureBank& ys,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                              std::size_t chunk) {
  std::array<bool, 4> covered{};
  for (auto* m : models)
    for (auto r : m->relations()) covered[static_cast<std::size_t>(r)] = true;
  for (std::size_t i = 0; i < 4; ++i)
    if (!covered[i])
      throw ValidationError("the evaluated models do not predict relation " +
                            std::string(relations::relation_name(Relation(i))));
  std::vector<RelationVector> out(pairs.size());
  nn::NoGradGuard no_grad;
  for (std::size_t mi = 0; mi < models.size(); ++mi) {
    auto* m = models[mi];
    const auto& subset = m->relations();
    for (std::size_t start = 0; start < pairs.size(); start += chunk) {
      const std::size_t end = std::min(pairs.size(), start + chunk);
      std::vector<std::size_t> xi, yi;
      for (std::size_t p = start; p < end; ++p) {
        xi.push_back(pairs[p].first);
        yi.push_back(pairs[p].second);
      }
      auto pred = m->relations_from_features(gather_rows(xs.features(mi, 0), xi),
                                             gather_rows(ys.features(mi, 1), yi));
      const auto v = pred.values();
      for (std::size_t p = start; p < end; ++p)
        for (std::size_t k = 0; k < subset.size(); ++k)
          out[p].set(subset[k], v[(p - start) * subset.size() + k]);
    }
  }
  return out;
}

bool is_uncertainty_component(StrategyId s) { return !relations::is_ensemble(s); }

FoldResult evaluate_fold(int fold, const std::vector<model::PairModel<float>*>& models,
                         const std::vector<data::Subject>& test,
                         const std::vector<data::Subject>& reference_pool, const EvalConfig& config,
                         double max_age, std::uint64_t seed) {
  config.validate();
  if (test.empty()) throw ValidationError("fold " + std::to_string(fold) + " has no test subjects");
  const auto active = config.active_strategies();
  auto wanted = [&](EvalMode m) {
    if (!mode_enabled(config, m)) return false;
    for (auto s : active)
      if (relations::strategy_mode(s) == m) return true;
    return false;
  };

  FoldResult result;
  result.fold = fold;
  result.self_r2_abs = kNaN;
  result.cross_r2_abs = kNaN;
  Accumulator acc(test.size());
  const FeatureBank test_bank(models, test);
  double cross_sum = 0;
  std::size_t cross_n = 0;

  if (wanted(EvalMode::pair) && test.size() >= 2) {
    for (std::size_t s = 0; s < config.pairing_seeds; ++s) {
      std::mt19937_64 rng(util::mix64(seed, kPairingStream + s));
      std::vector<std::size_t> perm(test.size());
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t i = 0; i + 1 < perm.size(); i += 2) pairs.emplace_back(perm[i], perm[i + 1]);
      if (perm.size() % 2 == 1) {
        const std::size_t last = perm.back();
        std::uniform_int_distribution<std::size_t> pick(0, perm.size() - 2);
        pairs.emplace_back(last, perm[pick(rng)]);
      }
      const auto rel = predict_relations(models, test_bank, test_bank, pairs, config.batch_pairs);
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        const auto rec = relations::recover_pair(rel[p]);
        const auto [x, y] = pairs[p];
        acc.add(x, StrategyId::S1, rec.s1.tau_x);
        acc.add(y, StrategyId::S1, rec.s1.tau_y);
        acc.add(x, StrategyId::S2, rec.s2.tau_x);
        acc.add(y, StrategyId::S2, rec.s2.tau_y);
        acc.add(x, StrategyId::S3, rec.s3.tau_x);
        acc.add(y, StrategyId::S3, rec.s3.tau_y);
        cross_sum += std::abs(rel[p].r2);
        ++cross_n;
      }
    }
  }

  if (wanted(EvalMode::reference)) {
    std::vector<relations::Reference> pool;
    for (const auto& s : reference_pool) pool.push_back({s.id, s.tau});
    const auto refs = relations::select_references(pool, config.references_per_bin,
                                                   util::mix64(seed, kReferenceStream));
    if (refs.empty()) throw ValidationError("reference pool is empty");
    result.references = refs.size();
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < reference_pool.size(); ++i) by_id.emplace(reference_pool[i].id, i);
    std::vector<data::Subject> ref_subjects;
    for (const auto& r : refs) ref_subjects.push_back(reference_pool[by_id.at(r.id)]);
    const FeatureBank ref_bank(models, ref_subjects);
    for (std::size_t x = 0; x < test.size(); ++x) {
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t r = 0; r < refs.size(); ++r) pairs.emplace_back(x, r);
      const auto rel = predict_relations(models, test_bank, ref_bank, pairs, config.batch_pairs);
      std::vector<relations::Comparison> comparisons;
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const auto est = relations::recover_with_reference(rel[r], refs[r].tau);
        for (std::size_t k = 0; k < est.size(); ++k)
          acc.add(x, StrategyId(static_cast<int>(StrategyId::S5) + int(k)), est[k]);
        comparisons.push_back({refs[r].tau, relations::binarize_relation(rel[r].r2, config.mc_threshold)});
        if (test[x].id != refs[r].id) {
          cross_sum += std::abs(rel[r].r2);
          ++cross_n;
        }
      }
      acc.add(x, StrategyId::S4, relations::mc_estimate(comparisons, config.mc_threshold, max_age).age);
    }
  }

  if (wanted(EvalMode::self)) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < test.size(); ++i) pairs.emplace_back(i, i);
    const auto rel = predict_relations(models, test_bank, test_bank, pairs, config.batch_pairs);
    double self_sum = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto est = relations::recover_self(rel[i]);
      for (std::size_t k = 0; k < est.size(); ++k)
        acc.add(i, StrategyId(static_cast<int>(StrategyId::S10) + int(k)), est[k]);
      self_sum += std::abs(rel[i].r2);
    }
    result.self_r2_abs = self_sum / double(test.size());
  }
  if (cross_n > 0) result.cross_r2_abs = cross_sum / double(cross_n);

  for (std::size_t i = 0; i < test.size(); ++i) {
    SubjectEstimates e;
    e.id = test[i].id;
    e.tau = test[i].tau;
    e.cohort = test[i].cohort;
    e.fold = fold;
    e.estimate.fill(kNaN);
    std::vector<double> components;
    for (auto s : active) {
      const auto k = slot_of(s);
      if (acc.count[i][k] == 0) continue;
      e.estimate[k] = acc.sum[i][k] / double(acc.count[i][k]);
      if (is_uncertainty_component(s)) components.push_back(e.estimate[k]);
    }
    e.uncertainty = components.size() >= 2 ? uncertainty(components) : kNaN;
    result.subjects.push_back(std::move(e));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Report.

const StrategyReport& EvalReport::strategy(StrategyId s) const {
  for (const auto& r : strategies)
    if (r.id == s) return r;
  throw ValidationError("report has no column for " + relations::strategy_name(s));
}

std::vector<std::string> EvalReport::cohorts() const {
  std::set<std::string> c;
  for (const auto& s : subjects) c.insert(s.cohort);
  return {c.begin(), c.end()};
}

EvalReport build_report(const std::vector<FoldResult>& folds, const EvalConfig& config) {
  if (folds.empty()) throw ValidationError("no folds to report");
  EvalReport report;
  report.alpha = config.alpha;
  std::vector<double> self, cross;
  for (const auto& f : folds) {
    report.folds.push_back(f.fold);
    report.reference_counts.push_back(f.references);
    report.subjects.insert(report.subjects.end(), f.subjects.begin(), f.subjects.end());
    if (!std::isnan(f.self_r2_abs)) self.push_back(f.self_r2_abs);
    if (!std::isnan(f.cross_r2_abs)) cross.push_back(f.cross_r2_abs);
  }
  std::sort(report.subjects.begin(), report.subjects.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < report.subjects.size(); ++i)
    if (report.subjects[i].id == report.subjects[i - 1].id)
      throw ValidationError("subject " + report.subjects[i].id + " was held out more than once");
  report.self_r2_abs = self.empty() ? kNaN : mean(self);
  report.cross_r2_abs = cross.empty() ? kNaN : mean(cross);

  const auto cohorts = report.cohorts();
  for (auto s : config.active_strategies()) {
    const auto k = slot_of(s);
    StrategyReport sr;
    sr.id = s;
    std::vector<double> est, truth;
    std::map<std::string, std::pair<double, std::size_t>> by_cohort;
    for (const auto& e : report.subjects) {
      if (std::isnan(e.estimate[k])) continue;
      est.push_back(e.estimate[k]);
      truth.push_back(e.tau);
      auto& c = by_cohort[e.cohort];
      c.first += std::abs(e.estimate[k] - e.tau);
      ++c.second;
    }
    if (est.empty()) continue;  // mode could not run (e.g. a one-subject fold in pair mode)
    sr.overall = compute_metrics(est, truth, config.alpha);
    for (const auto& [name, c] : by_cohort) sr.cohort_mae[name] = c.first / double(c.second);
    for (const auto& f : folds) {
      std::vector<double> fe, ft;
      for (const auto& e : f.subjects)
        if (!std::isnan(e.estimate[k])) {
          fe.push_back(e.estimate[k]);
          ft.push_back(e.tau);
        }
      sr.per_fold.push_back(fe.empty() ? Metrics{kNaN, kNaN, kNaN, 0}
                                       : compute_metrics(fe, ft, config.alpha));
    }
    sr.fold_mean = metrics_mean(sr.per_fold, false);
    sr.fold_std = metrics_mean(sr.per_fold, true);
    report.strategies.push_back(std::move(sr));
  }
  if (report.strategies.empty()) throw ValidationError("no strategy produced estimates");

  const auto best = std::min_element(report.strategies.begin(), report.strategies.end(),
                                     [](const auto& a, const auto& b) {
                                       return a.overall.mae < b.overall.mae;
                                     });
  report.best = best->id;
  auto abs_errors = [&](StrategyId s) {
    std::vector<double> out;
    for (const auto& e : report.subjects) out.push_back(std::abs(e.estimate[slot_of(s)] - e.tau));
    return out;
  };
  const auto best_errors = abs_errors(report.best);
  for (auto& sr : report.strategies) {
    const auto errs = abs_errors(sr.id);
    bool complete = errs.size() >= 2;
    for (std::size_t i = 0; i < errs.size() && complete; ++i)
      complete = !std::isnan(errs[i]) && !std::isnan(best_errors[i]);
    sr.vs_best = complete ? paired_t_test(errs, best_errors) : TTest{kNaN, kNaN, 0};
  }

  std::vector<double> unc, age;
  for (const auto& e : report.subjects)
    if (!std::isnan(e.uncertainty)) {
      unc.push_back(e.uncertainty);
      age.push_back(e.tau);
    }
  report.uncertainty_mean = unc.empty() ? kNaN : mean(unc);
  report.uncertainty_age_pearson = unc.size() >= 2 ? pearson(unc, age) : kNaN;
  return report;
}

nlohmann::json EvalReport::to_json() const {
  using nlohmann::json;
  json strategies_json = json::array();
  for (const auto& s : strategies) {
    json per_fold = json::array();
    for (const auto& m : s.per_fold) per_fold.push_back(metrics_json(m));
    json cohort = json::object();
    for (const auto& [k, v] : s.cohort_mae) cohort[k] = number(v);
    strategies_json.push_back({{"strategy", relations::strategy_name(s.id)},
                               {"mode", relations::mode_name(relations::strategy_mode(s.id))},
                               {"overall", metrics_json(s.overall)},
                               {"per_fold", per_fold},
                               {"fold_mean", metrics_json(s.fold_mean)},
                               {"fold_std", metrics_json(s.fold_std)},
                               {"cohort_mae", cohort},
                               {"t_vs_best", {{"t", number(s.vs_best.t)},
                                              {"p", number(s.vs_best.p)},
                                              {"stars", std::isnan(s.vs_best.p)
                                                            ? ""
                                                            : significance_stars(s.vs_best.p)}}}});
  }
  json subjects_json = json::array();
  for (const auto& e : subjects) {
    json est = json::object();
    for (const auto& s : strategies) est[relations::strategy_name(s.id)] = number(e.estimate[slot_of(s.id)]);
    subjects_json.push_back({{"id", e.id},
                             {"tau", e.tau},
                             {"cohort", e.cohort},
                             {"fold", e.fold},
                             {"estimates", est},
                             {"uncertainty", number(e.uncertainty)}});
  }
  return {{"folds", folds},
          {"alpha", alpha},
          {"best_strategy", relations::strategy_name(best)},
          {"strategies", strategies_json},
          {"uncertainty", {{"mean", number(uncertainty_mean)},
                           {"pearson_with_age", number(uncertainty_age_pearson)}}},
          {"reference_counts", reference_counts},
          {"r2_abs_mean", {{"self_pairs", number(self_r2_abs)}, {"cross_pairs", number(cross_r2_abs)}}},
          {"subjects", subjects_json}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.folds = j.at("folds").get<std::vector<int>>();
    r.alpha = j.at("alpha").get<double>();
    r.best = relations::parse_strategy(j.at("best_strategy").get<std::string>());
    for (const auto& s : j.at("strategies")) {
      StrategyReport sr;
      sr.id = relations::parse_strategy(s.at("strategy").get<std::string>());
      sr.overall = metrics_from(s.at("overall"));
      for (const auto& m : s.at("per_fold")) sr.per_fold.push_back(metrics_from(m));
      sr.fold_mean = metrics_from(s.at("fold_mean"));
      sr.fold_std = metrics_from(s.at("fold_std"));
      for (const auto& [k, v] : s.at("cohort_mae").items()) sr.cohort_mae[k] = number_from(v);
      sr.vs_best.t = number_from(s.at("t_vs_best").at("t"));
      sr.vs_best.p = number_from(s.at("t_vs_best").at("p"));
      r.strategies.push_back(std::move(sr));
    }
    r.uncertainty_mean = number_from(j.at("uncertainty").at("mean"));
    r.uncertainty_age_pearson = number_from(j.at("uncertainty").at("pearson_with_age"));
    r.reference_counts = j.at("reference_counts").get<std::vector<std::size_t>>();
    r.self_r2_abs = number_from(j.at("r2_abs_mean").at("self_pairs"));
    r.cross_r2_abs = number_from(j.at("r2_abs_mean").at("cross_pairs"));
    for (const auto& s : j.at("subjects")) {
      SubjectEstimates e;
      e.id = s.at("id").get<std::string>();
      e.tau = s.at("tau").get<double>();
      e.cohort = s.at("cohort").get<std::string>();
      e.fold = s.at("fold").get<int>();
      e.estimate.fill(kNaN);
      for (const auto& [k, v] : s.at("estimates").items())
        e.estimate[slot_of(relations::parse_strategy(k))] = number_from(v);
      e.uncertainty = number_from(s.at("uncertainty"));
      r.subjects.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ValidationError(std::string("malformed report: ") + ex.what());
  }
  return r;
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    if (!out) throw RuntimeFailure("cannot write " + (dir / "report.json").string());
    out << report.to_json().dump(2) << "\n";
    if (!out) throw RuntimeFailure("failed writing " + (dir / "report.json").string());
  }
  std::vector<std::string> header{"id", "tau_years", "cohort", "fold"};
  for (const auto& s : report.strategies) header.push_back(relations::strategy_name(s.id));
  header.push_back("uncertainty");
  util::CsvWriter est((dir / "estimates.csv").string(), header);
  util::CsvWriter scatter((dir / "scatter.csv").string(),
                          {"strategy", "id", "tau_years", "estimate_years"});
  util::CsvWriter unc((dir / "uncertainty.csv").string(), {"id", "tau_years", "uncertainty"});
  for (const auto& e : report.subjects) {
    std::vector<std::string> row{e.id, util::format_double(e.tau), e.cohort, std::to_string(e.fold)};
    for (const auto& s : report.strategies) row.push_back(csv_number(e.estimate[slot_of(s.id)]));
    row.push_back(csv_number(e.uncertainty));
    est.row(row);
    if (!std::isnan(e.uncertainty))
      unc.row({e.id, util::format_double(e.tau), util::format_double(e.uncertainty)});
  }
  for (const auto& s : report.strategies)
    for (const auto& e : report.subjects)
      if (!std::isnan(e.estimate[slot_of(s.id)]))
        scatter.row({relations::strategy_name(s.id), e.id, util::format_double(e.tau),
                     util::format_double(e.estimate[slot_of(s.id)])});
  util::CsvWriter fm((dir / "fold_metrics.csv").string(),
                     {"fold", "strategy", "n", "mae_years", "cs_percent", "pearson"});
  for (const auto& s : report.strategies) {
    for (std::size_t f = 0; f < report.folds.size(); ++f) {
      const auto& m = s.per_fold[f];
      fm.row({std::to_string(report.folds[f]), relations::strategy_name(s.id), std::to_string(m.n),
              csv_number(m.mae), csv_number(m.cs), csv_number(m.pearson)});
    }
    fm.row({"mean", relations::strategy_name(s.id), std::to_string(s.fold_mean.n),
            csv_number(s.fold_mean.mae), csv_number(s.fold_mean.cs), csv_number(s.fold_mean.pearson)});
    fm.row({"std", relations::strategy_name(s.id), "", csv_number(s.fold_std.mae),
            csv_number(s.fold_std.cs), csv_number(s.fold_std.pearson)});
  }
  est.close();
  scatter.close();
  unc.close();
  fm.close();
}

EvalReport read_report(const std::filesystem::path& report_json) {
  std::ifstream in(report_json);
  if (!in) throw ValidationError("cannot open report " + report_json.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError(report_json.string() + " is not valid JSON");
  return EvalReport::from_json(j);
}

}  // namespace drl::experiments
