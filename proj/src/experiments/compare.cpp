// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/compare.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "drl/error.hpp"
#include "util/csv.hpp"

namespace drl::experiments {

namespace {

std::string fixed(double v, int digits) {
  if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

Comparison compare_reports(const std::vector<std::string>& names,
                           const std::vector<EvalReport>& reports, relations::StrategyId strategy,
                           std::size_t baseline) {
  if (reports.empty()) throw ValidationError("nothing to compare");
  if (names.size() != reports.size()) throw ValidationError("one name per report is required");
  if (baseline >= reports.size())
    throw ValidationError("baseline index " + std::to_string(baseline) + " is out of range");
  const auto& base = reports[baseline];
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& rep = reports[r];
    if (rep.subjects.size() != base.subjects.size())
      throw ValidationError("report '" + names[r] + "' has " + std::to_string(rep.subjects.size()) +
                            " held-out subjects but the baseline has " +
                            std::to_string(base.subjects.size()));
    for (std::size_t i = 0; i < rep.subjects.size(); ++i)
      if (rep.subjects[i].id != base.subjects[i].id)
        throw ValidationError("report '" + names[r] + "' holds out a different subject set (" +
                              rep.subjects[i].id + " vs " + base.subjects[i].id + ")");
    (void)rep.strategy(strategy);  // throws when the column is missing
  }

  const std::size_t k = static_cast<std::size_t>(strategy) - 1;
  auto abs_errors = [&](const EvalReport& rep, const std::string& name) {
    std::vector<double> e;
    for (const auto& s : rep.subjects) {
      if (std::isnan(s.estimate[k]))
        throw ValidationError("report '" + name + "' lacks a " + relations::strategy_name(strategy) +
                              " estimate for " + s.id);
      e.push_back(std::abs(s.estimate[k] - s.tau));
    }
    return e;
  };

  Comparison c;
  c.strategy = strategy;
  c.baseline = baseline;
  c.cohorts = base.cohorts();
  const auto base_errors = abs_errors(base, names[baseline]);
  std::vector<std::vector<double>> mae_table;
  for (std::size_t r = 0; r < reports.size(); ++r) {
    ComparisonRow row;
    row.name = names[r];
    row.metrics = reports[r].strategy(strategy).overall;
    row.vs_baseline = paired_t_test(abs_errors(reports[r], names[r]), base_errors);
    row.stars = significance_stars(row.vs_baseline.p);
    const auto& cm = reports[r].strategy(strategy).cohort_mae;
    for (const auto& cohort : c.cohorts) {
      auto it = cm.find(cohort);
      if (it == cm.end()) throw ValidationError("report '" + names[r] + "' has no cohort " + cohort);
      row.cohort_mae.push_back(it->second);
    }
    mae_table.push_back(row.cohort_mae);
    c.rows.push_back(std::move(row));
  }
  const auto ranks = rank_models(mae_table);
  for (std::size_t r = 0; r < c.rows.size(); ++r) c.rows[r].average_rank = ranks[r];
  return c;
}

nlohmann::json Comparison::to_json() const {
  auto rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json cohort = nlohmann::json::object();
    for (std::size_t i = 0; i < cohorts.size(); ++i) cohort[cohorts[i]] = r.cohort_mae[i];
    rows_json.push_back({{"name", r.name},
                         {"mae", r.metrics.mae},
                         {"cs", r.metrics.cs},
                         {"pearson", std::isnan(r.metrics.pearson) ? nlohmann::json()
                                                                   : nlohmann::json(r.metrics.pearson)},
                         {"t", std::isfinite(r.vs_baseline.t) ? nlohmann::json(r.vs_baseline.t)
                                                              : nlohmann::json(fixed(r.vs_baseline.t, 0))},
                         {"p", r.vs_baseline.p},
                         {"stars", r.stars},
                         {"cohort_mae", cohort},
                         {"average_rank", r.average_rank}});
  }
  return {{"strategy", relations::strategy_name(strategy)},
          {"baseline", rows.at(baseline).name},
          {"cohorts", cohorts},
          {"rows", rows_json}};
}

std::string Comparison::table() const {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> header{"model", "MAE", "CS", "Pearson", "t", "p", "sig"};
  for (const auto& c : cohorts) header.push_back("MAE " + c);
  header.push_back("avg rank");
  cells.push_back(header);
  for (const auto& r : rows) {
    std::vector<std::string> line{r.name,
                                  fixed(r.metrics.mae, 3),
                                  fixed(r.metrics.cs, 2),
                                  fixed(r.metrics.pearson, 4),
                                  fixed(r.vs_baseline.t, 3),
                                  fixed(r.vs_baseline.p, 4),
                                  r.stars};
    for (double m : r.cohort_mae) line.push_back(fixed(m, 3));
    line.push_back(fixed(r.average_rank, 2));
    cells.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::string out = relations::strategy_name(strategy) + " against baseline '" +
                    rows.at(baseline).name + "'\n";
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      out += line[i];
      if (i + 1 < line.size()) out += std::string(width[i] - line[i].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

void write_comparison(const Comparison& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream json_out(dir / "comparison.json");
  if (!json_out) throw RuntimeFailure("cannot write " + (dir / "comparison.json").string());
  json_out << c.to_json().dump(2) << "\n";
  std::vector<std::string> header{"model", "mae_years", "cs_percent", "pearson", "t", "p", "stars"};
  for (const auto& cohort : c.cohorts) header.push_back("mae_" + cohort);
  header.push_back("average_rank");
  util::CsvWriter csv((dir / "comparison.csv").string(), header);
  for (const auto& r : c.rows) {
    std::vector<std::string> row{r.name,
                                 util::format_double(r.metrics.mae),
                                 util::format_double(r.metrics.cs),
                                 std::isnan(r.metrics.pearson) ? "" : util::format_double(r.metrics.pearson),
                                 util::format_double(r.vs_baseline.t),
                                 util::format_double(r.vs_baseline.p),
                                 r.stars};
    for (double m : r.cohort_mae) row.push_back(util::format_double(m));
    row.push_back(util::format_double(r.average_rank));
    csv.row(row);
  }
  csv.close();
}

}  // namespace drl::experiments
