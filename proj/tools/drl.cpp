// SPDX-License-Identifier: Apache-2.0
// drl: generate data, train, evaluate, recover ages from relation files and
// compare reports. Exit codes: 0 success, 1 invalid input, 2 runtime failure.
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>

#include "CLI11.hpp"
#include "drl/error.hpp"
#include "drl/experiments/compare.hpp"
#include "drl/experiments/cv.hpp"
#include "json.hpp"
#include "util/csv.hpp"

namespace fs = std::filesystem;
using namespace drl;
using namespace drl::experiments;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "JSON run configuration (defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. --set schedule.epochs=5")
      ->take_all();
  cmd->add_option("-o,--out", c.out,
                  "Output root (default: config output_dir, else $DRL_OUTPUT_ROOT, else ./drl-output)");
}

nlohmann::json load_config_json(const Common& c) {
  nlohmann::json j = nlohmann::json::object();
  if (!c.config_path.empty()) {
    std::ifstream in(c.config_path);
    if (!in) throw ValidationError("cannot open config " + c.config_path);
    j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ValidationError(c.config_path + " is not valid JSON");
  }
  for (const auto& o : c.overrides) apply_override(j, o);
  return j;
}

RunConfig resolve(const Common& c) {
  auto config = run_config_from_json(load_config_json(c));
  config.validate();
  return config;
}

fs::path output_root(const Common& c, const RunConfig& config) {
  if (!c.out.empty()) return c.out;
  const char* env = std::getenv("DRL_OUTPUT_ROOT");
  const fs::path root = env && *env ? fs::path(env) : fs::path("drl-output");
  if (config.output_dir.empty()) return root;
  const fs::path dir(config.output_dir);
  return dir.is_absolute() || !(env && *env) ? dir : root / dir;
}

fs::path make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw RuntimeFailure("cannot create output directory " + p.string());
  return p;
}

void write_resolved(const fs::path& dir, const RunConfig& config) {
  std::ofstream out(dir / "resolved_config.json");
  out << to_json(config).dump(2) << "\n";
  if (!out) throw RuntimeFailure("cannot write " + (dir / "resolved_config.json").string());
}

std::vector<data::Subject> load_subjects(const std::string& manifest, const RunConfig& config) {
  if (!fs::exists(manifest))
    throw ValidationError("manifest " + manifest + " does not exist; run 'drl generate' first");
  auto subjects = data::load_dataset(manifest);
  nn::Shape expected{data::GeneratorConfig::kChannels};
  expected.insert(expected.end(), config.model.input_extents.begin(), config.model.input_extents.end());
  for (const auto& s : subjects)
    if (s.extents != expected)
      throw ValidationError("image of " + s.id + " has shape " + nn::shape_str(s.extents) +
                            " but the model expects " + nn::shape_str(expected));
  return subjects;
}

std::vector<int> parse_folds(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(int(util::parse_int(item, "fold")));
  return out;
}

std::mutex print_mutex;

void print_epoch(int fold, std::size_t model, int epochs, const EpochLog& log) {
  std::lock_guard lock(print_mutex);
  std::cout << "fold " << fold << " model " << model << " epoch " << log.epoch + 1 << "/" << epochs
            << " lr " << log.lr << " loss " << log.train_loss << " val_mae";
  for (double v : log.val_mae) std::cout << ' ' << (std::isnan(v) ? std::string("-") : std::to_string(v));
  std::cout << std::endl;
}

// ---------------------------------------------------------------------------

int cmd_generate(const Common& c, std::size_t workers) {
  const auto config = resolve(c);
  const auto dir = make_dir(output_root(c, config) / "dataset");
  const auto subjects = data::generate_dataset(config.generator, workers);
  const auto manifest = data::save_dataset(dir.string(), subjects);
  write_resolved(dir, config);
  std::cout << "wrote " << subjects.size() << " subjects to " << manifest << "\n";
  return 0;
}

struct TrainFlags {
  std::string manifest, folds;
  std::size_t workers = 0;
  bool resume = false;
};

void apply_train_flags(RunConfig& config, const TrainFlags& f) {
  if (!f.folds.empty()) config.cv.run_folds = parse_folds(f.folds);
  if (f.workers > 0) config.cv.workers = f.workers;
  config.validate();
}

std::string default_manifest(const fs::path& root, const std::string& given) {
  return given.empty() ? (root / "dataset" / "manifest.csv").string() : given;
}

std::vector<FoldModels> train_step(const RunConfig& config, const std::vector<data::Subject>& subjects,
                                   const fs::path& train_dir, bool resume) {
  TrainOptions opts;
  opts.checkpoint_dir = train_dir / "checkpoints";
  opts.resume = resume;
  opts.on_epoch = [&](int fold, std::size_t m, const EpochLog& log) {
    print_epoch(fold, m, config.schedule.epochs, log);
  };
  auto folds = train_folds(config, subjects, opts);
  write_training_curves(train_dir / "training_curve.csv", config, folds);
  write_resolved(train_dir, config);
  return folds;
}

int cmd_train(const Common& c, const TrainFlags& f) {
  auto config = resolve(c);
  apply_train_flags(config, f);
  const auto root = output_root(c, config);
  const auto subjects = load_subjects(default_manifest(root, f.manifest), config);
  const auto dir = make_dir(root / "train");
  const auto folds = train_step(config, subjects, dir, f.resume);
  std::cout << "trained " << folds.size() << " fold(s) x " << model_subsets(config.loss.mode).size()
            << " model(s); checkpoints in " << (dir / "checkpoints").string() << "\n";
  return 0;
}

struct EvalFlags {
  std::string checkpoints, strategies, mode;
  double alpha = std::numeric_limits<double>::quiet_NaN();
};

void apply_eval_flags(RunConfig& config, const EvalFlags& e) {
  if (!e.strategies.empty()) config.evaluation.strategies = relations::parse_strategy_list(e.strategies);
  if (!e.mode.empty()) {
    if (e.mode == "all")
      config.evaluation.modes = {relations::EvalMode::pair, relations::EvalMode::reference,
                                 relations::EvalMode::self};
    else
      config.evaluation.modes = {relations::parse_mode(e.mode)};
  }
  if (!std::isnan(e.alpha)) config.evaluation.alpha = e.alpha;
  config.validate();
}

void print_report(const EvalReport& r) {
  std::cout << "strategy  mode       MAE(yr)   CS(" << r.alpha << ")%   Pearson   folds: MAE mean+-std\n";
  for (const auto& s : r.strategies) {
    char line[160];
    std::snprintf(line, sizeof line, "%-9s %-10s %8.3f  %8.2f  %8.4f   %.3f +- %.3f\n",
                  relations::strategy_name(s.id).c_str(),
                  relations::mode_name(relations::strategy_mode(s.id)).c_str(), s.overall.mae,
                  s.overall.cs, s.overall.pearson, s.fold_mean.mae, s.fold_std.mae);
    std::cout << line;
  }
  std::cout << "best " << relations::strategy_name(r.best) << "; mean uncertainty "
            << r.uncertainty_mean << " yr (Pearson with age " << r.uncertainty_age_pearson
            << "); mean |r2| self " << r.self_r2_abs << " vs cross " << r.cross_r2_abs << "\n";
}

int cmd_evaluate(const Common& c, TrainFlags f, const EvalFlags& e) {
  auto config = resolve(c);
  apply_train_flags(config, f);
  apply_eval_flags(config, e);
  const auto root = output_root(c, config);
  const auto subjects = load_subjects(default_manifest(root, f.manifest), config);
  const fs::path ckpt = e.checkpoints.empty() ? root / "train" / "checkpoints" : fs::path(e.checkpoints);
  const auto folds = load_folds(config, ckpt);
  const auto report = evaluate_folds(config, subjects, folds);
  const auto dir = make_dir(root / "evaluate");
  write_report(report, dir);
  write_resolved(dir, config);
  print_report(report);
  std::cout << "report written to " << (dir / "report.json").string() << "\n";
  return 0;
}

int cmd_run(const Common& c, const TrainFlags& f, const EvalFlags& e) {
  auto config = resolve(c);
  apply_train_flags(config, f);
  apply_eval_flags(config, e);
  const auto root = output_root(c, config);
  const auto subjects = load_subjects(default_manifest(root, f.manifest), config);
  const auto folds = train_step(config, subjects, make_dir(root / "train"), f.resume);
  const auto report = evaluate_folds(config, subjects, folds);
  const auto dir = make_dir(root / "evaluate");
  write_report(report, dir);
  write_resolved(dir, config);
  print_report(report);
  return 0;
}

struct EstimateFlags {
  std::string relations, ages;
  double mc_threshold = 5;
  double max_age = 100;
};

// Recovery straight from a relation file: S1-S3 for both members of a pair,
// S4-S9 for x when y's age is known, S10-S16 when x and y coincide.
int cmd_estimate(const Common& c, const EstimateFlags& f) {
  using relations::StrategyId;
  const auto records = relations::read_relation_csv(f.relations);
  std::map<std::string, double> ages;
  if (!f.ages.empty())
    for (const auto& row : data::read_manifest(f.ages)) ages[row.id] = row.tau;
  if (!(f.max_age > 0)) throw ValidationError("--max-age must be > 0");

  std::map<std::pair<std::string, int>, std::pair<double, std::size_t>> acc;
  std::map<std::string, std::vector<relations::Comparison>> comparisons;
  auto add = [&](const std::string& id, StrategyId s, double v) {
    auto& a = acc[{id, static_cast<int>(s)}];
    a.first += v;
    ++a.second;
  };
  for (const auto& r : records) {
    const auto rec = relations::recover_pair(r.relations);
    add(r.x_id, StrategyId::S1, rec.s1.tau_x);
    add(r.y_id, StrategyId::S1, rec.s1.tau_y);
    add(r.x_id, StrategyId::S2, rec.s2.tau_x);
    add(r.y_id, StrategyId::S2, rec.s2.tau_y);
    add(r.x_id, StrategyId::S3, rec.s3.tau_x);
    add(r.y_id, StrategyId::S3, rec.s3.tau_y);
    if (auto it = ages.find(r.y_id); it != ages.end() && r.x_id != r.y_id) {
      const auto est = relations::recover_with_reference(r.relations, it->second);
      for (std::size_t k = 0; k < est.size(); ++k)
        add(r.x_id, StrategyId(static_cast<int>(StrategyId::S5) + int(k)), est[k]);
      comparisons[r.x_id].push_back(
          {it->second, relations::binarize_relation(r.relations.r2, f.mc_threshold)});
    }
    if (r.x_id == r.y_id) {
      const auto est = relations::recover_self(r.relations);
      for (std::size_t k = 0; k < est.size(); ++k)
        add(r.x_id, StrategyId(static_cast<int>(StrategyId::S10) + int(k)), est[k]);
    }
  }
  for (const auto& [id, comps] : comparisons)
    acc[{id, static_cast<int>(StrategyId::S4)}] = {
        relations::mc_estimate(comps, f.mc_threshold, f.max_age).age, 1};

  RunConfig defaults;
  const auto dir = make_dir(output_root(c, defaults) / "estimate");
  util::CsvWriter out((dir / "estimates.csv").string(),
                      {"subject_id", "strategy", "estimate_years", "pairs"});
  for (const auto& [key, value] : acc)
    out.row({key.first, relations::strategy_name(StrategyId(key.second)),
             util::format_double(value.first / double(value.second)), std::to_string(value.second)});
  out.close();
  std::cout << "wrote " << acc.size() << " estimates for " << records.size() << " relation rows to "
            << (dir / "estimates.csv").string() << "\n";
  return 0;
}

struct CompareFlags {
  std::vector<std::string> reports, names;
  std::string strategy = "S3";
  std::size_t baseline = 0;
};

int cmd_compare(const Common& c, const CompareFlags& f) {
  std::vector<EvalReport> reports;
  std::vector<std::string> names = f.names;
  for (const auto& p : f.reports) {
    fs::path path(p);
    if (fs::is_directory(path)) path /= "report.json";
    reports.push_back(read_report(path));
    if (f.names.empty()) names.push_back(p);
  }
  const auto cmp = compare_reports(names, reports, relations::parse_strategy(f.strategy), f.baseline);
  RunConfig defaults;
  const auto dir = make_dir(output_root(c, defaults) / "compare");
  write_comparison(cmp, dir);
  std::cout << cmp.table() << "significance: * p<0.05, ** p<0.01, *** p<0.001, **** p<0.0001\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep relation learning for age regression on paired images"};
  app.require_subcommand(1);
  Common common;
  std::size_t gen_workers = 1;
  TrainFlags train;
  EvalFlags eval;
  EstimateFlags estimate;
  CompareFlags compare;

  auto* gen = app.add_subcommand("generate", "Render a synthetic dataset (manifest + rasters)");
  add_common(gen, common);
  gen->add_option("--workers", gen_workers, "Rendering threads")->check(CLI::PositiveNumber);

  auto add_train = [&](CLI::App* cmd) {
    cmd->add_option("--manifest", train.manifest, "Dataset manifest (default <out>/dataset/manifest.csv)");
    cmd->add_option("--folds", train.folds, "Comma-separated folds to run (default all)");
    cmd->add_option("--workers", train.workers, "Folds processed in parallel");
  };
  auto add_eval = [&](CLI::App* cmd) {
    cmd->add_option("--strategies", eval.strategies, "Report only these strategies, e.g. S8,S15");
    cmd->add_option("--mode", eval.mode, "Evaluation mode: pair, reference, self or all")
        ->check(CLI::IsMember({"pair", "reference", "self", "all"}));
    cmd->add_option("--alpha", eval.alpha, "Cumulative-score threshold in years (default 5)");
  };

  auto* tr = app.add_subcommand("train", "Train the fold models and write checkpoints");
  add_common(tr, common);
  add_train(tr);
  tr->add_flag("--resume", train.resume, "Continue from existing checkpoints");

  auto* ev = app.add_subcommand("evaluate", "Evaluate trained checkpoints on their held-out folds");
  add_common(ev, common);
  add_train(ev);
  add_eval(ev);
  ev->add_option("--checkpoints", eval.checkpoints, "Checkpoint directory (default <out>/train/checkpoints)");

  auto* run = app.add_subcommand("run", "Train and evaluate in one go");
  add_common(run, common);
  add_train(run);
  add_eval(run);
  run->add_flag("--resume", train.resume, "Continue from existing checkpoints");

  auto* est = app.add_subcommand("estimate", "Recover ages from a relation CSV");
  add_common(est, common);
  est->add_option("relations", estimate.relations, "CSV: pair_id,x_id,y_id,r1_hat,r2_hat,r3_hat,r4_hat")
      ->required()
      ->check(CLI::ExistingFile);
  est->add_option("--ages", estimate.ages, "Manifest supplying known ages of the y subjects");
  est->add_option("--mc-threshold", estimate.mc_threshold, "Similarity threshold t of the MC rule");
  est->add_option("--max-age", estimate.max_age, "Largest age A");

  auto* cmp = app.add_subcommand("compare", "Paired t-tests and ranks across evaluation reports");
  add_common(cmp, common);
  cmp->add_option("reports", compare.reports, "report.json files or evaluate directories")
      ->required()
      ->check(CLI::ExistingPath);
  cmp->add_option("--names", compare.names, "Display names, one per report")->delimiter(',');
  cmp->add_option("--strategy", compare.strategy, "Strategy column to compare (default S3)");
  cmp->add_option("--baseline", compare.baseline, "Index of the baseline report (default 0)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(common, gen_workers);
    if (*tr) return cmd_train(common, train);
    if (*ev) return cmd_evaluate(common, train, eval);
    if (*run) return cmd_run(common, train, eval);
    if (*est) return cmd_estimate(common, estimate);
    if (*cmp) return cmd_compare(common, compare);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
