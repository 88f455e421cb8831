// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/cv.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "drl/error.hpp"
#include "util/csv.hpp"
#include "util/hash.hpp"

namespace drl::experiments {

std::vector<CvSplit> cv_splits(const std::vector<data::Subject>& subjects, std::size_t k) {
  if (k < 2) throw ValidationError("cross-validation needs at least two folds");
  std::vector<CvSplit> splits(k);
  for (std::size_t f = 0; f < k; ++f) splits[f].fold = int(f);
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    const int f = subjects[i].fold;
    if (f < 0 || std::size_t(f) >= k)
      throw ValidationError("subject " + subjects[i].id + " has fold " + std::to_string(f) +
                            ", outside 0.." + std::to_string(k - 1));
    for (std::size_t g = 0; g < k; ++g) (int(g) == f ? splits[g].test : splits[g].train).push_back(i);
  }
  for (const auto& s : splits)
    if (s.test.empty()) throw ValidationError("fold " + std::to_string(s.fold) + " is empty");
  return splits;
}

std::vector<data::Subject> select(const std::vector<data::Subject>& subjects,
                                  const std::vector<std::size_t>& indices) {
  std::vector<data::Subject> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(subjects.at(i));
  return out;
}

std::vector<model::PairModel<float>*> FoldModels::pointers() const {
  std::vector<model::PairModel<float>*> out;
  for (const auto& m : models) out.push_back(m.get());
  return out;
}

model::ModelConfig fold_model_config(const RunConfig& config, std::size_t index) {
  auto c = config.model;
  c.head.relation_subset = model_subsets(config.loss.mode).at(index);
  return c;
}

std::string checkpoint_name(int fold, std::size_t index) {
  return "fold" + std::to_string(fold) + "-model" + std::to_string(index) + ".ckpt";
}

std::vector<int> folds_to_run(const RunConfig& config) {
  if (!config.cv.run_folds.empty()) return config.cv.run_folds;
  std::vector<int> all(config.cv.folds);
  for (std::size_t f = 0; f < all.size(); ++f) all[f] = int(f);
  return all;
}

namespace {

// Runs task(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& task) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<FoldModels> train_folds(const RunConfig& config,
                                    const std::vector<data::Subject>& subjects,
                                    const TrainOptions& options) {
  config.validate();
  const auto splits = cv_splits(subjects, config.cv.folds);
  const auto folds = folds_to_run(config);
  const std::size_t n_models = model_subsets(config.loss.mode).size();
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  std::vector<FoldModels> out(folds.size());
  parallel_for(folds.size(), config.cv.workers, [&](std::size_t i) {
    const int fold = folds[i];
    const auto& split = splits.at(std::size_t(fold));
    const auto train = select(subjects, split.train);
    const auto test = select(subjects, split.test);
    FoldModels fm;
    fm.fold = fold;
    for (std::size_t m = 0; m < n_models; ++m) {
      Trainer trainer(fold_model_config(config, m), config.schedule, config.generator.max_age,
                      util::mix64(config.seed, 100 * std::uint64_t(fold) + m));
      const auto path = options.checkpoint_dir.empty()
                            ? std::filesystem::path()
                            : options.checkpoint_dir / checkpoint_name(fold, m);
      if (options.resume && !path.empty() && std::filesystem::exists(path)) trainer.load(path);
      try {
        trainer.fit(train, test, -1, [&](const EpochLog& log) {
          if (!path.empty()) trainer.save(path);
          if (options.on_epoch) options.on_epoch(fold, m, log);
        });
      } catch (const RuntimeFailure& e) {
        throw RuntimeFailure("fold " + std::to_string(fold) + ", model " + std::to_string(m) +
                             " (" + relations::format_relation_subset(trainer.model().relations()) +
                             "): " + e.what());
      }
      if (!path.empty()) trainer.save(path);
      fm.curves.push_back(trainer.curve());
      fm.models.push_back(trainer.release_model());
    }
    out[i] = std::move(fm);
  });
  return out;
}

std::vector<FoldModels> load_folds(const RunConfig& config, const std::filesystem::path& dir) {
  config.validate();
  const std::size_t n_models = model_subsets(config.loss.mode).size();
  std::vector<FoldModels> out;
  for (int fold : folds_to_run(config)) {
    FoldModels fm;
    fm.fold = fold;
    for (std::size_t m = 0; m < n_models; ++m) {
      const auto path = dir / checkpoint_name(fold, m);
      if (!std::filesystem::exists(path))
        throw ValidationError("missing checkpoint " + path.string());
      fm.models.push_back(load_model(fold_model_config(config, m), path));
    }
    out.push_back(std::move(fm));
  }
  return out;
}

EvalReport evaluate_folds(const RunConfig& config, const std::vector<data::Subject>& subjects,
                          const std::vector<FoldModels>& folds) {
  const auto splits = cv_splits(subjects, config.cv.folds);
  std::vector<FoldResult> results(folds.size());
  parallel_for(folds.size(), config.cv.workers, [&](std::size_t i) {
    const auto& split = splits.at(std::size_t(folds[i].fold));
    results[i] = evaluate_fold(folds[i].fold, folds[i].pointers(), select(subjects, split.test),
                               select(subjects, split.train), config.evaluation,
                               config.generator.max_age,
                               util::mix64(config.seed, 0xe7a1 + std::uint64_t(folds[i].fold)));
  });
  return build_report(results, config.evaluation);
}

CvResult run_cv(const RunConfig& config, const std::vector<data::Subject>& subjects,
                const TrainOptions& options) {
  CvResult r;
  r.folds = train_folds(config, subjects, options);
  r.report = evaluate_folds(config, subjects, r.folds);
  return r;
}

namespace {

// "r1+r2": commas are not allowed inside a CSV field.
std::string relation_label(const std::vector<relations::Relation>& subset) {
  std::string s;
  for (auto r : subset) s += (s.empty() ? "" : "+") + std::string(relations::relation_name(r));
  return s;
}

}  // namespace

void write_training_curves(const std::filesystem::path& path, const RunConfig& config,
                           const std::vector<FoldModels>& folds) {
  util::CsvWriter out(path.string(), {"fold", "model", "relations", "epoch", "lr", "train_loss",
                                      "val_mae_r1", "val_mae_r2", "val_mae_r3", "val_mae_r4"});
  const auto subsets = model_subsets(config.loss.mode);
  for (const auto& f : folds)
    for (std::size_t m = 0; m < f.curves.size(); ++m)
      for (const auto& e : f.curves[m]) {
        std::vector<std::string> row{std::to_string(f.fold), std::to_string(m),
                                     relation_label(subsets.at(m)),
                                     std::to_string(e.epoch + 1), util::format_double(e.lr),
                                     util::format_double(e.train_loss)};
        for (double v : e.val_mae) row.push_back(std::isnan(v) ? "" : util::format_double(v));
        out.row(row);
      }
  out.close();
}

}  // namespace drl::experiments
