// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/trainer.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "drl/error.hpp"
#include "drl/experiments/metrics.hpp"
#include "drl/numerics/checkpoint.hpp"
#include "drl/relations/recovery.hpp"
#include "util/hash.hpp"

namespace drl::experiments {

namespace {

constexpr std::uint64_t kValidationStream = 0x7661;  // validation pairs
constexpr std::size_t kValidationChunk = 50;

std::vector<double> taus_of(const std::vector<data::Subject>& s) {
  std::vector<double> t;
  t.reserve(s.size());
  for (const auto& x : s) t.push_back(x.tau);
  return t;
}

nlohmann::json curve_json(const std::vector<EpochLog>& curve) {
  auto j = nlohmann::json::array();
  for (const auto& e : curve) {
    auto mae = nlohmann::json::array();
    for (double v : e.val_mae) mae.push_back(std::isnan(v) ? nlohmann::json() : nlohmann::json(v));
    j.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", e.train_loss}, {"val_mae", mae}});
  }
  return j;
}

std::vector<EpochLog> curve_from_json(const nlohmann::json& j) {
  std::vector<EpochLog> out;
  for (const auto& e : j) {
    EpochLog log;
    log.epoch = e.at("epoch").get<int>();
    log.lr = e.at("lr").get<double>();
    log.train_loss = e.at("train_loss").get<double>();
    for (std::size_t i = 0; i < 4; ++i) {
      const auto& v = e.at("val_mae").at(i);
      log.val_mae[i] = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
    out.push_back(log);
  }
  return out;
}

}  // namespace

nn::Tensor<float> relation_targets(const std::vector<double>& tau_x,
                                   const std::vector<double>& tau_y,
                                   const std::vector<relations::Relation>& subset,
                                   double max_age) {
  if (tau_x.size() != tau_y.size()) throw ValidationError("target age lists differ in length");
  const std::size_t n = tau_x.size(), k = subset.size();
  std::vector<float> v(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = relations::ground_truth_relations(tau_x[i], tau_y[i], max_age);
    for (std::size_t j = 0; j < k; ++j) v[i * k + j] = float(r.get(subset[j]));
  }
  return nn::Tensor<float>::from({n, k}, std::move(v));
}

Trainer::Trainer(const model::ModelConfig& model_config, const ScheduleConfig& schedule,
                 double max_age, std::uint64_t seed)
    : config_(model_config),
      schedule_(schedule),
      max_age_(max_age),
      seed_(seed),
      hash_(config_hash(model_config)) {
  schedule_.validate();
  model_ = std::make_unique<model::PairModel<float>>(config_, util::mix64(seed, 1));
  nn::AdamOptions options;
  options.base_lr = schedule_.base_lr;
  options.half_period = schedule_.half_period;
  optimizer_ = std::make_unique<nn::Adam<float>>(model_->state().parameters, options);
}

void Trainer::validation_error(const std::vector<data::Subject>& validation,
                                 std::array<double, 4>& mae) {
  mae.fill(std::numeric_limits<double>::quiet_NaN());
  if (validation.size() < 2 || schedule_.validation_pairs == 0) return;
  const auto taus = taus_of(validation);
  data::PairSampler sampler(taus, max_age_, schedule_.groups, false);
  std::mt19937_64 rng(util::mix64(seed_, kValidationStream));
  const auto pairs = sampler.sample(schedule_.validation_pairs, rng);
  const auto& subset = model_->relations();
  std::vector<double> sum(subset.size(), 0.0);
  nn::NoGradGuard no_grad;
  for (std::size_t start = 0; start < pairs.size(); start += kValidationChunk) {
    const std::size_t end = std::min(pairs.size(), start + kValidationChunk);
    std::vector<std::size_t> xi, yi;
    std::vector<double> tx, ty;
    for (std::size_t p = start; p < end; ++p) {
      xi.push_back(pairs[p].first);
      yi.push_back(pairs[p].second);
      tx.push_back(taus[pairs[p].first]);
      ty.push_back(taus[pairs[p].second]);
    }
    auto pred = model_->forward(data::stack_images(validation, xi), data::stack_images(validation, yi),
                                false);
    auto truth = relation_targets(tx, ty, subset, max_age_);
    const auto pv = pred.values();
    const auto tv = truth.values();
    for (std::size_t i = 0; i < pv.size(); ++i) sum[i % subset.size()] += std::abs(pv[i] - tv[i]);
  }
  for (std::size_t j = 0; j < subset.size(); ++j)
    mae[static_cast<std::size_t>(subset[j])] = sum[j] / double(pairs.size());
}

void Trainer::fit(const std::vector<data::Subject>& train,
                  const std::vector<data::Subject>& validation, int stop_epoch,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  if (train.size() < 2) throw ValidationError("training needs at least two subjects");
  if (stop_epoch < 0 || stop_epoch > schedule_.epochs) stop_epoch = schedule_.epochs;
  const auto taus = taus_of(train);
  data::PairSampler sampler(taus, max_age_, schedule_.groups, schedule_.allow_self_pairs);
  const std::size_t steps =
      schedule_.steps_per_epoch > 0
          ? schedule_.steps_per_epoch
          : (train.size() + schedule_.batch_size - 1) / schedule_.batch_size;
  const auto& subset = model_->relations();

  for (int epoch = epochs_done_; epoch < stop_epoch; ++epoch) {
    std::mt19937_64 rng(util::mix64(seed_, 1000 + std::uint64_t(epoch)));
    double loss_sum = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto pairs = sampler.sample(schedule_.batch_size, rng);
      std::vector<std::size_t> xi, yi;
      std::vector<double> tx, ty;
      for (const auto& [a, b] : pairs) {
        xi.push_back(a);
        yi.push_back(b);
        tx.push_back(taus[a]);
        ty.push_back(taus[b]);
      }
      auto pred = model_->forward(data::stack_images(train, xi), data::stack_images(train, yi), true);
      auto loss = relation_loss(pred, relation_targets(tx, ty, subset, max_age_));
      const double value = loss.item();
      if (!std::isfinite(value))
        throw RuntimeFailure("non-finite training loss (" + std::to_string(value) + ") at epoch " +
                             std::to_string(epoch + 1) + ", batch " + std::to_string(step + 1) +
                             " of " + std::to_string(steps));
      optimizer_->zero_grad();
      nn::backward(loss);
      optimizer_->step(epoch);
      loss_sum += value;
    }
    EpochLog log;
    log.epoch = epoch;
    log.lr = nn::scheduled_lr(schedule_.base_lr, epoch, schedule_.half_period);
    log.train_loss = loss_sum / double(steps);
    validation_error(validation, log.val_mae);
    curve_.push_back(log);
    epochs_done_ = epoch + 1;
    if (on_epoch) on_epoch(log);
  }
}

void Trainer::save(const std::filesystem::path& path) {
  nn::CheckpointInfo info;
  info.config_hash = hash_;
  info.epoch = epochs_done_;
  info.metadata = nlohmann::json{{"model", to_json(config_)}, {"curve", curve_json(curve_)}}.dump();
  auto state = model_->state();
  nn::save_checkpoint<float>(path, info, state, &optimizer_->state());
}

void Trainer::load(const std::filesystem::path& path) {
  const auto header = nn::read_checkpoint_info(path);
  if (header.config_hash != hash_)
    throw ValidationError("checkpoint " + path.string() + " was written for architecture " +
                          hex_hash(header.config_hash) + " but the config hashes to " +
                          hex_hash(hash_));
  auto state = model_->state();
  const auto info = nn::load_checkpoint<float>(path, state, &optimizer_->state());
  epochs_done_ = info.epoch;
  curve_ = curve_from_json(nlohmann::json::parse(info.metadata).at("curve"));
}

std::unique_ptr<model::PairModel<float>> load_model(const model::ModelConfig& config,
                                                    const std::filesystem::path& path) {
  const auto header = nn::read_checkpoint_info(path);
  const auto expected = config_hash(config);
  if (header.config_hash != expected)
    throw ValidationError("checkpoint " + path.string() + " was written for architecture " +
                          hex_hash(header.config_hash) + " but the config hashes to " +
                          hex_hash(expected));
  auto m = std::make_unique<model::PairModel<float>>(config, 0);
  auto state = m->state();
  nn::load_checkpoint<float>(path, state, nullptr);
  return m;
}

}  // namespace drl::experiments
