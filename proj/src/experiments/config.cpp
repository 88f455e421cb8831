// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/config.hpp"

#include <cstdio>
#include <set>

#include "drl/error.hpp"
#include "util/hash.hpp"

namespace drl::experiments {

using nlohmann::json;
using relations::Relation;

std::vector<std::vector<Relation>> model_subsets(LossMode mode) {
  switch (mode) {
    case LossMode::joint:
      return {{Relation::r1, Relation::r2, Relation::r3, Relation::r4}};
    case LossMode::pair:
      return {{Relation::r1, Relation::r2}, {Relation::r3, Relation::r4}};
    case LossMode::single:
      return {{Relation::r1}, {Relation::r2}, {Relation::r3}, {Relation::r4}};
  }
  throw ValidationError("unknown loss mode");
}

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::joint: return "joint";
    case LossMode::pair: return "pair";
    case LossMode::single: return "single";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& s) {
  if (s == "joint") return LossMode::joint;
  if (s == "pair") return LossMode::pair;
  if (s == "single") return LossMode::single;
  throw ValidationError("unknown loss mode '" + s + "' (expected joint, pair or single)");
}

ScheduleConfig ScheduleConfig::preset_named(const std::string& name) {
  ScheduleConfig s;
  s.preset = name;
  if (name == "desk") {
    s.epochs = 30;
    s.half_period = 15;
  } else if (name == "paper-schedule") {
    s.epochs = 80;
    s.half_period = 35;
  } else {
    throw ValidationError("unknown schedule preset '" + name +
                          "' (expected desk or paper-schedule)");
  }
  return s;
}

void ScheduleConfig::validate() const {
  if (epochs < 1) throw ValidationError("schedule.epochs must be >= 1");
  if (half_period < 1) throw ValidationError("schedule.half_period must be >= 1");
  if (!(base_lr > 0)) throw ValidationError("schedule.base_lr must be > 0");
  if (batch_size < 2) throw ValidationError("schedule.batch_size must be >= 2 (batch norm)");
  if (groups < 1) throw ValidationError("schedule.groups must be >= 1");
}

void EvalConfig::validate() const {
  if (!(alpha >= 0)) throw ValidationError("evaluation.alpha must be >= 0");
  if (!(mc_threshold >= 0)) throw ValidationError("evaluation.mc_threshold must be >= 0");
  if (references_per_bin < 1) throw ValidationError("evaluation.references_per_bin must be >= 1");
  if (pairing_seeds < 1) throw ValidationError("evaluation.pairing_seeds must be >= 1");
  if (batch_pairs < 1) throw ValidationError("evaluation.batch_pairs must be >= 1");
  if (strategies.empty()) throw ValidationError("evaluation.strategies is empty");
  if (modes.empty()) throw ValidationError("evaluation.modes is empty");
  if (active_strategies().empty())
    throw ValidationError("no selected strategy belongs to a selected evaluation mode");
}

std::vector<relations::StrategyId> EvalConfig::active_strategies() const {
  std::vector<relations::StrategyId> out;
  for (auto s : relations::all_strategies()) {
    bool chosen = false, mode_on = false;
    for (auto t : strategies) chosen |= t == s;
    for (auto m : modes) mode_on |= m == relations::strategy_mode(s);
    if (chosen && mode_on) out.push_back(s);
  }
  return out;
}

void RunConfig::sync() { model.input_extents = generator.extents; }

void RunConfig::validate() const {
  generator.validate();
  model.validate();
  schedule.validate();
  evaluation.validate();
  if (model.input_extents != generator.extents)
    throw ValidationError("model input extents differ from the generator extents");
  if (model.backbone.in_channels != data::GeneratorConfig::kChannels)
    throw ValidationError("backbone.in_channels must be " +
                          std::to_string(data::GeneratorConfig::kChannels));
  if (cv.folds < 2) throw ValidationError("cv.folds must be >= 2");
  if (cv.folds != generator.folds)
    throw ValidationError("cv.folds (" + std::to_string(cv.folds) +
                          ") must equal generator.folds (" + std::to_string(generator.folds) + ")");
  for (int f : cv.run_folds)
    if (f < 0 || std::size_t(f) >= cv.folds)
      throw ValidationError("cv.run_folds entry " + std::to_string(f) + " is out of range");
  if (cv.workers < 1) throw ValidationError("cv.workers must be >= 1");
}

// ---------------------------------------------------------------------------
// JSON.

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ValidationError(where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ValidationError("unknown key '" + k + "' in " + where);
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ValidationError(where + "." + key + " has the wrong type: " + j.at(key).dump());
  }
}

json relations_json(const std::vector<Relation>& rs) {
  json a = json::array();
  for (auto r : rs) a.push_back(std::string(relations::relation_name(r)));
  return a;
}

}  // namespace

json to_json(const model::ModelConfig& c) {
  return {{"backbone",
           {{"variant", model::to_string(c.backbone.variant)},
            {"sharing", model::to_string(c.backbone.sharing)},
            {"spatial_dims", c.backbone.spatial_dims},
            {"in_channels", c.backbone.in_channels},
            {"channel_plan", c.backbone.channel_plan}}},
          {"head",
           {{"variant", model::to_string(c.head.variant)},
            {"num_blocks", c.head.num_blocks},
            {"num_heads", c.head.num_heads},
            {"relation_subset", relations_json(c.head.relation_subset)},
            {"positional_embedding", c.head.positional_embedding},
            {"token_selection", model::to_string(c.head.token_selection)},
            {"ffn_multiplier", c.head.ffn_multiplier},
            {"fc_width", c.head.fc_width}}},
          {"input_extents", c.input_extents},
          {"output_scale", c.output_scale}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  reject_unknown(j, {"backbone", "head", "input_extents", "output_scale"}, "model");
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown(b, {"variant", "sharing", "spatial_dims", "in_channels", "channel_plan"},
                   "model.backbone");
    std::string s;
    if (b.contains("variant")) {
      read(b, "variant", s, "model.backbone");
      c.backbone.variant = model::parse_backbone_variant(s);
    }
    if (b.contains("sharing")) {
      read(b, "sharing", s, "model.backbone");
      c.backbone.sharing = model::parse_sharing(s);
    }
    read(b, "spatial_dims", c.backbone.spatial_dims, "model.backbone");
    read(b, "in_channels", c.backbone.in_channels, "model.backbone");
    read(b, "channel_plan", c.backbone.channel_plan, "model.backbone");
  }
  if (j.contains("head")) {
    const auto& h = j.at("head");
    reject_unknown(h,
                   {"variant", "num_blocks", "num_heads", "relation_subset",
                    "positional_embedding", "token_selection", "ffn_multiplier", "fc_width"},
                   "model.head");
    std::string s;
    if (h.contains("variant")) {
      read(h, "variant", s, "model.head");
      c.head.variant = model::parse_head_variant(s);
    }
    read(h, "num_blocks", c.head.num_blocks, "model.head");
    read(h, "num_heads", c.head.num_heads, "model.head");
    if (h.contains("relation_subset")) {
      std::vector<std::string> names;
      read(h, "relation_subset", names, "model.head");
      std::string joined;
      for (const auto& n : names) joined += (joined.empty() ? "" : ",") + n;
      c.head.relation_subset = relations::parse_relation_subset(joined);
    }
    read(h, "positional_embedding", c.head.positional_embedding, "model.head");
    if (h.contains("token_selection")) {
      read(h, "token_selection", s, "model.head");
      c.head.token_selection = model::parse_token_selection(s);
    }
    read(h, "ffn_multiplier", c.head.ffn_multiplier, "model.head");
    read(h, "fc_width", c.head.fc_width, "model.head");
  }
  read(j, "input_extents", c.input_extents, "model");
  read(j, "output_scale", c.output_scale, "model");
  return c;
}

json to_json(const data::GeneratorConfig& c) {
  json mixture = json::array();
  for (const auto& m : c.mixture)
    mixture.push_back({{"weight", m.weight}, {"mean", m.mean}, {"stddev", m.stddev}});
  json cohorts = json::array();
  for (const auto& k : c.cohorts)
    cohorts.push_back({{"name", k.name}, {"contrast", k.contrast}, {"background", k.background}});
  return {{"max_age", c.max_age},
          {"n_subjects", c.n_subjects},
          {"extents", c.extents},
          {"noise_sigma", c.noise_sigma},
          {"max_radius_fraction", c.max_radius_fraction},
          {"centre_jitter", c.centre_jitter},
          {"age_distribution", data::to_string(c.age_distribution)},
          {"mixture", mixture},
          {"cohorts", cohorts},
          {"folds", c.folds},
          {"seed", c.seed}};
}

data::GeneratorConfig generator_config_from_json(const json& j) {
  data::GeneratorConfig c;
  const std::string w = "generator";
  reject_unknown(j,
                 {"max_age", "n_subjects", "extents", "noise_sigma", "max_radius_fraction",
                  "centre_jitter", "age_distribution", "mixture", "cohorts", "folds", "seed"},
                 w);
  read(j, "max_age", c.max_age, w);
  read(j, "n_subjects", c.n_subjects, w);
  read(j, "extents", c.extents, w);
  read(j, "noise_sigma", c.noise_sigma, w);
  read(j, "max_radius_fraction", c.max_radius_fraction, w);
  read(j, "centre_jitter", c.centre_jitter, w);
  if (j.contains("age_distribution")) {
    std::string s;
    read(j, "age_distribution", s, w);
    c.age_distribution = data::parse_age_distribution(s);
  }
  if (j.contains("mixture")) {
    c.mixture.clear();
    for (const auto& m : j.at("mixture")) {
      reject_unknown(m, {"weight", "mean", "stddev"}, w + ".mixture[]");
      data::MixtureComponent comp;
      read(m, "weight", comp.weight, w + ".mixture[]");
      read(m, "mean", comp.mean, w + ".mixture[]");
      read(m, "stddev", comp.stddev, w + ".mixture[]");
      c.mixture.push_back(comp);
    }
  }
  if (j.contains("cohorts")) {
    c.cohorts.clear();
    for (const auto& k : j.at("cohorts")) {
      reject_unknown(k, {"name", "contrast", "background"}, w + ".cohorts[]");
      data::CohortSpec spec;
      read(k, "name", spec.name, w + ".cohorts[]");
      read(k, "contrast", spec.contrast, w + ".cohorts[]");
      read(k, "background", spec.background, w + ".cohorts[]");
      c.cohorts.push_back(spec);
    }
  }
  read(j, "folds", c.folds, w);
  read(j, "seed", c.seed, w);
  return c;
}

json to_json(const RunConfig& c) {
  json strategies = json::array();
  for (auto s : c.evaluation.strategies) strategies.push_back(relations::strategy_name(s));
  json modes = json::array();
  for (auto m : c.evaluation.modes) modes.push_back(relations::mode_name(m));
  return {{"generator", to_json(c.generator)},
          {"model", to_json(c.model)},
          {"loss", {{"mode", to_string(c.loss.mode)}}},
          {"schedule",
           {{"preset", c.schedule.preset},
            {"epochs", c.schedule.epochs},
            {"half_period", c.schedule.half_period},
            {"base_lr", c.schedule.base_lr},
            {"batch_size", c.schedule.batch_size},
            {"steps_per_epoch", c.schedule.steps_per_epoch},
            {"groups", c.schedule.groups},
            {"allow_self_pairs", c.schedule.allow_self_pairs},
            {"validation_pairs", c.schedule.validation_pairs}}},
          {"cv", {{"folds", c.cv.folds}, {"run_folds", c.cv.run_folds}, {"workers", c.cv.workers}}},
          {"evaluation",
           {{"alpha", c.evaluation.alpha},
            {"mc_threshold", c.evaluation.mc_threshold},
            {"references_per_bin", c.evaluation.references_per_bin},
            {"strategies", strategies},
            {"modes", modes},
            {"pairing_seeds", c.evaluation.pairing_seeds},
            {"batch_pairs", c.evaluation.batch_pairs}}},
          {"seed", c.seed},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j,
                 {"generator", "model", "loss", "schedule", "cv", "evaluation", "seed",
                  "output_dir"},
                 "config");
  if (j.contains("generator")) c.generator = generator_config_from_json(j.at("generator"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (!j.contains("model") || !j.at("model").contains("input_extents")) c.sync();
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"mode"}, "loss");
    std::string s = "joint";
    read(l, "mode", s, "loss");
    c.loss.mode = parse_loss_mode(s);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s,
                   {"preset", "epochs", "half_period", "base_lr", "batch_size", "steps_per_epoch",
                    "groups", "allow_self_pairs", "validation_pairs"},
                   "schedule");
    // A preset supplies defaults; explicit keys override it.
    if (s.contains("preset")) {
      std::string name;
      read(s, "preset", name, "schedule");
      c.schedule = ScheduleConfig::preset_named(name);
    }
    read(s, "epochs", c.schedule.epochs, "schedule");
    read(s, "half_period", c.schedule.half_period, "schedule");
    read(s, "base_lr", c.schedule.base_lr, "schedule");
    read(s, "batch_size", c.schedule.batch_size, "schedule");
    read(s, "steps_per_epoch", c.schedule.steps_per_epoch, "schedule");
    read(s, "groups", c.schedule.groups, "schedule");
    read(s, "allow_self_pairs", c.schedule.allow_self_pairs, "schedule");
    read(s, "validation_pairs", c.schedule.validation_pairs, "schedule");
  }
  if (j.contains("cv")) {
    const auto& v = j.at("cv");
    reject_unknown(v, {"folds", "run_folds", "workers"}, "cv");
    read(v, "folds", c.cv.folds, "cv");
    read(v, "run_folds", c.cv.run_folds, "cv");
    read(v, "workers", c.cv.workers, "cv");
  }
  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    reject_unknown(e,
                   {"alpha", "mc_threshold", "references_per_bin", "strategies", "modes",
                    "pairing_seeds", "batch_pairs"},
                   "evaluation");
    read(e, "alpha", c.evaluation.alpha, "evaluation");
    read(e, "mc_threshold", c.evaluation.mc_threshold, "evaluation");
    read(e, "references_per_bin", c.evaluation.references_per_bin, "evaluation");
    if (e.contains("strategies")) {
      std::vector<std::string> names;
      read(e, "strategies", names, "evaluation");
      std::string joined;
      for (const auto& n : names) joined += (joined.empty() ? "" : ",") + n;
      c.evaluation.strategies = relations::parse_strategy_list(joined);
    }
    if (e.contains("modes")) {
      std::vector<std::string> names;
      read(e, "modes", names, "evaluation");
      c.evaluation.modes.clear();
      for (const auto& n : names) {
        auto m = relations::parse_mode(n);
        for (auto existing : c.evaluation.modes)
          if (existing == m) throw ValidationError("evaluation mode '" + n + "' listed twice");
        c.evaluation.modes.push_back(m);
      }
    }
    read(e, "pairing_seeds", c.evaluation.pairing_seeds, "evaluation");
    read(e, "batch_pairs", c.evaluation.batch_pairs, "evaluation");
  }
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");
  return c;
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ValidationError("override '" + assignment + "' is not of the form key.path=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot - start);
    if (part.empty()) throw ValidationError("override key '" + path + "' has an empty component");
    pointer += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  config[json::json_pointer(pointer)] = value;
}

std::uint64_t config_hash(const model::ModelConfig& c) { return util::fnv1a64(to_json(c).dump()); }

std::string hex_hash(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace drl::experiments
