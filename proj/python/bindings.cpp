// SPDX-License-Identifier: Apache-2.0
// Python bindings. Configurations and reports cross the boundary as JSON text;
// the drlreg package converts them to and from dicts.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "drl/error.hpp"
#include "drl/experiments/compare.hpp"
#include "drl/experiments/cv.hpp"
#include "drl/model/pair_model.hpp"

namespace py = pybind11;
using namespace drl;

namespace {

relations::RelationVector relation_vector(const std::vector<double>& r) {
  if (r.size() != 4) throw ValidationError("expected four relations (r1, r2, r3, r4)");
  relations::RelationVector v;
  v.r1 = r[0];
  v.r2 = r[1];
  v.r3 = r[2];
  v.r4 = r[3];
  return v;
}

py::dict metrics_dict(const experiments::Metrics& m) {
  py::dict d;
  d["mae"] = m.mae;
  d["cs"] = m.cs;
  d["pearson"] = m.pearson;
  d["n"] = m.n;
  return d;
}

experiments::RunConfig run_config(const std::string& json_text) {
  auto c = experiments::run_config_from_json(nlohmann::json::parse(json_text));
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_drlreg, m) {
  m.doc() = "Deep relation learning for age regression: native core";

  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<RuntimeFailure>(m, "RuntimeFailure", PyExc_RuntimeError);

  // Relations and recovery.
  m.def("ground_truth_relations",
        [](double tx, double ty, double max_age) {
          const auto r = relations::ground_truth_relations(tx, ty, max_age);
          return std::vector<double>{r.r1, r.r2, r.r3, r.r4};
        },
        py::arg("tau_x"), py::arg("tau_y"), py::arg("max_age") = 100.0);
  m.def("recover_pair",
        [](const std::vector<double>& r) {
          const auto p = relations::recover_pair(relation_vector(r));
          py::dict d;
          d["S1"] = py::make_tuple(p.s1.tau_x, p.s1.tau_y);
          d["S2"] = py::make_tuple(p.s2.tau_x, p.s2.tau_y);
          d["S3"] = py::make_tuple(p.s3.tau_x, p.s3.tau_y);
          return d;
        },
        py::arg("relations"), "(tau_x, tau_y) estimates of S1..S3");
  m.def("recover_with_reference",
        [](const std::vector<double>& r, double tau_y) {
          const auto e = relations::recover_with_reference(relation_vector(r), tau_y);
          return std::vector<double>(e.begin(), e.end());
        },
        py::arg("relations"), py::arg("tau_y"), "tau_x estimates of S5..S9");
  m.def("recover_self",
        [](const std::vector<double>& r) {
          const auto e = relations::recover_self(relation_vector(r));
          return std::vector<double>(e.begin(), e.end());
        },
        py::arg("relations"), "tau_x estimates of S10..S16 from the pair (x, x)");
  m.def("mc_estimate",
        [](const std::vector<std::pair<double, double>>& ref_and_r2, double t, double max_age) {
          std::vector<relations::Comparison> c;
          for (auto [age, r2] : ref_and_r2) c.push_back({age, relations::binarize_relation(r2, t)});
          const auto res = relations::mc_estimate(c, t, max_age);
          return py::make_tuple(res.age, res.consistency);
        },
        py::arg("references"), py::arg("t") = 5.0, py::arg("max_age") = 100.0,
        "references: (reference age, predicted r2) pairs; returns (age, consistency)");

  // Metrics and statistics.
  m.def("compute_metrics",
        [](const std::vector<double>& e, const std::vector<double>& t, double alpha) {
          return metrics_dict(experiments::compute_metrics(e, t, alpha));
        },
        py::arg("estimates"), py::arg("truths"), py::arg("alpha") = 5.0);
  m.def("paired_t_test",
        [](const std::vector<double>& a, const std::vector<double>& b) {
          const auto r = experiments::paired_t_test(a, b);
          return py::make_tuple(r.t, r.p);
        },
        py::arg("errors_a"), py::arg("errors_b"));
  m.def("student_t_two_sided_p", &experiments::student_t_two_sided_p, py::arg("t"), py::arg("df"));
  m.def("significance_stars", &experiments::significance_stars, py::arg("p"));
  m.def("uncertainty", &experiments::uncertainty, py::arg("estimates"));
  m.def("rank_models", &experiments::rank_models, py::arg("mae"));

  // Data.
  m.def("make_folds", &data::make_folds, py::arg("n"), py::arg("k"), py::arg("seed"));
  m.def("generate_image",
        [](double tau, const std::string& cohort, const std::string& config_json,
           const std::string& id) {
          const auto c = experiments::generator_config_from_json(nlohmann::json::parse(config_json));
          c.validate();
          const auto s = data::generate_subject(id, tau, cohort, c);
          std::vector<py::ssize_t> shape(s.extents.begin(), s.extents.end());
          py::array_t<float> out(shape);
          std::copy(s.image.begin(), s.image.end(), out.mutable_data());
          return out;
        },
        py::arg("tau"), py::arg("cohort"), py::arg("config_json"), py::arg("id") = "sub-00000");
  m.def("generate_dataset",
        [](const std::string& config_json, const std::string& dir) {
          const auto c = experiments::generator_config_from_json(nlohmann::json::parse(config_json));
          c.validate();
          py::gil_scoped_release release;
          return data::save_dataset(dir, data::generate_dataset(c));
        },
        py::arg("config_json"), py::arg("directory"), "Writes the dataset; returns the manifest path");

  // Model.
  m.def("describe_pipeline",
        [](const std::string& model_json) {
          return model::describe_pipeline(
                     experiments::model_config_from_json(nlohmann::json::parse(model_json)))
              .dump();
        },
        py::arg("model_json"));
  m.def("config_hash",
        [](const std::string& model_json) {
          return experiments::hex_hash(experiments::config_hash(
              experiments::model_config_from_json(nlohmann::json::parse(model_json))));
        },
        py::arg("model_json"));
  m.def("default_config", [] { return experiments::to_json(experiments::RunConfig{}).dump(); });
  m.def("resolve_config", [](const std::string& j) { return experiments::to_json(run_config(j)).dump(); },
        py::arg("config_json"));

  // Experiments.
  m.def("run_cv",
        [](const std::string& config_json, const std::string& manifest, const std::string& out_dir) {
          const auto c = run_config(config_json);
          py::gil_scoped_release release;
          auto subjects = data::load_dataset(manifest);
          const auto result = experiments::run_cv(c, subjects);
          if (!out_dir.empty()) {
            experiments::write_report(result.report, out_dir);
            experiments::write_training_curves(std::filesystem::path(out_dir) / "training_curve.csv",
                                               c, result.folds);
          }
          return result.report.to_json().dump();
        },
        py::arg("config_json"), py::arg("manifest"), py::arg("out_dir") = "",
        "Trains and evaluates the configured folds; returns the report as JSON text");
  m.def("compare_reports",
        [](const std::vector<std::string>& names, const std::vector<std::string>& reports,
           const std::string& strategy, std::size_t baseline) {
          std::vector<experiments::EvalReport> parsed;
          for (const auto& r : reports)
            parsed.push_back(experiments::EvalReport::from_json(nlohmann::json::parse(r)));
          return experiments::compare_reports(names, parsed, relations::parse_strategy(strategy),
                                              baseline)
              .to_json()
              .dump();
        },
        py::arg("names"), py::arg("reports_json"), py::arg("strategy") = "S3",
        py::arg("baseline") = 0);
}
