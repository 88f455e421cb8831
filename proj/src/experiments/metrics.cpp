// SPDX-License-Identifier: Apache-2.0
#include "drl/experiments/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drl/error.hpp"
#include "drl/numerics/ops.hpp"

namespace drl::experiments {

template <typename T>
nn::Tensor<T> relation_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& truth) {
  if (pred.rank() != 2 || truth.rank() != 2)
    throw ValidationError("relation loss expects (N, K) tensors, got " + nn::shape_str(pred.shape()) +
                          " and " + nn::shape_str(truth.shape()));
  if (pred.dim(1) != truth.dim(1))
    throw ValidationError("relation loss: prediction has K = " + std::to_string(pred.dim(1)) +
                          " relations but targets have K = " + std::to_string(truth.dim(1)));
  if (pred.dim(0) != truth.dim(0))
    throw ValidationError("relation loss: batch sizes differ (" + std::to_string(pred.dim(0)) +
                          " vs " + std::to_string(truth.dim(0)) + ")");
  return nn::scale(nn::sum(nn::abs(nn::sub(pred, truth))), T(1) / T(pred.dim(0)));
}

template nn::Tensor<float> relation_loss(const nn::Tensor<float>&, const nn::Tensor<float>&);
template nn::Tensor<double> relation_loss(const nn::Tensor<double>&, const nn::Tensor<double>&);

double mean(const std::vector<double>& v) {
  if (v.empty()) throw ValidationError("mean of an empty list");
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / double(v.size() - 1));
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ValidationError("pearson: lengths differ (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  if (a.size() < 2) throw ValidationError("pearson needs at least two values");
  const double ma = mean(a), mb = mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Metrics compute_metrics(const std::vector<double>& estimates, const std::vector<double>& truths,
                        double alpha) {
  if (estimates.size() != truths.size())
    throw ValidationError("metrics: " + std::to_string(estimates.size()) + " estimates for " +
                          std::to_string(truths.size()) + " truths");
  if (estimates.empty()) throw ValidationError("metrics need at least one estimate");
  if (!(alpha >= 0)) throw ValidationError("alpha must be >= 0");
  Metrics m;
  m.n = estimates.size();
  std::size_t within = 0;
  for (std::size_t i = 0; i < m.n; ++i) {
    const double e = std::abs(estimates[i] - truths[i]);
    m.mae += e;
    within += e <= alpha;
  }
  m.mae /= double(m.n);
  m.cs = 100.0 * double(within) / double(m.n);
  m.pearson = m.n >= 2 ? pearson(estimates, truths) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz; converges for x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300, eps = 1e-16;
  const double qab = a + b, qap = a + 1, qam = a - 1;
  double c = 1, d = 1 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < eps) return h;
  }
  throw RuntimeFailure("incomplete beta continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw ValidationError("incomplete beta needs a, b > 0");
  if (!(x >= 0 && x <= 1)) throw ValidationError("incomplete beta needs x in [0, 1]");
  if (x == 0 || x == 1) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                           b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1) / (a + b + 2)) return front * beta_continued_fraction(a, b, x) / a;
  return 1 - front * beta_continued_fraction(b, a, 1 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw ValidationError("degrees of freedom must be positive");
  if (std::isnan(t)) throw ValidationError("t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(df / 2, 0.5, df / (df + t * t));
}

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw ValidationError("paired t-test: samples differ in length (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  if (a.size() < 2) throw ValidationError("paired t-test needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double m = mean(d), sd = sample_std(d);
  TTest r;
  r.n = d.size();
  if (sd == 0) {
    if (m == 0) return {0.0, 1.0, r.n};
    return {m > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity(),
            0.0, r.n};
  }
  r.t = m / (sd / std::sqrt(double(r.n)));
  r.p = student_t_two_sided_p(r.t, double(r.n - 1));
  return r;
}

std::string significance_stars(double p) {
  if (p < 0.0001) return "****";
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

double uncertainty(const std::vector<double>& estimates) {
  if (estimates.size() < 2) throw ValidationError("uncertainty needs at least two estimates");
  const double m = mean(estimates);
  double ss = 0;
  for (double e : estimates) ss += (e - m) * (e - m);
  return std::sqrt(ss / double(estimates.size()));
}

std::vector<double> rank_models(const std::vector<std::vector<double>>& mae) {
  if (mae.empty()) throw ValidationError("no models to rank");
  const std::size_t cohorts = mae.front().size();
  if (cohorts == 0) throw ValidationError("no cohorts to rank over");
  for (const auto& row : mae) {
    if (row.size() != cohorts) throw ValidationError("every model needs an MAE for every cohort");
    for (double v : row)
      if (std::isnan(v)) throw ValidationError("missing MAE entry");
  }
  std::vector<double> total(mae.size(), 0.0);
  std::vector<std::size_t> order(mae.size());
  for (std::size_t c = 0; c < cohorts; ++c) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return mae[i][c] < mae[j][c]; });
    for (std::size_t start = 0; start < order.size();) {
      std::size_t end = start + 1;
      while (end < order.size() && mae[order[end]][c] == mae[order[start]][c]) ++end;
      const double shared = 0.5 * double(start + 1 + end);  // mean of ranks start+1 .. end
      for (std::size_t k = start; k < end; ++k) total[order[k]] += shared;
      start = end;
    }
  }
  for (double& t : total) t /= double(cohorts);
  return total;
}

}  // namespace drl::experiments
