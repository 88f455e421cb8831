// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "drl/numerics/tensor.hpp"

namespace drl::experiments {

/// Sum over the K relations of the batch-mean absolute error. pred, truth: (N, K).
template <typename T>
nn::Tensor<T> relation_loss(const nn::Tensor<T>& pred, const nn::Tensor<T>& truth);

struct Metrics {
  double mae = 0;      // years
  double cs = 0;       // percent of |error| <= alpha
  double pearson = 0;  // NaN when either side has zero variance
  std::size_t n = 0;
};

Metrics compute_metrics(const std::vector<double>& estimates, const std::vector<double>& truths,
                        double alpha = 5.0);

/// Pearson correlation; n >= 2 required, NaN for a constant input.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

/// Two-sided tail P(|T| >= |t|) of Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct TTest {
  double t = 0;
  double p = 1;
  std::size_t n = 0;
};

/// Paired two-sided t-test on d = a - b. Zero-variance differences give
/// t = 0, p = 1 when the mean is 0 and t = +-inf, p = 0 otherwise.
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

/// "*" p < 0.05, "**" < 0.01, "***" < 0.001, "****" < 0.0001, else "".
std::string significance_stars(double p);

/// Population standard deviation of one subject's estimates; at least two needed.
double uncertainty(const std::vector<double>& estimates);

/// mae[model][cohort] -> mean rank per model; rank 1 is the lowest MAE within a
/// cohort and ties share the mean of their ranks.
std::vector<double> rank_models(const std::vector<std::vector<double>>& mae);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n - 1); 0 for fewer than two values.
double sample_std(const std::vector<double>& v);

}  // namespace drl::experiments
