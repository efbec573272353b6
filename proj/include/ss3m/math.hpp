#pragma once

#include <span>

namespace ss3m {

// Probabilities are floored here before logs are taken, so that underflowed
// simplex entries do not turn a log-density into -inf.
inline constexpr double kProbabilityFloor = 1e-300;

double log_floored(double x);
double digamma(double x);
double sigmoid(double x);

// Gamma(shape, scale) log density, density proportional to x^(shape-1) e^(-x/scale).
double log_gamma_density(double x, double shape, double scale);
// Dirichlet log density; entries of x are floored at kProbabilityFloor.
double log_dirichlet_density(std::span<const double> x, std::span<const double> concentration);
// Symmetric Dirichlet log density with the same flooring.
double log_symmetric_dirichlet_density(std::span<const double> x, double concentration);
double log_bernoulli(bool value, double p);

}  // namespace ss3m
