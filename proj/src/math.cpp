#include "ss3m/math.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>

namespace ss3m {

double log_floored(double x) { return std::log(std::max(x, kProbabilityFloor)); }

double digamma(double x) {
  using namespace boost::math::policies;
  using Policy = policy<pole_error<errno_on_error>, overflow_error<errno_on_error>,
                        domain_error<errno_on_error>, evaluation_error<errno_on_error>>;
  return boost::math::digamma(x, Policy());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_gamma_density(double x, double shape, double scale) {
  return -std::lgamma(shape) - shape * std::log(scale) + (shape - 1.0) * std::log(x) - x / scale;
}

double log_dirichlet_density(std::span<const double> x, std::span<const double> concentration) {
  double total = 0.0;
  double result = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += concentration[i];
    result += (concentration[i] - 1.0) * log_floored(x[i]) - std::lgamma(concentration[i]);
  }
  return result + std::lgamma(total);
}

double log_symmetric_dirichlet_density(std::span<const double> x, double concentration) {
  double sum_log = 0.0;
  for (double v : x) sum_log += log_floored(v);
  const auto n = static_cast<double>(x.size());
  return std::lgamma(n * concentration) - n * std::lgamma(concentration) +
         (concentration - 1.0) * sum_log;
}

double log_bernoulli(bool value, double p) { return value ? std::log(p) : std::log1p(-p); }

}  // namespace ss3m
