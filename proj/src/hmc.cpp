#include "ss3m/hmc.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ss3m/errors.hpp"
#include "ss3m/math.hpp"

namespace ss3m {

namespace {

void require_finite(std::span<const double> g, int step) {
  for (double v : g) {
    if (!std::isfinite(v)) {
      throw NumericalError("non-finite gradient at leapfrog step " + std::to_string(step));
    }
  }
}

double kinetic(std::span<const double> momentum) {
  double k = 0.0;
  for (double m : momentum) k += 0.5 * m * m;
  return k;
}

}  // namespace

PhasePoint leapfrog(std::span<const double> position, std::span<const double> momentum,
                    const DifferentiableTarget& target, double step_size, int steps) {
  if (!(step_size > 0.0)) throw ConfigError("leapfrog step size must be positive");
  if (steps < 1) throw ConfigError("leapfrog needs at least one step");
  PhasePoint pt{{position.begin(), position.end()}, {momentum.begin(), momentum.end()}};
  std::vector<double> grad(pt.position.size());

  target.gradient(pt.position, grad);
  require_finite(grad, 0);
  for (std::size_t i = 0; i < grad.size(); ++i) pt.momentum[i] += 0.5 * step_size * grad[i];
  for (int l = 1; l <= steps; ++l) {
    for (std::size_t i = 0; i < grad.size(); ++i) pt.position[i] += step_size * pt.momentum[i];
    target.gradient(pt.position, grad);
    require_finite(grad, l);
    const double scale = l == steps ? 0.5 * step_size : step_size;
    for (std::size_t i = 0; i < grad.size(); ++i) pt.momentum[i] += scale * grad[i];
  }
  return pt;
}

HmcResult hmc_step(std::span<const double> position, const DifferentiableTarget& target,
                   double step_size, int steps, Rng& rng) {
  if (!(step_size > 0.0)) throw ConfigError("HMC step size must be positive");
  if (steps < 1) throw ConfigError("HMC path length must be at least 1");
  const double current_logp = target.log_density(position);
  if (!std::isfinite(current_logp)) throw NumericalError("HMC started from a point of zero density");

  std::vector<double> momentum(position.size());
  for (auto& m : momentum) m = rng.normal();
  const double current_h = -current_logp + kinetic(momentum);

  HmcResult result{{position.begin(), position.end()}, false, 0.0, false};
  double proposed_h = std::numeric_limits<double>::quiet_NaN();
  PhasePoint proposal;
  try {
    proposal = leapfrog(position, momentum, target, step_size, steps);
    proposed_h = -target.log_density(proposal.position) + kinetic(proposal.momentum);
  } catch (const NumericalError&) {
    proposed_h = std::numeric_limits<double>::quiet_NaN();
  }
  result.hamiltonian_error = proposed_h - current_h;
  if (!std::isfinite(result.hamiltonian_error)) {
    result.diverged = true;
    // The uniform is still consumed so the stream does not depend on divergence.
    rng.uniform();
    return result;
  }
  if (std::log(rng.uniform()) < -result.hamiltonian_error) {
    result.accepted = true;
    result.next_point = std::move(proposal.position);
  }
  return result;
}

BTarget::BTarget(std::size_t phenotype, const ModelState& state, const Hyperparameters& hyper)
    : shape_(hyper.b_shape), scale_(hyper.b_scale) {
  const std::size_t num_p = state.num_phenotypes();
  if (phenotype >= num_p) throw DimensionError("phenotype index out of range");
  for (std::size_t d = 0; d < state.num_patients(); ++d) {
    const auto active = state.activations.row(d);
    if (!active[phenotype]) continue;
    double rest = 0.0;
    for (std::size_t k = 0; k < num_p; ++k) {
      if (k != phenotype) rest += active[k] ? state.b[k] : state.bstar;
    }
    rest_of_prior_.push_back(rest);
    log_theta_.push_back(log_floored(state.theta(d, phenotype)));
  }
}

double BTarget::log_density(std::span<const double> x) const {
  const double eta = x[0];
  const double b = std::exp(eta);
  double result = eta * shape_ - b / scale_;
  const double lgamma_b = std::lgamma(b);
  for (std::size_t i = 0; i < rest_of_prior_.size(); ++i) {
    result += std::lgamma(rest_of_prior_[i] + b) - lgamma_b + (b - 1.0) * log_theta_[i];
  }
  return result;
}

void BTarget::gradient(std::span<const double> x, std::span<double> out) const {
  const double b = std::exp(x[0]);
  const double psi_b = digamma(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < rest_of_prior_.size(); ++i) {
    sum += digamma(rest_of_prior_[i] + b) - psi_b + log_theta_[i];
  }
  out[0] = shape_ - b / scale_ + b * sum;
}

BStarTarget::BStarTarget(const ModelState& state, const Hyperparameters& hyper)
    : shape_(hyper.bstar_shape), scale_(hyper.bstar_scale) {
  for (std::size_t d = 0; d < state.num_patients(); ++d) {
    const auto active = state.activations.row(d);
    double active_sum = 0.0;
    double inactive = 0.0;
    double log_theta = 0.0;
    for (std::size_t p = 0; p < state.num_phenotypes(); ++p) {
      if (active[p]) {
        active_sum += state.b[p];
      } else {
        inactive += 1.0;
        log_theta += log_floored(state.theta(d, p));
      }
    }
    // Patients without inactive coordinates do not depend on B*.
    if (inactive == 0.0) continue;
    active_sum_.push_back(active_sum);
    inactive_count_.push_back(inactive);
    inactive_log_theta_.push_back(log_theta);
  }
}

double BStarTarget::log_density(std::span<const double> x) const {
  const double eta = x[0];
  const double b = std::exp(eta);
  double result = eta * shape_ - b / scale_;
  const double lgamma_b = std::lgamma(b);
  for (std::size_t i = 0; i < active_sum_.size(); ++i) {
    result += std::lgamma(active_sum_[i] + inactive_count_[i] * b) - inactive_count_[i] * lgamma_b +
              (b - 1.0) * inactive_log_theta_[i];
  }
  return result;
}

void BStarTarget::gradient(std::span<const double> x, std::span<double> out) const {
  const double b = std::exp(x[0]);
  const double psi_b = digamma(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < active_sum_.size(); ++i) {
    sum += inactive_count_[i] * (digamma(active_sum_[i] + inactive_count_[i] * b) - psi_b) +
           inactive_log_theta_[i];
  }
  out[0] = shape_ - b / scale_ + b * sum;
}

BTarget b_target(std::size_t phenotype, const ModelState& state, const Hyperparameters& hyper) {
  return BTarget(phenotype, state, hyper);
}

BStarTarget bstar_target(const ModelState& state, const Hyperparameters& hyper) {
  return BStarTarget(state, hyper);
}

}  // namespace ss3m
