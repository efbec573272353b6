#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ss3m/model.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

// Log density over unconstrained real coordinates, with its gradient.
class DifferentiableTarget {
 public:
  virtual ~DifferentiableTarget() = default;
  virtual std::size_t dimension() const = 0;
  virtual double log_density(std::span<const double> x) const = 0;
  virtual void gradient(std::span<const double> x, std::span<double> out) const = 0;

  std::vector<double> gradient(std::span<const double> x) const {
    std::vector<double> g(dimension());
    gradient(x, g);
    return g;
  }
};

struct PhasePoint {
  std::vector<double> position;
  std::vector<double> momentum;
};

// Leapfrog integration with an identity mass matrix. Throws NumericalError
// naming the step when the gradient stops being finite.
PhasePoint leapfrog(std::span<const double> position, std::span<const double> momentum,
                    const DifferentiableTarget& target, double step_size, int steps);

struct HmcResult {
  std::vector<double> next_point;
  bool accepted = false;
  // H(proposal) - H(current); NaN/inf when the trajectory diverged.
  double hamiltonian_error = 0.0;
  bool diverged = false;
};

// One HMC transition: fresh N(0, I) momentum, leapfrog, Metropolis correction.
HmcResult hmc_step(std::span<const double> position, const DifferentiableTarget& target,
                   double step_size, int steps, Rng& rng);

// Conditional of B_p given the rest, over eta = log B_p (Jacobian included).
// Only patients with A_dp = 1 carry information about B_p.
class BTarget final : public DifferentiableTarget {
 public:
  BTarget(std::size_t phenotype, const ModelState& state, const Hyperparameters& hyper);

  std::size_t dimension() const override { return 1; }
  double log_density(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;
  using DifferentiableTarget::gradient;

 private:
  double shape_;
  double scale_;
  // For every active patient: sum of the other prior entries, and log theta_dp.
  std::vector<double> rest_of_prior_;
  std::vector<double> log_theta_;
};

// Conditional of B* given the rest, over eta* = log B*.
class BStarTarget final : public DifferentiableTarget {
 public:
  BStarTarget(const ModelState& state, const Hyperparameters& hyper);

  std::size_t dimension() const override { return 1; }
  double log_density(std::span<const double> x) const override;
  void gradient(std::span<const double> x, std::span<double> out) const override;
  using DifferentiableTarget::gradient;

 private:
  double shape_;
  double scale_;
  // Per patient: sum of active prior entries, number of inactive entries and
  // the sum of log theta over inactive entries.
  std::vector<double> active_sum_;
  std::vector<double> inactive_count_;
  std::vector<double> inactive_log_theta_;
};

BTarget b_target(std::size_t phenotype, const ModelState& state, const Hyperparameters& hyper);
BStarTarget bstar_target(const ModelState& state, const Hyperparameters& hyper);

}  // namespace ss3m
