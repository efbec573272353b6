#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ss3m {

// Seeded random source. Every variate is produced by code in this file on top
// of the engine's raw 64-bit output, so streams are reproducible across
// standard libraries (std:: distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  // Logarithm of a Gamma(shape, 1) variate. Working in log space keeps
  // draws with shape << 1 representable (their values underflow doubles).
  double log_gamma_variate(double shape);
  // Gamma variate with the shape-scale parameterisation.
  double gamma(double shape, double scale);
  std::uint64_t poisson(double mean);

  // Index drawn proportionally to non-negative weights. Throws
  // NumericalError if the weights do not have a positive finite sum.
  std::size_t categorical(std::span<const double> weights);

  // Fills `out` with a Dirichlet(concentration) draw via normalised gammas.
  void dirichlet(std::span<const double> concentration, std::span<double> out);

 private:
  std::mt19937_64 engine_;
};

// Deterministic derivation of independent sub-stream seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

}  // namespace ss3m
