#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ss3m/matrix.hpp"
#include "ss3m/model.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

// How a labelled phenotype is treated for a patient whose label is Unknown.
enum class MissingLabelMode { FixZero, Estimate };
// Whether B and B* are resampled by HMC or kept at their initial draws.
enum class BMode { Fixed, Sampled };

struct TrainOptions {
  MissingLabelMode missing_label_mode = MissingLabelMode::FixZero;
  BMode b_mode = BMode::Fixed;
  std::uint64_t seed = 0;
  bool record_trace = true;
  // 0 visits patients in index order; any other value reshuffles the patient
  // visit order of the assignment step every sweep from this seed.
  std::uint64_t sweep_order_seed = 0;
  ThetaPrior theta_prior;
  // Starting values of B and B*, replacing the draws from their Gamma priors
  // (the draws are still made, so the rest of the stream is unchanged).
  std::optional<std::vector<double>> initial_b;
  std::optional<double> initial_bstar;
  // Recount sufficient statistics after every sweep and compare them with the
  // incrementally maintained ones (slow; for debugging).
  bool check_counts = false;
  // >1 runs the per-patient assignment and theta updates on worker threads
  // with per-patient random streams.
  unsigned threads = 1;
  // Polled between sweeps; when set, training stops and returns what it has.
  const std::atomic<bool>* interrupt = nullptr;
};

struct IterationStats {
  double log_likelihood = 0.0;
  int hmc_proposed = 0;
  int hmc_accepted = 0;
  int hmc_diverged = 0;
  // Sum of |H(proposal) - H(current)| over accepted transitions.
  double hmc_accepted_abs_error = 0.0;
};

struct TrainTrace {
  // Entry 0 describes the initial state, entry i the state after sweep i.
  std::vector<IterationStats> iterations;
  ModelState best_state;
  int best_iteration = 0;
  double best_log_likelihood = 0.0;
  ModelState final_state;
  bool interrupted = false;
};

// Draw a phenotype for token w with probability proportional to
// theta[p] * phi(p, w).
Assignment sample_z_token(std::span<const double> theta, const Matrix<double>& phi, TokenId w,
                          Rng& rng);

// Resample theta_d from Dir(prior_d + c_d) with c_d counted from z.
std::vector<double> sample_theta(std::size_t d, ModelState& state, const Corpus& corpus, Rng& rng);

// Resample phi_sp from Dir(gamma_s + m_sp) with m_sp counted from z.
std::vector<double> sample_phi(std::size_t s, std::size_t p, ModelState& state,
                               const Corpus& corpus, const Hyperparameters& hyper, Rng& rng);

// log P(A_dp = 1 | rest) - log P(A_dp = 0 | rest).
double activation_log_odds(std::size_t d, std::size_t p, const ModelState& state,
                           const Hyperparameters& hyper);

// New value of A_dp, honouring the label clamp rules.
bool sample_activation(std::size_t d, std::size_t p, const ModelState& state,
                       const LabelMatrix& labels, const TrainOptions& options,
                       const Hyperparameters& hyper, Rng& rng);

// Random initial state: uniform z, clamped/Bernoulli A, B and B* from their
// Gamma priors, theta and phi from their conditionals.
ModelState initialize_state(const Corpus& corpus, const LabelMatrix& labels,
                            const Hyperparameters& hyper, const TrainOptions& options, Rng& rng);

// Gibbs sampler holding incrementally maintained count statistics.
class GibbsSampler {
 public:
  GibbsSampler(const Corpus& corpus, const LabelMatrix& labels, const Hyperparameters& hyper,
               const TrainOptions& options, ModelState state);

  // One full pass: z, A, theta, phi, then B and B* when sampled.
  IterationStats sweep(Rng& rng);

  const ModelState& state() const { return state_; }
  ModelState release_state() { return std::move(state_); }
  // True when the maintained counts equal a recount from z.
  bool counts_consistent() const;

 private:
  void update_assignments(Rng& rng);
  void update_activations(Rng& rng);
  void update_theta(Rng& rng);
  void update_phi(Rng& rng);
  void update_globals(Rng& rng, IterationStats& stats);
  void recount();

  const Corpus& corpus_;
  const LabelMatrix& labels_;
  const Hyperparameters& hyper_;
  TrainOptions options_;
  ModelState state_;
  Matrix<int> doc_counts_;                // D x P
  std::vector<Matrix<int>> token_counts_;  // per source, P x V_s
  std::vector<std::size_t> visit_order_;
};

// One sweep on a state, with counts rebuilt from z first.
void sweep(ModelState& state, const Corpus& corpus, const LabelMatrix& labels,
           const TrainOptions& options, const Hyperparameters& hyper, Rng& rng);

// Initialise and run hyper.iterations sweeps, tracking the complete-data
// log-likelihood and the state at which it peaked.
TrainTrace train(const Corpus& corpus, const LabelMatrix& labels, const Hyperparameters& hyper,
                 const TrainOptions& options);

struct PatientPosterior {
  std::vector<double> activation_mean;
  std::vector<double> theta_mean;
};

// Patient-local Gibbs over (z, A, theta) with phi, B and B* held at the
// values in `globals`; every activation is free. Each A_p is drawn given the
// other activations and z with theta integrated out, then theta is drawn
// given A and z. Averages are taken over `samples` sweeps after `burn_in`.
PatientPosterior infer_patient(const std::vector<std::vector<TokenId>>& tokens,
                               const ModelState& globals, const Hyperparameters& hyper,
                               const ThetaPrior& prior, int burn_in, int samples, Rng& rng);

}  // namespace ss3m
