#include "ss3m/gibbs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <thread>

#include "ss3m/errors.hpp"
#include "ss3m/hmc.hpp"
#include "ss3m/math.hpp"

namespace ss3m {

namespace {

using PatientTokens = std::vector<std::vector<TokenId>>;
using PatientAssignments = std::vector<std::vector<Assignment>>;

double log_odds_row(std::span<const double> theta, std::span<const std::uint8_t> active,
                    std::size_t p, std::span<const double> b, double bstar, double alpha) {
  double rest = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (k != p) rest += active[k] ? b[k] : bstar;
  }
  const double bp = b[p];
  const double result = std::log(alpha) - std::log1p(-alpha) + std::lgamma(rest + bp) -
                        std::lgamma(rest + bstar) + std::lgamma(bstar) - std::lgamma(bp) +
                        (bp - bstar) * log_floored(theta[p]);
  if (!std::isfinite(result)) {
    throw NumericalError("non-finite activation log-odds for phenotype " + std::to_string(p));
  }
  return result;
}

// Log-odds of A_p = 1 against A_p = 0 given the other activations and the
// phenotype counts of the patient, with theta integrated out.
double collapsed_log_odds(std::span<const int> counts, int total, std::span<const std::uint8_t> active,
                          std::size_t p, std::span<const double> b, double bstar, double alpha) {
  double rest = 0.0;
  for (std::size_t k = 0; k < b.size(); ++k) {
    if (k != p) rest += active[k] ? b[k] : bstar;
  }
  const double on = rest + b[p];
  const double off = rest + bstar;
  const double c = counts[p];
  const double result = std::log(alpha) - std::log1p(-alpha) + std::lgamma(on) - std::lgamma(on + total) +
                        std::lgamma(b[p] + c) - std::lgamma(b[p]) - std::lgamma(off) +
                        std::lgamma(off + total) - std::lgamma(bstar + c) + std::lgamma(bstar);
  if (!std::isfinite(result)) {
    throw NumericalError("non-finite activation log-odds for phenotype " + std::to_string(p));
  }
  return result;
}

// Resamples every assignment of one patient against fixed theta and phi.
// doc_counts is kept in step; token_counts too when given.
void resample_patient_assignments(const PatientTokens& words, PatientAssignments& z,
                                  std::span<const double> theta,
                                  const std::vector<Matrix<double>>& phi,
                                  std::span<int> doc_counts, std::vector<Matrix<int>>* token_counts,
                                  Rng& rng, std::vector<double>& weights) {
  const std::size_t num_p = theta.size();
  weights.resize(num_p);
  for (std::size_t s = 0; s < words.size(); ++s) {
    const Matrix<double>& phi_s = phi[s];
    for (std::size_t n = 0; n < words[s].size(); ++n) {
      const TokenId w = words[s][n];
      const auto old = static_cast<std::size_t>(z[s][n]);
      for (std::size_t p = 0; p < num_p; ++p) weights[p] = theta[p] * phi_s(p, w);
      std::size_t fresh;
      try {
        fresh = rng.categorical(weights);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (source " + std::to_string(s) + ", token " +
                             std::to_string(n) + ")");
      }
      if (fresh == old) continue;
      z[s][n] = static_cast<Assignment>(fresh);
      --doc_counts[old];
      ++doc_counts[fresh];
      if (token_counts) {
        --(*token_counts)[s](old, w);
        ++(*token_counts)[s](fresh, w);
      }
    }
  }
}

void resample_theta_row(std::span<double> theta, std::span<const std::uint8_t> active,
                        std::span<const int> counts, std::span<const double> b, double bstar,
                        Rng& rng, std::vector<double>& concentration) {
  concentration.resize(b.size());
  dirichlet_prior_row(active, b, bstar, concentration);
  for (std::size_t p = 0; p < b.size(); ++p) concentration[p] += counts[p];
  rng.dirichlet(concentration, theta);
}

void count_doc(const PatientAssignments& z, std::span<int> counts) {
  std::fill(counts.begin(), counts.end(), 0);
  for (const auto& seq : z)
    for (Assignment a : seq) ++counts[static_cast<std::size_t>(a)];
}

// Runs fn(d) for every patient, split over `threads` workers.
template <typename Fn>
void for_each_patient(std::size_t num_patients, unsigned threads, Fn&& fn) {
  if (threads <= 1 || num_patients < 2) {
    for (std::size_t d = 0; d < num_patients; ++d) fn(d);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, num_patients);
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t d = t; d < num_patients; d += workers) fn(d);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

bool is_clamped(std::size_t d, std::size_t p, const LabelMatrix& labels,
                const TrainOptions& options, bool* value) {
  if (p >= labels.num_labels()) return false;
  switch (labels.entries(d, p)) {
    case LabelState::Present:
      *value = true;
      return true;
    case LabelState::Absent:
      *value = false;
      return true;
    case LabelState::Unknown:
      if (options.missing_label_mode == MissingLabelMode::FixZero) {
        *value = false;
        return true;
      }
      return false;
  }
  return false;
}

void check_inputs(const Corpus& corpus, const LabelMatrix& labels, const Hyperparameters& hyper) {
  hyper.validate();
  corpus.validate();
  if (corpus.num_sources() != hyper.num_sources()) {
    throw DimensionError("corpus has " + std::to_string(corpus.num_sources()) +
                         " sources, hyperparameters describe " + std::to_string(hyper.num_sources()));
  }
  if (labels.num_labels() != hyper.num_labeled) {
    throw DimensionError("label matrix has " + std::to_string(labels.num_labels()) +
                         " labels, expected " + std::to_string(hyper.num_labeled));
  }
  if (labels.num_patients() != corpus.num_patients()) {
    throw DimensionError("label matrix has " + std::to_string(labels.num_patients()) +
                         " patients, corpus has " + std::to_string(corpus.num_patients()));
  }
}

bool gated(const TrainOptions& options) {
  return options.theta_prior.kind == PriorKind::ActivationGated;
}

}  // namespace

Assignment sample_z_token(std::span<const double> theta, const Matrix<double>& phi, TokenId w,
                          Rng& rng) {
  if (phi.rows() != theta.size() || w >= phi.cols()) {
    throw DimensionError("theta, phi and token id are inconsistent");
  }
  std::vector<double> weights(theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) weights[p] = theta[p] * phi(p, w);
  return static_cast<Assignment>(rng.categorical(weights));
}

std::vector<double> sample_theta(std::size_t d, ModelState& state, const Corpus& corpus, Rng& rng) {
  if (d >= corpus.num_patients() || state.z.size() != corpus.num_patients()) {
    throw DimensionError("patient index out of range");
  }
  std::vector<int> counts(state.num_phenotypes());
  count_doc(state.z[d], counts);
  std::vector<double> scratch;
  resample_theta_row(state.theta.row(d), state.activations.row(d), counts, state.b, state.bstar,
                     rng, scratch);
  auto row = state.theta.row(d);
  return {row.begin(), row.end()};
}

std::vector<double> sample_phi(std::size_t s, std::size_t p, ModelState& state,
                               const Corpus& corpus, const Hyperparameters& hyper, Rng& rng) {
  if (s >= state.phi.size() || p >= state.num_phenotypes()) throw DimensionError("phi index out of range");
  std::vector<double> concentration(corpus.vocab_size(s), hyper.token_concentration[s]);
  for (std::size_t d = 0; d < corpus.num_patients(); ++d) {
    const auto& words = corpus.tokens[d][s];
    const auto& z = state.z[d][s];
    for (std::size_t n = 0; n < words.size(); ++n) {
      if (static_cast<std::size_t>(z[n]) == p) concentration[words[n]] += 1.0;
    }
  }
  auto row = state.phi[s].row(p);
  rng.dirichlet(concentration, row);
  return {row.begin(), row.end()};
}

double activation_log_odds(std::size_t d, std::size_t p, const ModelState& state,
                           const Hyperparameters& hyper) {
  if (d >= state.num_patients() || p >= state.num_phenotypes()) {
    throw DimensionError("activation index out of range");
  }
  return log_odds_row(state.theta.row(d), state.activations.row(d), p, state.b, state.bstar,
                      hyper.activation_prior);
}

bool sample_activation(std::size_t d, std::size_t p, const ModelState& state,
                       const LabelMatrix& labels, const TrainOptions& options,
                       const Hyperparameters& hyper, Rng& rng) {
  if (p >= state.num_phenotypes()) throw DimensionError("phenotype index out of range");
  bool value = false;
  if (is_clamped(d, p, labels, options, &value)) return value;
  return rng.bernoulli(sigmoid(activation_log_odds(d, p, state, hyper)));
}

ModelState initialize_state(const Corpus& corpus, const LabelMatrix& labels,
                            const Hyperparameters& hyper, const TrainOptions& options, Rng& rng) {
  check_inputs(corpus, labels, hyper);
  const std::size_t num_d = corpus.num_patients();
  const std::size_t num_p = hyper.num_phenotypes;
  ModelState state;

  state.z.resize(num_d);
  for (std::size_t d = 0; d < num_d; ++d) {
    state.z[d].resize(corpus.num_sources());
    for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
      auto& z = state.z[d][s];
      z.resize(corpus.tokens[d][s].size());
      for (auto& a : z) a = static_cast<Assignment>(rng.below(num_p));
    }
  }

  state.activations = Matrix<std::uint8_t>(num_d, num_p, 0);
  state.b.assign(num_p, options.theta_prior.concentration);
  state.bstar = options.theta_prior.concentration;
  if (gated(options)) {
    for (std::size_t d = 0; d < num_d; ++d) {
      for (std::size_t p = 0; p < num_p; ++p) {
        bool value = false;
        if (!is_clamped(d, p, labels, options, &value)) value = rng.bernoulli(hyper.activation_prior);
        state.activations(d, p) = value ? 1 : 0;
      }
    }
    const double smallest = std::numeric_limits<double>::min();
    for (auto& b : state.b) b = std::max(rng.gamma(hyper.b_shape, hyper.b_scale), smallest);
    state.bstar = std::max(rng.gamma(hyper.bstar_shape, hyper.bstar_scale), smallest);
    if (options.initial_b) {
      if (options.initial_b->size() != num_p) throw DimensionError("initial B has the wrong length");
      state.b = *options.initial_b;
    }
    if (options.initial_bstar) state.bstar = *options.initial_bstar;
    for (double b : state.b)
      if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("initial B must be positive and finite");
    if (!(state.bstar > 0.0) || !std::isfinite(state.bstar)) {
      throw ConfigError("initial B* must be positive and finite");
    }
  }

  state.theta = Matrix<double>(num_d, num_p);
  std::vector<int> counts(num_p);
  std::vector<double> scratch;
  for (std::size_t d = 0; d < num_d; ++d) {
    count_doc(state.z[d], counts);
    resample_theta_row(state.theta.row(d), state.activations.row(d), counts, state.b, state.bstar,
                       rng, scratch);
  }
  for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
    state.phi.emplace_back(num_p, corpus.vocab_size(s));
  }
  for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
    for (std::size_t p = 0; p < num_p; ++p) sample_phi(s, p, state, corpus, hyper, rng);
  }
  return state;
}

GibbsSampler::GibbsSampler(const Corpus& corpus, const LabelMatrix& labels,
                           const Hyperparameters& hyper, const TrainOptions& options,
                           ModelState state)
    : corpus_(corpus), labels_(labels), hyper_(hyper), options_(options), state_(std::move(state)) {
  check_inputs(corpus, labels, hyper);
  state_.validate(corpus);
  visit_order_.resize(corpus.num_patients());
  std::iota(visit_order_.begin(), visit_order_.end(), std::size_t{0});
  recount();
}

void GibbsSampler::recount() {
  const std::size_t num_p = state_.num_phenotypes();
  doc_counts_ = Matrix<int>(corpus_.num_patients(), num_p, 0);
  token_counts_.clear();
  for (std::size_t s = 0; s < corpus_.num_sources(); ++s) {
    token_counts_.emplace_back(num_p, corpus_.vocab_size(s), 0);
  }
  for (std::size_t d = 0; d < corpus_.num_patients(); ++d) {
    for (std::size_t s = 0; s < corpus_.num_sources(); ++s) {
      const auto& words = corpus_.tokens[d][s];
      const auto& z = state_.z[d][s];
      for (std::size_t n = 0; n < words.size(); ++n) {
        const auto p = static_cast<std::size_t>(z[n]);
        ++doc_counts_(d, p);
        ++token_counts_[s](p, words[n]);
      }
    }
  }
}

bool GibbsSampler::counts_consistent() const {
  GibbsSampler fresh(corpus_, labels_, hyper_, options_, state_);
  return fresh.doc_counts_ == doc_counts_ && fresh.token_counts_ == token_counts_;
}

void GibbsSampler::update_assignments(Rng& rng) {
  const std::size_t num_d = corpus_.num_patients();
  auto run_patient = [&](std::size_t d, Rng& patient_rng, std::vector<Matrix<int>>* token_counts,
                         std::vector<double>& weights) {
    try {
      resample_patient_assignments(corpus_.tokens[d], state_.z[d], state_.theta.row(d),
                                   state_.phi, doc_counts_.row(d), token_counts, patient_rng,
                                   weights);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at patient " + std::to_string(d));
    }
  };

  if (options_.threads > 1) {
    const std::uint64_t base = rng.next();
    for_each_patient(num_d, options_.threads, [&](std::size_t d) {
      Rng patient_rng(derive_seed(base, d));
      std::vector<double> weights;
      run_patient(d, patient_rng, nullptr, weights);
    });
    // Token counts are rebuilt from z; they are only read by the phi update.
    for (auto& m : token_counts_) std::fill(m.data().begin(), m.data().end(), 0);
    for (std::size_t d = 0; d < num_d; ++d) {
      for (std::size_t s = 0; s < corpus_.num_sources(); ++s) {
        const auto& words = corpus_.tokens[d][s];
        const auto& z = state_.z[d][s];
        for (std::size_t n = 0; n < words.size(); ++n) {
          ++token_counts_[s](static_cast<std::size_t>(z[n]), words[n]);
        }
      }
    }
    return;
  }

  if (options_.sweep_order_seed != 0) {
    Rng order_rng(derive_seed(options_.sweep_order_seed, rng.next()));
    for (std::size_t i = num_d; i > 1; --i) {
      std::swap(visit_order_[i - 1], visit_order_[order_rng.below(i)]);
    }
  }
  std::vector<double> weights;
  for (std::size_t d : visit_order_) run_patient(d, rng, &token_counts_, weights);
}

void GibbsSampler::update_activations(Rng& rng) {
  if (!gated(options_)) return;
  for (std::size_t d = 0; d < corpus_.num_patients(); ++d) {
    for (std::size_t p = 0; p < state_.num_phenotypes(); ++p) {
      bool value = false;
      if (!is_clamped(d, p, labels_, options_, &value)) {
        const double log_odds =
            log_odds_row(state_.theta.row(d), state_.activations.row(d), p, state_.b, state_.bstar,
                         hyper_.activation_prior);
        value = rng.bernoulli(sigmoid(log_odds));
      }
      state_.activations(d, p) = value ? 1 : 0;
    }
  }
}

void GibbsSampler::update_theta(Rng& rng) {
  const std::size_t num_d = corpus_.num_patients();
  if (options_.threads > 1) {
    const std::uint64_t base = rng.next();
    for_each_patient(num_d, options_.threads, [&](std::size_t d) {
      Rng patient_rng(derive_seed(base, d));
      std::vector<double> scratch;
      resample_theta_row(state_.theta.row(d), state_.activations.row(d), doc_counts_.row(d),
                         state_.b, state_.bstar, patient_rng, scratch);
    });
    return;
  }
  std::vector<double> scratch;
  for (std::size_t d = 0; d < num_d; ++d) {
    resample_theta_row(state_.theta.row(d), state_.activations.row(d), doc_counts_.row(d),
                       state_.b, state_.bstar, rng, scratch);
  }
}

void GibbsSampler::update_phi(Rng& rng) {
  std::vector<double> concentration;
  for (std::size_t s = 0; s < corpus_.num_sources(); ++s) {
    const std::size_t vocab = corpus_.vocab_size(s);
    concentration.resize(vocab);
    for (std::size_t p = 0; p < state_.num_phenotypes(); ++p) {
      const auto counts = token_counts_[s].row(p);
      for (std::size_t v = 0; v < vocab; ++v) {
        concentration[v] = hyper_.token_concentration[s] + counts[v];
      }
      rng.dirichlet(concentration, state_.phi[s].row(p));
    }
  }
}

void GibbsSampler::update_globals(Rng& rng, IterationStats& stats) {
  if (!gated(options_) || options_.b_mode != BMode::Sampled) return;
  auto transition = [&](const DifferentiableTarget& target, double& value) {
    const std::vector<double> eta{std::log(value)};
    const HmcResult result =
        hmc_step(eta, target, hyper_.hmc_step_size, hyper_.hmc_path_length, rng);
    ++stats.hmc_proposed;
    if (result.diverged) ++stats.hmc_diverged;
    if (!result.accepted) return;
    const double proposed = std::exp(result.next_point[0]);
    // A proposal whose exponent leaves the representable positive range is
    // treated as a rejection.
    if (!(proposed > 0.0) || !std::isfinite(proposed)) return;
    value = proposed;
    ++stats.hmc_accepted;
    stats.hmc_accepted_abs_error += std::fabs(result.hamiltonian_error);
  };
  for (std::size_t p = 0; p < state_.num_phenotypes(); ++p) {
    transition(BTarget(p, state_, hyper_), state_.b[p]);
  }
  transition(BStarTarget(state_, hyper_), state_.bstar);
}

IterationStats GibbsSampler::sweep(Rng& rng) {
  IterationStats stats;
  update_assignments(rng);
  update_activations(rng);
  update_theta(rng);
  update_phi(rng);
  update_globals(rng, stats);
  if (options_.check_counts && !counts_consistent()) {
    throw NumericalError("incremental counts diverged from a recount");
  }
  return stats;
}

void sweep(ModelState& state, const Corpus& corpus, const LabelMatrix& labels,
           const TrainOptions& options, const Hyperparameters& hyper, Rng& rng) {
  GibbsSampler sampler(corpus, labels, hyper, options, std::move(state));
  sampler.sweep(rng);
  state = sampler.release_state();
}

TrainTrace train(const Corpus& corpus, const LabelMatrix& labels, const Hyperparameters& hyper,
                 const TrainOptions& options) {
  check_inputs(corpus, labels, hyper);
  if (corpus.num_patients() == 0) throw DataError("cannot train on an empty corpus");
  Rng rng(options.seed);
  TrainTrace trace;
  GibbsSampler sampler(corpus, labels, hyper, options,
                       initialize_state(corpus, labels, hyper, options, rng));

  auto record = [&](int iteration, IterationStats stats) {
    stats.log_likelihood =
        complete_data_log_likelihood(sampler.state(), corpus, hyper, options.theta_prior);
    if (std::isnan(stats.log_likelihood)) {
      throw NumericalError("log-likelihood became NaN at iteration " + std::to_string(iteration));
    }
    if (iteration == 0 || stats.log_likelihood > trace.best_log_likelihood) {
      trace.best_log_likelihood = stats.log_likelihood;
      trace.best_iteration = iteration;
      trace.best_state = sampler.state();
    }
    if (options.record_trace) trace.iterations.push_back(stats);
  };

  record(0, IterationStats{});
  for (int it = 1; it <= hyper.iterations; ++it) {
    if (options.interrupt && options.interrupt->load()) {
      trace.interrupted = true;
      break;
    }
    record(it, sampler.sweep(rng));
  }
  trace.final_state = sampler.release_state();
  return trace;
}

PatientPosterior infer_patient(const std::vector<std::vector<TokenId>>& tokens,
                               const ModelState& globals, const Hyperparameters& hyper,
                               const ThetaPrior& prior, int burn_in, int samples, Rng& rng) {
  if (burn_in < 0 || samples < 1) throw ConfigError("need burn_in >= 0 and samples >= 1");
  if (tokens.size() != globals.phi.size()) throw DimensionError("patient has wrong number of sources");
  const std::size_t num_p = globals.num_phenotypes();
  const bool is_gated = prior.kind == PriorKind::ActivationGated;
  std::vector<double> b = globals.b;
  double bstar = globals.bstar;
  if (!is_gated) {
    b.assign(num_p, prior.concentration);
    bstar = prior.concentration;
  }

  PatientAssignments z(tokens.size());
  for (std::size_t s = 0; s < tokens.size(); ++s) {
    z[s].resize(tokens[s].size());
    for (auto& a : z[s]) a = static_cast<Assignment>(rng.below(num_p));
  }
  std::vector<std::uint8_t> active(num_p, 0);
  if (is_gated) {
    for (auto& a : active) a = rng.bernoulli(hyper.activation_prior) ? 1 : 0;
  }
  std::vector<int> counts(num_p);
  count_doc(z, counts);
  const int total = std::accumulate(counts.begin(), counts.end(), 0);
  std::vector<double> theta(num_p);
  std::vector<double> scratch;
  resample_theta_row(theta, active, counts, b, bstar, rng, scratch);

  PatientPosterior out{std::vector<double>(num_p, 0.0), std::vector<double>(num_p, 0.0)};
  std::vector<double> weights;
  for (int it = 0; it < burn_in + samples; ++it) {
    resample_patient_assignments(tokens, z, theta, globals.phi, counts, nullptr, rng, weights);
    if (is_gated) {
      for (std::size_t p = 0; p < num_p; ++p) {
        const double log_odds =
            collapsed_log_odds(counts, total, active, p, b, bstar, hyper.activation_prior);
        active[p] = rng.bernoulli(sigmoid(log_odds)) ? 1 : 0;
      }
    }
    resample_theta_row(theta, active, counts, b, bstar, rng, scratch);
    if (it >= burn_in) {
      for (std::size_t p = 0; p < num_p; ++p) {
        out.activation_mean[p] += active[p];
        out.theta_mean[p] += theta[p];
      }
    }
  }
  for (std::size_t p = 0; p < num_p; ++p) {
    out.activation_mean[p] /= samples;
    out.theta_mean[p] /= samples;
  }
  return out;
}

}  // namespace ss3m
