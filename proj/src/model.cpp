#include "ss3m/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ss3m/errors.hpp"
#include "ss3m/math.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

namespace {

void require_positive(double value, const char* name) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw ConfigError(std::string(name) + " must be a positive finite number, got " +
                      std::to_string(value));
  }
}

std::string padded(const char* prefix, std::size_t i, std::size_t n) {
  const std::size_t width = std::to_string(n > 0 ? n - 1 : 0).size();
  std::string digits = std::to_string(i);
  return prefix + std::string(width - digits.size(), '0') + digits;
}

// Positive parameters drawn from Gamma(shape << 1) can underflow to zero.
double positive_gamma_draw(Rng& rng, double shape, double scale) {
  return std::max(rng.gamma(shape, scale), std::numeric_limits<double>::min());
}

}  // namespace

void Hyperparameters::validate() const {
  if (num_phenotypes == 0) throw ConfigError("num_phenotypes must be positive");
  if (num_labeled > num_phenotypes) {
    throw ConfigError("num_labeled (" + std::to_string(num_labeled) +
                      ") exceeds num_phenotypes (" + std::to_string(num_phenotypes) + ")");
  }
  if (token_concentration.empty()) throw ConfigError("at least one source is required");
  for (double g : token_concentration) require_positive(g, "token_concentration");
  if (!(activation_prior > 0.0 && activation_prior < 1.0)) {
    throw ConfigError("activation_prior must lie strictly inside (0, 1), got " +
                      std::to_string(activation_prior));
  }
  require_positive(b_shape, "b_shape");
  require_positive(b_scale, "b_scale");
  require_positive(bstar_shape, "bstar_shape");
  require_positive(bstar_scale, "bstar_scale");
  require_positive(hmc_step_size, "hmc_step_size");
  if (hmc_path_length < 1) throw ConfigError("hmc_path_length must be at least 1");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw DataError("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

std::optional<TokenId> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Corpus::num_tokens() const {
  std::size_t n = 0;
  for (const auto& doc : tokens)
    for (const auto& seq : doc) n += seq.size();
  return n;
}

void Corpus::validate() const {
  if (!vocab) throw DataError("corpus has no vocabulary");
  if (vocab->size() != source_names.size()) {
    throw DimensionError("corpus has " + std::to_string(source_names.size()) +
                         " sources but " + std::to_string(vocab->size()) + " vocabularies");
  }
  if (patient_ids.size() != tokens.size()) {
    throw DimensionError("corpus has " + std::to_string(tokens.size()) + " patients but " +
                         std::to_string(patient_ids.size()) + " patient ids");
  }
  for (std::size_t d = 0; d < tokens.size(); ++d) {
    if (tokens[d].size() != source_names.size()) {
      throw DimensionError("patient " + std::to_string(d) + " has " +
                           std::to_string(tokens[d].size()) + " sources");
    }
    for (std::size_t s = 0; s < tokens[d].size(); ++s) {
      for (TokenId w : tokens[d][s]) {
        if (w >= vocab_size(s)) {
          throw DataError("token id " + std::to_string(w) + " out of range for source '" +
                          source_names[s] + "'");
        }
      }
    }
  }
}

bool Corpus::operator==(const Corpus& other) const {
  const bool same_vocab =
      vocab == other.vocab || (vocab && other.vocab && *vocab == *other.vocab);
  return same_vocab && source_names == other.source_names && patient_ids == other.patient_ids &&
         tokens == other.tokens;
}

void ModelState::validate(const Corpus& corpus) const {
  const std::size_t num_p = b.size();
  const std::size_t num_d = corpus.num_patients();
  if (theta.rows() != num_d || theta.cols() != num_p) throw DimensionError("theta has wrong shape");
  if (activations.rows() != num_d || activations.cols() != num_p) {
    throw DimensionError("activations have wrong shape");
  }
  if (phi.size() != corpus.num_sources()) throw DimensionError("phi has wrong number of sources");
  auto check_simplex = [](std::span<const double> row, const char* what) {
    double total = 0.0;
    for (double v : row) {
      if (!(v >= 0.0)) throw NumericalError(std::string(what) + " has a negative entry");
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw NumericalError(std::string(what) + " row does not sum to 1");
  };
  for (std::size_t d = 0; d < num_d; ++d) check_simplex(theta.row(d), "theta");
  for (std::size_t s = 0; s < phi.size(); ++s) {
    if (phi[s].rows() != num_p || phi[s].cols() != corpus.vocab_size(s)) {
      throw DimensionError("phi has wrong shape for source " + std::to_string(s));
    }
    for (std::size_t p = 0; p < num_p; ++p) check_simplex(phi[s].row(p), "phi");
  }
  for (double v : b)
    if (!(v > 0.0)) throw NumericalError("B must be positive");
  if (!(bstar > 0.0)) throw NumericalError("B* must be positive");
  if (z.size() != num_d) throw DimensionError("z has wrong number of patients");
  for (std::size_t d = 0; d < num_d; ++d) {
    if (z[d].size() != corpus.num_sources()) throw DimensionError("z has wrong number of sources");
    for (std::size_t s = 0; s < z[d].size(); ++s) {
      if (z[d][s].size() != corpus.tokens[d][s].size()) {
        throw DimensionError("z does not mirror corpus tokens at patient " + std::to_string(d));
      }
      for (Assignment a : z[d][s])
        if (a < 0 || static_cast<std::size_t>(a) >= num_p) throw DataError("z out of range");
    }
  }
}

void dirichlet_prior_row(std::span<const std::uint8_t> active, std::span<const double> b,
                         double bstar, std::span<double> out) {
  if (active.size() != b.size() || out.size() != b.size()) {
    throw DimensionError("activation row has length " + std::to_string(active.size()) +
                         ", B has length " + std::to_string(b.size()));
  }
  for (std::size_t p = 0; p < b.size(); ++p) out[p] = active[p] ? b[p] : bstar;
}

std::vector<double> dirichlet_prior_row(std::span<const std::uint8_t> active,
                                        std::span<const double> b, double bstar) {
  std::vector<double> out(b.size());
  dirichlet_prior_row(active, b, bstar, out);
  return out;
}

GeneratedData generate(const Hyperparameters& hyper, std::span<const std::size_t> vocab_sizes,
                       const DocLengthSpec& doc_lengths, std::size_t num_patients,
                       std::uint64_t seed) {
  hyper.validate();
  const std::size_t num_s = hyper.num_sources();
  const std::size_t num_p = hyper.num_phenotypes;
  if (vocab_sizes.size() != num_s) throw ConfigError("need one vocabulary size per source");
  if (doc_lengths.size() != num_s) throw ConfigError("need one document length spec per source");
  if (num_patients == 0) throw ConfigError("number of patients must be positive");
  for (std::size_t v : vocab_sizes)
    if (v == 0) throw ConfigError("vocabulary size must be positive");
  for (const auto& spec : doc_lengths) {
    if (const auto* poisson = std::get_if<PoissonLength>(&spec)) require_positive(poisson->mean, "poisson mean");
  }

  Rng rng(seed);
  GeneratedData out;
  Corpus& corpus = out.corpus;
  ModelState& truth = out.truth;

  auto vocab = std::make_shared<std::vector<Vocabulary>>();
  for (std::size_t s = 0; s < num_s; ++s) {
    corpus.source_names.push_back(padded("source", s, num_s));
    std::vector<std::string> words;
    for (std::size_t v = 0; v < vocab_sizes[s]; ++v) words.push_back(padded("w", v, vocab_sizes[s]));
    vocab->emplace_back(std::move(words));
  }
  corpus.vocab = std::move(vocab);

  for (std::size_t s = 0; s < num_s; ++s) truth.phi.emplace_back(num_p, vocab_sizes[s]);
  for (std::size_t p = 0; p < num_p; ++p) {
    for (std::size_t s = 0; s < num_s; ++s) {
      std::vector<double> concentration(vocab_sizes[s], hyper.token_concentration[s]);
      rng.dirichlet(concentration, truth.phi[s].row(p));
    }
  }
  truth.b.resize(num_p);
  for (auto& b : truth.b) b = positive_gamma_draw(rng, hyper.b_shape, hyper.b_scale);
  truth.bstar = positive_gamma_draw(rng, hyper.bstar_shape, hyper.bstar_scale);

  truth.theta = Matrix<double>(num_patients, num_p);
  truth.activations = Matrix<std::uint8_t>(num_patients, num_p);
  truth.z.resize(num_patients);
  corpus.tokens.resize(num_patients);
  std::vector<double> prior(num_p);
  for (std::size_t d = 0; d < num_patients; ++d) {
    corpus.patient_ids.push_back(padded("p", d, num_patients));
    auto active = truth.activations.row(d);
    for (std::size_t p = 0; p < num_p; ++p) active[p] = rng.bernoulli(hyper.activation_prior) ? 1 : 0;
    dirichlet_prior_row(active, truth.b, truth.bstar, prior);
    rng.dirichlet(prior, truth.theta.row(d));

    corpus.tokens[d].resize(num_s);
    truth.z[d].resize(num_s);
    for (std::size_t s = 0; s < num_s; ++s) {
      std::size_t length = 0;
      if (const auto* fixed = std::get_if<FixedLength>(&doc_lengths[s])) {
        length = fixed->length;
      } else {
        length = rng.poisson(std::get<PoissonLength>(doc_lengths[s]).mean);
      }
      auto& words = corpus.tokens[d][s];
      auto& assignments = truth.z[d][s];
      words.reserve(length);
      assignments.reserve(length);
      for (std::size_t n = 0; n < length; ++n) {
        const auto phenotype = rng.categorical(truth.theta.row(d));
        assignments.push_back(static_cast<Assignment>(phenotype));
        words.push_back(static_cast<TokenId>(rng.categorical(truth.phi[s].row(phenotype))));
      }
    }
  }
  return out;
}

LabelMatrix labels_from_activations(const ModelState& state, std::size_t num_labeled) {
  if (num_labeled > state.num_phenotypes()) throw DimensionError("more labels than phenotypes");
  LabelMatrix labels;
  for (std::size_t j = 0; j < num_labeled; ++j) labels.label_names.push_back(padded("L", j, num_labeled));
  labels.entries = Matrix<LabelState>(state.num_patients(), num_labeled, LabelState::Unknown);
  for (std::size_t d = 0; d < state.num_patients(); ++d) {
    for (std::size_t j = 0; j < num_labeled; ++j) {
      if (state.activations(d, j)) labels.entries(d, j) = LabelState::Present;
    }
  }
  return labels;
}

double complete_data_log_likelihood(const ModelState& state, const Corpus& corpus,
                                    const Hyperparameters& hyper, const ThetaPrior& prior) {
  const std::size_t num_p = state.num_phenotypes();
  if (num_p != hyper.num_phenotypes || corpus.num_sources() != hyper.num_sources() ||
      state.num_patients() != corpus.num_patients()) {
    throw DimensionError("state, corpus and hyperparameters disagree on dimensions");
  }
  const bool gated = prior.kind == PriorKind::ActivationGated;
  double ll = 0.0;
  for (std::size_t s = 0; s < state.phi.size(); ++s) {
    for (std::size_t p = 0; p < num_p; ++p) {
      ll += log_symmetric_dirichlet_density(state.phi[s].row(p), hyper.token_concentration[s]);
    }
  }
  if (gated) {
    for (double b : state.b) ll += log_gamma_density(b, hyper.b_shape, hyper.b_scale);
    ll += log_gamma_density(state.bstar, hyper.bstar_shape, hyper.bstar_scale);
  }
  std::vector<double> prior_row(num_p);
  for (std::size_t d = 0; d < state.num_patients(); ++d) {
    const auto theta = state.theta.row(d);
    if (gated) {
      const auto active = state.activations.row(d);
      for (std::size_t p = 0; p < num_p; ++p) ll += log_bernoulli(active[p] != 0, hyper.activation_prior);
      dirichlet_prior_row(active, state.b, state.bstar, prior_row);
      ll += log_dirichlet_density(theta, prior_row);
    } else {
      ll += log_symmetric_dirichlet_density(theta, prior.concentration);
    }
    for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
      const auto& words = corpus.tokens[d][s];
      const auto& assignments = state.z[d][s];
      for (std::size_t n = 0; n < words.size(); ++n) {
        const double token_prob = state.phi[s](static_cast<std::size_t>(assignments[n]), words[n]);
        if (token_prob <= 0.0) return -std::numeric_limits<double>::infinity();
        ll += log_floored(theta[static_cast<std::size_t>(assignments[n])]) + std::log(token_prob);
      }
    }
  }
  return ll;
}

std::vector<PhenotypeTopTokens> phenotype_summary(const ModelState& state, const Corpus& corpus,
                                                  std::size_t k) {
  std::vector<PhenotypeTopTokens> out;
  for (std::size_t p = 0; p < state.num_phenotypes(); ++p) {
    for (std::size_t s = 0; s < state.phi.size(); ++s) {
      const auto row = state.phi[s].row(p);
      std::vector<TokenId> order(row.size());
      std::iota(order.begin(), order.end(), TokenId{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](TokenId a, TokenId b) { return row[a] > row[b]; });
      PhenotypeTopTokens entry{p, s, {}};
      const std::size_t n = std::min(k, row.size());
      for (std::size_t i = 0; i < n; ++i) {
        entry.tokens.push_back({(*corpus.vocab)[s].token(order[i]), row[order[i]]});
      }
      out.push_back(std::move(entry));
    }
  }
  return out;
}

}  // namespace ss3m
