#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "ss3m/matrix.hpp"

namespace ss3m {

using TokenId = std::uint32_t;
using Assignment = std::int32_t;

// Model dimensions and fixed parameters. The defaults are the settings used
// for the ICD9-labelled experiments: 70 phenotypes of which 50 are labelled.
struct Hyperparameters {
  std::size_t num_phenotypes = 70;
  std::size_t num_labeled = 50;
  // Symmetric Dirichlet concentration of the phenotype-token distributions,
  // one scalar per source; the number of entries is the number of sources.
  std::vector<double> token_concentration{0.01, 0.01, 0.01};
  double activation_prior = 0.1;
  double b_shape = 10.0;
  double b_scale = 1.0;
  double bstar_shape = 0.01;
  double bstar_scale = 1.0;
  int hmc_path_length = 25;
  double hmc_step_size = 0.01;
  int iterations = 200;

  std::size_t num_sources() const { return token_concentration.size(); }
  // Throws ConfigError naming the offending field.
  void validate() const;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Throws DataError on duplicate entries.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_[id]; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::optional<TokenId> find(const std::string& token) const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Per-patient, per-source token sequences. Vocabularies are shared between
// corpora derived from one another (e.g. the halves of a train/test split).
struct Corpus {
  std::vector<std::string> source_names;
  std::shared_ptr<const std::vector<Vocabulary>> vocab;
  std::vector<std::string> patient_ids;
  // tokens[d][s] is the token sequence of patient d in source s.
  std::vector<std::vector<std::vector<TokenId>>> tokens;

  std::size_t num_patients() const { return tokens.size(); }
  std::size_t num_sources() const { return source_names.size(); }
  std::size_t vocab_size(std::size_t s) const { return (*vocab)[s].size(); }
  std::size_t num_tokens() const;
  // Throws DimensionError / DataError when an invariant is broken.
  void validate() const;

  bool operator==(const Corpus& other) const;
};

enum class LabelState : std::uint8_t { Unknown = 0, Present = 1, Absent = 2 };

struct LabelMatrix {
  std::vector<std::string> label_names;
  // num_patients x label_names.size()
  Matrix<LabelState> entries;

  std::size_t num_patients() const { return entries.rows(); }
  std::size_t num_labels() const { return label_names.size(); }
  bool operator==(const LabelMatrix&) const = default;
};

// Full latent state of the model.
struct ModelState {
  Matrix<double> theta;                                  // D x P
  std::vector<Matrix<double>> phi;                       // per source, P x V_s
  std::vector<std::vector<std::vector<Assignment>>> z;   // [d][s][n]
  Matrix<std::uint8_t> activations;                      // D x P
  std::vector<double> b;                                 // P
  double bstar = 1.0;

  std::size_t num_patients() const { return theta.rows(); }
  std::size_t num_phenotypes() const { return b.size(); }
  // Checks simplex rows, positivity and agreement of z with the corpus.
  void validate(const Corpus& corpus) const;

  bool operator==(const ModelState&) const = default;
};

struct FixedLength {
  std::size_t length = 0;
};
struct PoissonLength {
  double mean = 100.0;
};
// Document length distribution for synthetic data, one entry per source.
using DocLength = std::variant<FixedLength, PoissonLength>;
using DocLengthSpec = std::vector<DocLength>;

// Prior on the patient-phenotype distributions. The activation-gated prior is
// the semi-supervised model; the symmetric one is the plain mixed-membership
// baseline.
enum class PriorKind { ActivationGated, Symmetric };
struct ThetaPrior {
  PriorKind kind = PriorKind::ActivationGated;
  double concentration = 1.0;

  bool operator==(const ThetaPrior&) const = default;
};

// Dirichlet parameters for theta_d: b[p] where the phenotype is active,
// bstar elsewhere.
std::vector<double> dirichlet_prior_row(std::span<const std::uint8_t> active,
                                        std::span<const double> b, double bstar);
void dirichlet_prior_row(std::span<const std::uint8_t> active, std::span<const double> b,
                         double bstar, std::span<double> out);

struct GeneratedData {
  Corpus corpus;
  ModelState truth;
};

// Forward simulation of the generative process. Pure function of its inputs.
GeneratedData generate(const Hyperparameters& hyper, std::span<const std::size_t> vocab_sizes,
                       const DocLengthSpec& doc_lengths, std::size_t num_patients,
                       std::uint64_t seed);

// Present wherever the labelled activation is on, Unknown elsewhere.
LabelMatrix labels_from_activations(const ModelState& state, std::size_t num_labeled);

// log p(w, z, theta, phi, A, B, B*). Returns -infinity (never NaN) when an
// assigned token has zero probability under its phenotype. For the symmetric
// prior the activation and B terms are absent.
double complete_data_log_likelihood(const ModelState& state, const Corpus& corpus,
                                    const Hyperparameters& hyper, const ThetaPrior& prior = {});

struct TokenWeight {
  std::string token;
  double probability = 0.0;
  bool operator==(const TokenWeight&) const = default;
};
struct PhenotypeTopTokens {
  std::size_t phenotype = 0;
  std::size_t source = 0;
  std::vector<TokenWeight> tokens;
};

// Top-k tokens of every (phenotype, source) pair, ordered by phenotype then
// source. Ties in probability are broken by ascending token id.
std::vector<PhenotypeTopTokens> phenotype_summary(const ModelState& state, const Corpus& corpus,
                                                  std::size_t k);

}  // namespace ss3m
