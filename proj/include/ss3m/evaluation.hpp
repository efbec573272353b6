#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ss3m/errors.hpp"
#include "ss3m/matrix.hpp"
#include "ss3m/model.hpp"

namespace ss3m {

// D_test x P_lab, higher means more likely Present.
using ScoreMatrix = Matrix<double>;
// Binary ground truth aligned with a ScoreMatrix.
using TruthMatrix = Matrix<std::uint8_t>;

// A metric that is not defined for the given truth vector (e.g. no positives).
class UndefinedMetric : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct HeldoutOptions {
  int burn_in = 50;
  int samples = 100;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  ThetaPrior prior;
};

struct HeldoutResult {
  // Posterior mean of A_dp over the labelled phenotypes.
  ScoreMatrix scores;
  // Posterior mean of theta_d over all phenotypes.
  Matrix<double> theta_mean;
};

// Patient-local inference with the trained phi, B and B* held fixed. Each
// patient gets its own random stream keyed by its id, so results do not
// depend on patient order or thread count.
HeldoutResult heldout_infer(const Corpus& test, const ModelState& trained,
                            const Hyperparameters& hyper, const HeldoutOptions& options);

TruthMatrix truth_matrix(const LabelMatrix& labels);

// Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(std::span<const double> scores, std::span<const std::uint8_t> truth);
// Step-wise area under the precision-recall curve over descending unique
// thresholds, tied scores entering together.
double auprc(std::span<const double> scores, std::span<const std::uint8_t> truth);

using LabelMetric = double (*)(std::span<const double>, std::span<const std::uint8_t>);

struct Averaged {
  double micro = 0.0;
  double macro = 0.0;
  // Labels left out of the macro average because the metric is undefined.
  std::size_t skipped_labels = 0;
};

Averaged micro_macro(LabelMetric metric, const ScoreMatrix& scores, const TruthMatrix& truth);

enum class NaiveBayesKind {
  Multinomial,  // token counts, add-one smoothing
  Gaussian,     // real features, per-class mean and floored variance
};

inline constexpr double kGaussianVarianceFloor = 1e-6;

// One-vs-rest naive Bayes. Scores are posterior log-odds; class priors are
// add-one smoothed. A label with no positive (or no negative) training rows
// scores every patient with the prior log-odds alone.
struct NaiveBayesModel {
  NaiveBayesKind kind = NaiveBayesKind::Multinomial;
  std::vector<double> prior_log_odds;     // per label
  std::vector<bool> degenerate;           // per label
  // Multinomial: log P(feature | pos) - log P(feature | neg), label x feature.
  Matrix<double> log_ratio;
  // Gaussian: class means and variances, label x feature.
  Matrix<double> mean_pos, mean_neg, var_pos, var_neg;
};

NaiveBayesModel nb_train(const Matrix<double>& features, const TruthMatrix& truth,
                         NaiveBayesKind kind);
ScoreMatrix nb_predict(const NaiveBayesModel& model, const Matrix<double>& features);

struct LogisticOptions {
  double l2 = 1e-2;
  int epochs = 500;
  double learning_rate = 1.0;
};

// L2-regularised binary logistic loss for one label on standardised features.
// Parameters are [weights..., intercept]; the intercept is not penalised.
class LogisticObjective {
 public:
  LogisticObjective(const Matrix<double>& features, std::span<const std::uint8_t> labels, double l2);
  double value(std::span<const double> params) const;
  // Returns the objective and writes its gradient.
  double value_and_gradient(std::span<const double> params, std::span<double> grad) const;
  std::size_t dimension() const { return features_.cols() + 1; }

 private:
  const Matrix<double>& features_;
  std::span<const std::uint8_t> labels_;
  double l2_;
};

struct LogisticModel {
  std::vector<double> feature_mean;
  std::vector<double> feature_scale;
  Matrix<double> weights;  // label x feature
  std::vector<double> intercept;
  std::vector<std::vector<double>> objective_trace;  // per label, per accepted step
};

// One-vs-rest fit by full-batch gradient descent, scaled per coordinate by a
// bound on the Hessian diagonal, with backtracking line search. Throws NumericalError when no decrease can be found away from a
// stationary point.
LogisticModel lr_train(const Matrix<double>& features, const TruthMatrix& truth,
                       const LogisticOptions& options);
// Logits.
ScoreMatrix lr_predict(const LogisticModel& model, const Matrix<double>& features);

// Token counts of every source side by side, one row per patient.
Matrix<double> token_count_features(const Corpus& corpus);

struct MetricsReport {
  std::string model_id;
  std::optional<double> auroc_micro;
  std::optional<double> auroc_macro;
  std::optional<double> auprc_micro;
  std::optional<double> auprc_macro;
  std::optional<double> max_log_likelihood;
  bool missing = false;
  std::size_t skipped_labels = 0;
};

struct TrainedModel {
  ModelState state;  // best state of the training run
  Hyperparameters hyper;
  ThetaPrior prior;
  double max_log_likelihood = 0.0;
};

// Mixed-membership models feeding the suite, keyed by kModel* ids.
inline constexpr const char* kModelSmplASmplB = "ss3m_smplA0_smplB";
inline constexpr const char* kModelSmplAFixB = "ss3m_smplA0_fixB";
inline constexpr const char* kModelFixASmplB = "ss3m_fixA0_smplB";
inline constexpr const char* kModelFixAFixB = "ss3m_fixA0_fixB";
inline constexpr const char* kModelMc3mSp = "mc3m-sp";
inline constexpr const char* kModelMc3m = "mc3m";

struct SuiteInputs {
  const Corpus* train_corpus = nullptr;
  const LabelMatrix* train_labels = nullptr;
  const Corpus* test_corpus = nullptr;
  const LabelMatrix* test_labels = nullptr;
  std::map<std::string, TrainedModel> models;
};

struct SuiteConfig {
  HeldoutOptions heldout;
  LogisticOptions logistic;
  // Permute test label rows: a null control whose AUROC should sit near 0.5.
  bool shuffle_test_labels = false;
  std::uint64_t seed = 0;
};

struct SuiteResult {
  std::vector<MetricsReport> reports;  // ten columns, fixed order
  // Test-set scores of every column that was computed, keyed by column id.
  std::map<std::string, ScoreMatrix> scores;
  std::string csv;
  std::string table;
  std::vector<std::string> warnings;
};

SuiteResult evaluate_suite(const SuiteInputs& inputs, const SuiteConfig& config);

std::string render_metrics_csv(const std::vector<MetricsReport>& reports);
std::string render_metrics_table(const std::vector<MetricsReport>& reports);
// patient_id,label,score
std::string render_scores_csv(const ScoreMatrix& scores, const std::vector<std::string>& patient_ids,
                              const std::vector<std::string>& label_names);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace ss3m
