#include "ss3m/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <exception>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "ss3m/gibbs.hpp"
#include "ss3m/math.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

namespace {

void check_metric_input(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  if (scores.size() != truth.size()) throw DimensionError("scores and truth differ in length");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericalError("scores must be finite");
}

// Indices of `scores` grouped into runs of equal value, ascending.
std::vector<std::size_t> ascending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return order;
}

std::vector<double> column(const Matrix<double>& m, std::size_t j) {
  std::vector<double> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
  return out;
}

std::vector<std::uint8_t> column(const TruthMatrix& m, std::size_t j) {
  std::vector<std::uint8_t> out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) out[i] = m(i, j);
  return out;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::fabs(z))); }

double log_normal_pdf(double x, double mean, double var) {
  const double diff = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - diff * diff / (2.0 * var);
}

template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += workers) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, end);
}

HeldoutResult heldout_infer(const Corpus& test, const ModelState& trained,
                            const Hyperparameters& hyper, const HeldoutOptions& options) {
  test.validate();
  if (trained.phi.size() != test.num_sources()) throw DataError("test corpus has a different number of sources");
  for (std::size_t s = 0; s < test.num_sources(); ++s) {
    if (trained.phi[s].cols() != test.vocab_size(s)) {
      throw DataError("vocabulary of source '" + test.source_names[s] + "' has " +
                      std::to_string(test.vocab_size(s)) + " entries, trained model expects " +
                      std::to_string(trained.phi[s].cols()));
    }
  }
  const std::size_t num_p = trained.num_phenotypes();
  const std::size_t num_labeled = std::min(hyper.num_labeled, num_p);
  HeldoutResult out{ScoreMatrix(test.num_patients(), num_labeled),
                    Matrix<double>(test.num_patients(), num_p)};
  parallel_for(test.num_patients(), options.threads, [&](std::size_t d) {
    Rng rng(derive_seed(options.seed, test.patient_ids[d]));
    const PatientPosterior post = infer_patient(test.tokens[d], trained, hyper, options.prior,
                                                options.burn_in, options.samples, rng);
    for (std::size_t j = 0; j < num_labeled; ++j) out.scores(d, j) = post.activation_mean[j];
    for (std::size_t p = 0; p < num_p; ++p) out.theta_mean(d, p) = post.theta_mean[p];
  });
  return out;
}

TruthMatrix truth_matrix(const LabelMatrix& labels) {
  TruthMatrix out(labels.num_patients(), labels.num_labels(), 0);
  for (std::size_t d = 0; d < labels.num_patients(); ++d) {
    for (std::size_t j = 0; j < labels.num_labels(); ++j) {
      out(d, j) = labels.entries(d, j) == LabelState::Present ? 1 : 0;
    }
  }
  return out;
}

double auroc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  check_metric_input(scores, truth);
  std::uint64_t num_pos = 0;
  for (auto t : truth) num_pos += t ? 1 : 0;
  const std::uint64_t num_neg = truth.size() - num_pos;
  if (num_pos == 0 || num_neg == 0) throw UndefinedMetric("AUROC needs both positives and negatives");

  const auto order = ascending_order(scores);
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos_group = 0, neg_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] ? pos_group : neg_group) += 1;
      ++j;
    }
    twice_u += pos_group * (2 * neg_below + neg_group);
    neg_below += neg_group;
    i = j;
  }
  return static_cast<double>(twice_u) /
         (2.0 * static_cast<double>(num_pos) * static_cast<double>(num_neg));
}

double auprc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
  check_metric_input(scores, truth);
  std::uint64_t num_pos = 0;
  for (auto t : truth) num_pos += t ? 1 : 0;
  if (num_pos == 0) throw UndefinedMetric("AUPRC needs at least one positive");

  auto order = ascending_order(scores);
  std::reverse(order.begin(), order.end());
  std::uint64_t tp = 0, fp = 0, prev_tp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (truth[order[j]] ? tp : fp) += 1;
      ++j;
    }
    area += static_cast<double>(tp - prev_tp) / static_cast<double>(num_pos) *
            (static_cast<double>(tp) / static_cast<double>(tp + fp));
    prev_tp = tp;
    i = j;
  }
  return area;
}

Averaged micro_macro(LabelMetric metric, const ScoreMatrix& scores, const TruthMatrix& truth) {
  if (scores.rows() != truth.rows() || scores.cols() != truth.cols()) {
    throw DimensionError("score and truth matrices differ in shape");
  }
  Averaged out;
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t j = 0; j < scores.cols(); ++j) {
    try {
      total += metric(column(scores, j), column(truth, j));
      ++defined;
    } catch (const UndefinedMetric&) {
      ++out.skipped_labels;
    }
  }
  if (defined == 0) throw UndefinedMetric("metric is undefined for every label");
  out.macro = total / static_cast<double>(defined);
  out.micro = metric(scores.data(), truth.data());
  return out;
}

NaiveBayesModel nb_train(const Matrix<double>& features, const TruthMatrix& truth,
                         NaiveBayesKind kind) {
  if (features.rows() != truth.rows()) throw DimensionError("features and labels differ in rows");
  const std::size_t n = features.rows();
  const std::size_t num_f = features.cols();
  const std::size_t num_l = truth.cols();
  NaiveBayesModel model;
  model.kind = kind;
  model.prior_log_odds.resize(num_l);
  model.degenerate.resize(num_l);
  if (kind == NaiveBayesKind::Multinomial) {
    model.log_ratio = Matrix<double>(num_l, num_f, 0.0);
  } else {
    model.mean_pos = model.mean_neg = Matrix<double>(num_l, num_f, 0.0);
    model.var_pos = model.var_neg = Matrix<double>(num_l, num_f, 1.0);
  }
  for (const double v : features.data()) {
    if (!std::isfinite(v)) throw NumericalError("naive Bayes features must be finite");
    if (kind == NaiveBayesKind::Multinomial && v < 0.0) {
      throw DataError("multinomial naive Bayes needs non-negative counts");
    }
  }

  for (std::size_t j = 0; j < num_l; ++j) {
    std::size_t num_pos = 0;
    for (std::size_t i = 0; i < n; ++i) num_pos += truth(i, j) ? 1 : 0;
    const std::size_t num_neg = n - num_pos;
    model.prior_log_odds[j] = std::log(static_cast<double>(num_pos) + 1.0) -
                              std::log(static_cast<double>(num_neg) + 1.0);
    model.degenerate[j] = num_pos == 0 || num_neg == 0;
    if (model.degenerate[j]) continue;

    if (kind == NaiveBayesKind::Multinomial) {
      std::vector<double> pos(num_f, 0.0), neg(num_f, 0.0);
      double pos_total = 0.0, neg_total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        auto& target = truth(i, j) ? pos : neg;
        double& total = truth(i, j) ? pos_total : neg_total;
        for (std::size_t f = 0; f < num_f; ++f) {
          target[f] += features(i, f);
          total += features(i, f);
        }
      }
      const auto dim = static_cast<double>(num_f);
      for (std::size_t f = 0; f < num_f; ++f) {
        model.log_ratio(j, f) = std::log((pos[f] + 1.0) / (pos_total + dim)) -
                                std::log((neg[f] + 1.0) / (neg_total + dim));
      }
    } else {
      for (std::size_t f = 0; f < num_f; ++f) {
        double sum_pos = 0.0, sum_neg = 0.0;
        for (std::size_t i = 0; i < n; ++i) (truth(i, j) ? sum_pos : sum_neg) += features(i, f);
        const double mean_pos = sum_pos / static_cast<double>(num_pos);
        const double mean_neg = sum_neg / static_cast<double>(num_neg);
        double ss_pos = 0.0, ss_neg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double x = features(i, f);
          if (truth(i, j)) {
            ss_pos += (x - mean_pos) * (x - mean_pos);
          } else {
            ss_neg += (x - mean_neg) * (x - mean_neg);
          }
        }
        model.mean_pos(j, f) = mean_pos;
        model.mean_neg(j, f) = mean_neg;
        model.var_pos(j, f) = std::max(ss_pos / static_cast<double>(num_pos), kGaussianVarianceFloor);
        model.var_neg(j, f) = std::max(ss_neg / static_cast<double>(num_neg), kGaussianVarianceFloor);
      }
    }
  }
  return model;
}

ScoreMatrix nb_predict(const NaiveBayesModel& model, const Matrix<double>& features) {
  const std::size_t num_l = model.prior_log_odds.size();
  ScoreMatrix scores(features.rows(), num_l);
  const std::size_t num_f = model.kind == NaiveBayesKind::Multinomial ? model.log_ratio.cols()
                                                                      : model.mean_pos.cols();
  if (features.cols() != num_f) throw DimensionError("naive Bayes feature width mismatch");
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < num_l; ++j) {
      double score = model.prior_log_odds[j];
      if (!model.degenerate[j]) {
        for (std::size_t f = 0; f < num_f; ++f) {
          const double x = features(i, f);
          if (model.kind == NaiveBayesKind::Multinomial) {
            score += x * model.log_ratio(j, f);
          } else {
            score += log_normal_pdf(x, model.mean_pos(j, f), model.var_pos(j, f)) -
                     log_normal_pdf(x, model.mean_neg(j, f), model.var_neg(j, f));
          }
        }
      }
      scores(i, j) = score;
    }
  }
  return scores;
}

LogisticObjective::LogisticObjective(const Matrix<double>& features,
                                     std::span<const std::uint8_t> labels, double l2)
    : features_(features), labels_(labels), l2_(l2) {
  if (features.rows() != labels.size()) throw DimensionError("features and labels differ in rows");
  if (features.rows() == 0) throw DataError("logistic regression needs training rows");
}

double LogisticObjective::value(std::span<const double> params) const {
  std::vector<double> unused(dimension());
  return value_and_gradient(params, unused);
}

double LogisticObjective::value_and_gradient(std::span<const double> params,
                                             std::span<double> grad) const {
  const std::size_t num_f = features_.cols();
  const auto n = static_cast<double>(features_.rows());
  std::fill(grad.begin(), grad.end(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < features_.rows(); ++i) {
    const auto x = features_.row(i);
    double z = params[num_f];
    for (std::size_t f = 0; f < num_f; ++f) z += params[f] * x[f];
    const double y = labels_[i] ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
    const double residual = sigmoid(z) - y;
    for (std::size_t f = 0; f < num_f; ++f) grad[f] += residual * x[f];
    grad[num_f] += residual;
  }
  double penalty = 0.0;
  for (std::size_t f = 0; f < num_f; ++f) {
    grad[f] = grad[f] / n + l2_ * params[f];
    penalty += params[f] * params[f];
  }
  grad[num_f] /= n;
  return loss / n + 0.5 * l2_ * penalty;
}

LogisticModel lr_train(const Matrix<double>& features, const TruthMatrix& truth,
                       const LogisticOptions& options) {
  if (!(options.l2 >= 0.0) || options.epochs < 1 || !(options.learning_rate > 0.0)) {
    throw ConfigError("logistic regression needs l2 >= 0, epochs >= 1, learning_rate > 0");
  }
  if (features.rows() != truth.rows()) throw DimensionError("features and labels differ in rows");
  const std::size_t n = features.rows();
  const std::size_t num_f = features.cols();
  LogisticModel model;
  model.feature_mean.assign(num_f, 0.0);
  model.feature_scale.assign(num_f, 1.0);
  for (std::size_t f = 0; f < num_f; ++f) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += features(i, f);
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (features(i, f) - mean) * (features(i, f) - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    model.feature_mean[f] = mean;
    model.feature_scale[f] = sd > 1e-12 ? sd : 1.0;
  }
  Matrix<double> standardized(n, num_f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < num_f; ++f) {
      standardized(i, f) = (features(i, f) - model.feature_mean[f]) / model.feature_scale[f];
    }
  }

  model.weights = Matrix<double>(truth.cols(), num_f, 0.0);
  model.intercept.assign(truth.cols(), 0.0);
  model.objective_trace.resize(truth.cols());
  for (std::size_t j = 0; j < truth.cols(); ++j) {
    const auto labels = column(truth, j);
    const LogisticObjective objective(standardized, labels, options.l2);
    std::vector<double> params(num_f + 1, 0.0), grad(num_f + 1), trial(num_f + 1),
        trial_grad(num_f + 1);
    // Diagonal bound on the Hessian: sigmoid' <= 1/4 times the mean squared
    // feature, plus the penalty. Scaling by it keeps one step size workable
    // for the intercept and heavily penalised weights alike.
    std::vector<double> inverse_curvature(num_f + 1, 4.0);
    for (std::size_t f = 0; f < num_f; ++f) {
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) sq += standardized(i, f) * standardized(i, f);
      const double curvature = 0.25 * sq / static_cast<double>(n) + options.l2;
      inverse_curvature[f] = curvature > 0.0 ? 1.0 / curvature : 1.0;
    }
    double value = objective.value_and_gradient(params, grad);
    auto& trace = model.objective_trace[j];
    trace.push_back(value);
    double step = options.learning_rate;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
      double grad_sq = 0.0, decrease = 0.0;
      for (std::size_t k = 0; k < grad.size(); ++k) {
        grad_sq += grad[k] * grad[k];
        decrease += grad[k] * grad[k] * inverse_curvature[k];
      }
      if (std::sqrt(grad_sq) < 1e-10) break;
      bool improved = false;
      while (step >= 1e-14) {
        for (std::size_t k = 0; k < params.size(); ++k) {
          trial[k] = params[k] - step * inverse_curvature[k] * grad[k];
        }
        const double trial_value = objective.value_and_gradient(trial, trial_grad);
        if (trial_value <= value - 1e-4 * step * decrease) {
          params.swap(trial);
          grad.swap(trial_grad);
          value = trial_value;
          improved = true;
          break;
        }
        step *= 0.5;
      }
      if (!improved) {
        if (std::sqrt(grad_sq) <= 1e-6 * std::max(1.0, std::fabs(value))) break;
        throw NumericalError("logistic regression could not decrease its objective for label " +
                             std::to_string(j));
      }
      trace.push_back(value);
      step = std::min(step * 2.0, options.learning_rate);
    }
    for (std::size_t f = 0; f < num_f; ++f) model.weights(j, f) = params[f];
    model.intercept[j] = params[num_f];
  }
  return model;
}

ScoreMatrix lr_predict(const LogisticModel& model, const Matrix<double>& features) {
  const std::size_t num_f = model.feature_mean.size();
  if (features.cols() != num_f) throw DimensionError("logistic regression feature width mismatch");
  ScoreMatrix scores(features.rows(), model.intercept.size());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t j = 0; j < model.intercept.size(); ++j) {
      double z = model.intercept[j];
      for (std::size_t f = 0; f < num_f; ++f) {
        z += model.weights(j, f) * (features(i, f) - model.feature_mean[f]) / model.feature_scale[f];
      }
      scores(i, j) = z;
    }
  }
  return scores;
}

Matrix<double> token_count_features(const Corpus& corpus) {
  std::vector<std::size_t> offset(corpus.num_sources() + 1, 0);
  for (std::size_t s = 0; s < corpus.num_sources(); ++s) offset[s + 1] = offset[s] + corpus.vocab_size(s);
  Matrix<double> out(corpus.num_patients(), offset.back(), 0.0);
  for (std::size_t d = 0; d < corpus.num_patients(); ++d) {
    for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
      for (TokenId w : corpus.tokens[d][s]) out(d, offset[s] + w) += 1.0;
    }
  }
  return out;
}

SuiteResult evaluate_suite(const SuiteInputs& inputs, const SuiteConfig& config) {
  if (!inputs.train_corpus || !inputs.train_labels || !inputs.test_corpus || !inputs.test_labels) {
    throw ConfigError("evaluation needs train and test corpora with labels");
  }
  SuiteResult result;
  const TruthMatrix train_truth = truth_matrix(*inputs.train_labels);
  TruthMatrix test_truth = truth_matrix(*inputs.test_labels);
  if (config.shuffle_test_labels) {
    Rng rng(derive_seed(config.seed, "shuffle-labels"));
    const std::size_t rows = test_truth.rows();
    for (std::size_t i = rows; i > 1; --i) {
      const std::size_t k = rng.below(i);
      for (std::size_t j = 0; j < test_truth.cols(); ++j) std::swap(test_truth(i - 1, j), test_truth(k, j));
    }
  }

  auto report_for = [&](const std::string& id, const ScoreMatrix& scores,
                        std::optional<double> ll) {
    MetricsReport report;
    report.model_id = id;
    report.max_log_likelihood = ll;
    result.scores.emplace(id, scores);
    try {
      const Averaged roc = micro_macro(&auroc, scores, test_truth);
      report.auroc_micro = roc.micro;
      report.auroc_macro = roc.macro;
      report.skipped_labels = roc.skipped_labels;
    } catch (const UndefinedMetric& e) {
      result.warnings.push_back(id + ": AUROC undefined (" + e.what() + ")");
    }
    try {
      const Averaged pr = micro_macro(&auprc, scores, test_truth);
      report.auprc_micro = pr.micro;
      report.auprc_macro = pr.macro;
    } catch (const UndefinedMetric& e) {
      result.warnings.push_back(id + ": AUPRC undefined (" + e.what() + ")");
    }
    if (report.skipped_labels > 0) {
      result.warnings.push_back(id + ": " + std::to_string(report.skipped_labels) +
                                " labels without test positives skipped in macro averages");
    }
    return report;
  };
  auto missing = [&](const std::string& id) {
    result.warnings.push_back(id + ": trained model not found, column left as placeholder");
    MetricsReport report;
    report.model_id = id;
    report.missing = true;
    return report;
  };

  for (const char* id : {kModelSmplASmplB, kModelSmplAFixB, kModelFixASmplB, kModelFixAFixB}) {
    auto it = inputs.models.find(id);
    if (it == inputs.models.end()) {
      result.reports.push_back(missing(id));
      continue;
    }
    const TrainedModel& model = it->second;
    if (model.hyper.num_labeled != inputs.test_labels->num_labels()) {
      throw DimensionError(std::string(id) + " was trained with " +
                           std::to_string(model.hyper.num_labeled) + " labels, test data has " +
                           std::to_string(inputs.test_labels->num_labels()));
    }
    HeldoutOptions heldout = config.heldout;
    heldout.prior = model.prior;
    const HeldoutResult held = heldout_infer(*inputs.test_corpus, model.state, model.hyper, heldout);
    result.reports.push_back(report_for(id, held.scores, model.max_log_likelihood));
  }

  for (const char* id : {kModelMc3mSp, kModelMc3m}) {
    const std::string base(id);
    auto it = inputs.models.find(id);
    if (it == inputs.models.end()) {
      result.reports.push_back(missing(base + "_lr"));
      result.reports.push_back(missing(base + "_nb"));
      continue;
    }
    const TrainedModel& model = it->second;
    if (model.state.num_patients() != inputs.train_corpus->num_patients()) {
      throw DimensionError(base + " state does not describe the training patients");
    }
    HeldoutOptions heldout = config.heldout;
    heldout.prior = model.prior;
    const HeldoutResult held = heldout_infer(*inputs.test_corpus, model.state, model.hyper, heldout);
    const LogisticModel lr = lr_train(model.state.theta, train_truth, config.logistic);
    result.reports.push_back(
        report_for(base + "_lr", lr_predict(lr, held.theta_mean), model.max_log_likelihood));
    const NaiveBayesModel nb = nb_train(model.state.theta, train_truth, NaiveBayesKind::Gaussian);
    result.reports.push_back(
        report_for(base + "_nb", nb_predict(nb, held.theta_mean), model.max_log_likelihood));
  }

  const Matrix<double> train_counts = token_count_features(*inputs.train_corpus);
  const Matrix<double> test_counts = token_count_features(*inputs.test_corpus);
  const LogisticModel lr = lr_train(train_counts, train_truth, config.logistic);
  result.reports.push_back(report_for("raw_lr", lr_predict(lr, test_counts), std::nullopt));
  const NaiveBayesModel nb = nb_train(train_counts, train_truth, NaiveBayesKind::Multinomial);
  result.reports.push_back(report_for("raw_nb", nb_predict(nb, test_counts), std::nullopt));

  result.csv = render_metrics_csv(result.reports);
  result.table = render_metrics_table(result.reports);
  return result;
}

std::string render_metrics_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream out;
  out << "model_id,metric,averaging,value\n";
  auto row = [&](const MetricsReport& r, const char* metric, const char* averaging,
                 const std::optional<double>& value) {
    out << r.model_id << ',' << metric << ',' << averaging << ','
        << (value ? format_double(*value) : std::string("NA")) << '\n';
  };
  for (const auto& r : reports) {
    row(r, "auroc", "micro", r.auroc_micro);
    row(r, "auroc", "macro", r.auroc_macro);
    row(r, "auprc", "micro", r.auprc_micro);
    row(r, "auprc", "macro", r.auprc_macro);
    const bool raw = r.model_id.rfind("raw_", 0) == 0;
    if (!raw) row(r, "log_likelihood", "max", r.max_log_likelihood);
  }
  return out.str();
}

std::string render_metrics_table(const std::vector<MetricsReport>& reports) {
  constexpr int kLead = 20;
  constexpr int kWidth = 13;
  std::ostringstream out;
  auto cell = [&](const std::string& text) {
    std::string t = text.substr(0, kWidth - 1);
    out << t << std::string(static_cast<std::size_t>(kWidth) - t.size(), ' ');
  };
  auto lead = [&](const std::string& text) {
    out << text << std::string(static_cast<std::size_t>(kLead) - text.size(), ' ');
  };
  auto group_of = [](const std::string& id) -> std::string {
    if (id.rfind("ss3m_", 0) == 0) return "SS3M";
    if (id.rfind("mc3m-sp", 0) == 0) return "MC3M-SP";
    if (id.rfind("mc3m", 0) == 0) return "MC3M";
    return "Raw Tokens";
  };
  auto header1 = [](const std::string& id) -> std::string {
    if (id.find("smplA0") != std::string::npos) return "smpl A0";
    if (id.find("fixA0") != std::string::npos) return "fix A0";
    if (id.size() > 3 && id.compare(id.size() - 3, 3, "_lr") == 0) return "LR";
    return "NB";
  };
  auto header2 = [](const std::string& id) -> std::string {
    if (id.find("smplB") != std::string::npos) return "smpl B/B*";
    if (id.find("fixB") != std::string::npos) return "fix B/B*";
    return "";
  };

  lead("");
  std::string previous;
  for (const auto& r : reports) {
    const std::string group = group_of(r.model_id);
    cell(group == previous ? "" : group);
    previous = group;
  }
  out << '\n';
  lead("");
  for (const auto& r : reports) cell(header1(r.model_id));
  out << '\n';
  lead("");
  for (const auto& r : reports) cell(header2(r.model_id));
  out << '\n';

  auto metric_row = [&](const std::string& label, auto getter) {
    lead(label);
    for (const auto& r : reports) {
      if (r.missing) {
        cell("missing");
        continue;
      }
      const std::optional<double> v = getter(r);
      if (!v) {
        cell("n/a");
        continue;
      }
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", *v);
      cell(buf);
    }
    out << '\n';
  };
  metric_row("AUROC  micro", [](const MetricsReport& r) { return r.auroc_micro; });
  metric_row("       macro", [](const MetricsReport& r) { return r.auroc_macro; });
  metric_row("AUPRC  micro", [](const MetricsReport& r) { return r.auprc_micro; });
  metric_row("       macro", [](const MetricsReport& r) { return r.auprc_macro; });
  lead("Log-likelihood");
  for (const auto& r : reports) {
    if (r.missing) {
      cell("missing");
    } else if (!r.max_log_likelihood) {
      cell("--");
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4e", *r.max_log_likelihood);
      cell(buf);
    }
  }
  out << '\n';
  return out.str();
}

std::string render_scores_csv(const ScoreMatrix& scores, const std::vector<std::string>& patient_ids,
                              const std::vector<std::string>& label_names) {
  if (patient_ids.size() != scores.rows() || label_names.size() != scores.cols()) {
    throw DimensionError("score matrix does not match patient ids and label names");
  }
  std::ostringstream out;
  out << "patient_id,label,score\n";
  for (std::size_t d = 0; d < scores.rows(); ++d) {
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      out << patient_ids[d] << ',' << label_names[j] << ',' << format_double(scores(d, j)) << '\n';
    }
  }
  return out.str();
}

}  // namespace ss3m
