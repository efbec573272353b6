#include "ss3m/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <charconv>
#include <filesystem>
#include <json.hpp>
#include <memory>
#include <ostream>
#include <sstream>

#include "ss3m/data_io.hpp"
#include "ss3m/errors.hpp"
#include "ss3m/evaluation.hpp"
#include "ss3m/gibbs.hpp"
#include "ss3m/model.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "ss3m-model-v1";
constexpr const char* kSummaryFormat = "ss3m-summary-v1";

const std::vector<ConfigKey> kKeys = {
    {"run.seed", "0", "master seed; every module draws from a named sub-stream of it"},
    {"run.threads", "1", "worker threads; 1 is the deterministic mode"},
    {"model.num_phenotypes", "70", "number of phenotypes P"},
    {"model.num_labeled", "50", "number of labelled phenotypes"},
    {"model.gamma", "0.01", "token concentration, one value or one per source"},
    {"model.alpha", "0.1", "prior activation probability"},
    {"model.b_shape", "10", "Gamma shape of B"},
    {"model.b_scale", "1", "Gamma scale of B"},
    {"model.bstar_shape", "0.01", "Gamma shape of B*"},
    {"model.bstar_scale", "1", "Gamma scale of B*"},
    {"model.mc3m_concentration", "1", "symmetric Dirichlet concentration of the mc3m baseline"},
    {"hmc.path_length", "25", "leapfrog steps per HMC proposal"},
    {"hmc.step_size", "0.01", "leapfrog step size"},
    {"train.iterations", "200", "Gibbs sweeps"},
    {"train.variant", "ss3m", "ss3m | mc3m-sp | mc3m | all"},
    {"train.missing_label_mode", "fix_zero", "fix_zero | estimate (unknown labelled activations)"},
    {"train.b_mode", "fixed", "fixed | sampled (B and B*)"},
    {"generate.num_patients", "200", "synthetic patients"},
    {"generate.vocab_sizes", "100,100", "vocabulary size per source; the count sets the sources"},
    {"generate.doc_length", "poisson:150", "poisson:MEAN or fixed:N, one value or one per source"},
    {"preprocess.input", nullptr, "JSON-lines records"},
    {"preprocess.label_csv", "", "optional CSV of extra labels (patient_id,label[,state])"},
    {"preprocess.min_count", nullptr, "drop tokens with a smaller total count in their source"},
    {"preprocess.max_doc_fraction", nullptr, "drop tokens found in a larger fraction of patients"},
    {"preprocess.stopwords", "", "optional file with one stopword per line"},
    {"preprocess.sources", "", "comma-separated source order; empty keeps every source, sorted"},
    {"preprocess.train_fraction", "0.8", "fraction of patients in the training split"},
    {"preprocess.num_labels", "", "labels kept by frequency; empty uses model.num_labeled"},
    {"data.train_corpus", nullptr, "training corpus file"},
    {"data.train_labels", nullptr, "training labels file"},
    {"data.test_corpus", nullptr, "test corpus file"},
    {"data.test_labels", nullptr, "test labels file"},
    {"data.models", nullptr, "directory holding one trained model per subdirectory"},
    {"data.state", nullptr, "state file to summarise"},
    {"evaluate.burn_in", "50", "held-out Gibbs sweeps discarded per patient"},
    {"evaluate.samples", "100", "held-out Gibbs sweeps averaged per patient"},
    {"evaluate.shuffle_labels", "false", "permute test labels (null control)"},
    {"evaluate.lr_l2", "0.01", "logistic regression L2 penalty"},
    {"evaluate.lr_epochs", "500", "logistic regression gradient steps"},
    {"evaluate.lr_learning_rate", "1", "logistic regression initial step"},
    {"summarize.k", "10", "tokens listed per phenotype and source"},
};

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : kKeys)
    if (name == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': '" + text + "' is not a valid number");
  }
  return value;
}

// Files written by a command, hashed for the manifest.
class Output {
 public:
  Output(fs::path root, bool force) : root_(std::move(root)) {
    if (fs::exists(root_)) {
      if (!fs::is_directory(root_)) throw ConfigError(root_.string() + " is not a directory");
      if (!fs::is_empty(root_) && !force) {
        throw ConfigError("output directory " + root_.string() +
                          " is not empty; pass --force to overwrite");
      }
    }
    fs::create_directories(root_);
  }

  fs::path path(const std::string& name) const { return root_ / name; }

  void write(const std::string& name, const std::string& content) {
    fs::create_directories(path(name).parent_path());
    write_file_atomic(path(name), content);
    files_[name] = content_hash(content);
  }
  // Registers a file that was written by a save_* function.
  void record(const std::string& name) { files_[name] = content_hash(read_file(path(name))); }

  void finish(const std::string& command, const RunConfig& config) {
    const std::string resolved = config.render();
    write("config.resolved", resolved);
    json manifest;
    manifest["command"] = command;
    manifest["seed"] = config.get_uint("run.seed");
    manifest["config_hash"] = content_hash(resolved);
    json files = json::object();
    for (const auto& [name, hash] : files_) files[name] = hash;
    manifest["files"] = std::move(files);
    write_file_atomic(path("manifest.json"), manifest.dump(2) + "\n");
  }

 private:
  fs::path root_;
  std::map<std::string, std::string> files_;
};

std::vector<double> resolve_per_source(const RunConfig& config, const std::string& key,
                                       std::size_t num_sources) {
  std::vector<double> values;
  for (const auto& item : config.get_list(key)) values.push_back(parse_number<double>(key, item));
  if (values.size() == 1) values.assign(num_sources, values[0]);
  if (values.size() != num_sources) {
    throw ConfigError("config key '" + key + "' has " + std::to_string(values.size()) +
                      " entries for " + std::to_string(num_sources) + " sources");
  }
  return values;
}

Hyperparameters hyper_from(const RunConfig& config, std::size_t num_sources) {
  Hyperparameters h;
  const auto positive_size = [&](const char* key) {
    const auto v = config.get_int(key);
    if (v < 0) throw ConfigError(std::string("config key '") + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  };
  h.num_phenotypes = positive_size("model.num_phenotypes");
  h.num_labeled = positive_size("model.num_labeled");
  h.token_concentration = resolve_per_source(config, "model.gamma", num_sources);
  h.activation_prior = config.get_double("model.alpha");
  h.b_shape = config.get_double("model.b_shape");
  h.b_scale = config.get_double("model.b_scale");
  h.bstar_shape = config.get_double("model.bstar_shape");
  h.bstar_scale = config.get_double("model.bstar_scale");
  h.hmc_path_length = static_cast<int>(config.get_int("hmc.path_length"));
  h.hmc_step_size = config.get_double("hmc.step_size");
  h.iterations = static_cast<int>(config.get_int("train.iterations"));
  h.validate();
  return h;
}

json hyper_to_json(const Hyperparameters& h) {
  return {{"num_phenotypes", h.num_phenotypes},
          {"num_labeled", h.num_labeled},
          {"token_concentration", h.token_concentration},
          {"activation_prior", h.activation_prior},
          {"b_shape", h.b_shape},
          {"b_scale", h.b_scale},
          {"bstar_shape", h.bstar_shape},
          {"bstar_scale", h.bstar_scale},
          {"hmc_path_length", h.hmc_path_length},
          {"hmc_step_size", h.hmc_step_size},
          {"iterations", h.iterations}};
}

Hyperparameters hyper_from_json(const json& j) {
  Hyperparameters h;
  h.num_phenotypes = j.at("num_phenotypes").get<std::size_t>();
  h.num_labeled = j.at("num_labeled").get<std::size_t>();
  h.token_concentration = j.at("token_concentration").get<std::vector<double>>();
  h.activation_prior = j.at("activation_prior").get<double>();
  h.b_shape = j.at("b_shape").get<double>();
  h.b_scale = j.at("b_scale").get<double>();
  h.bstar_shape = j.at("bstar_shape").get<double>();
  h.bstar_scale = j.at("bstar_scale").get<double>();
  h.hmc_path_length = j.at("hmc_path_length").get<int>();
  h.hmc_step_size = j.at("hmc_step_size").get<double>();
  h.iterations = j.at("iterations").get<int>();
  return h;
}

// Keeps the first k label columns (labels are ordered by frequency).
LabelMatrix first_labels(const LabelMatrix& labels, std::size_t k) {
  if (k > labels.num_labels()) {
    throw DataError("labels file has " + std::to_string(labels.num_labels()) + " labels but " +
                    std::to_string(k) + " are configured");
  }
  LabelMatrix out;
  out.label_names.assign(labels.label_names.begin(), labels.label_names.begin() + static_cast<std::ptrdiff_t>(k));
  out.entries = Matrix<LabelState>(labels.num_patients(), k);
  for (std::size_t d = 0; d < labels.num_patients(); ++d)
    for (std::size_t j = 0; j < k; ++j) out.entries(d, j) = labels.entries(d, j);
  return out;
}

DocLengthSpec doc_lengths_from(const RunConfig& config, std::size_t num_sources) {
  DocLengthSpec spec;
  for (const auto& item : config.get_list("generate.doc_length")) {
    const auto colon = item.find(':');
    const std::string kind = item.substr(0, colon);
    const std::string value = colon == std::string::npos ? "" : item.substr(colon + 1);
    if (kind == "poisson") {
      spec.emplace_back(PoissonLength{parse_number<double>("generate.doc_length", value)});
    } else if (kind == "fixed") {
      spec.emplace_back(FixedLength{parse_number<std::size_t>("generate.doc_length", value)});
    } else {
      throw ConfigError("config key 'generate.doc_length': expected poisson:MEAN or fixed:N, got '" +
                        item + "'");
    }
  }
  if (spec.size() == 1) spec.assign(num_sources, spec[0]);
  if (spec.size() != num_sources) {
    throw ConfigError("config key 'generate.doc_length' needs one entry or one per source");
  }
  return spec;
}

std::string likelihood_csv(const TrainTrace& trace) {
  std::ostringstream out;
  out << "iteration,log_likelihood,hmc_accept_rate\n";
  for (std::size_t i = 1; i < trace.iterations.size(); ++i) {
    const auto& it = trace.iterations[i];
    out << i << ',' << format_double(it.log_likelihood) << ',';
    if (it.hmc_proposed > 0) {
      out << format_double(static_cast<double>(it.hmc_accepted) / it.hmc_proposed);
    } else {
      out << "NA";
    }
    out << '\n';
  }
  return out.str();
}

struct Variant {
  std::string id;
  std::size_t num_labeled;
  MissingLabelMode missing;
  BMode b_mode;
  ThetaPrior prior;
};

std::string mode_name(MissingLabelMode m) { return m == MissingLabelMode::Estimate ? "estimate" : "fix_zero"; }
std::string mode_name(BMode m) { return m == BMode::Sampled ? "sampled" : "fixed"; }

std::vector<Variant> variants_from(const RunConfig& config, const Hyperparameters& hyper) {
  const std::string missing_text = config.get("train.missing_label_mode");
  const std::string b_text = config.get("train.b_mode");
  MissingLabelMode missing;
  if (missing_text == "fix_zero") {
    missing = MissingLabelMode::FixZero;
  } else if (missing_text == "estimate") {
    missing = MissingLabelMode::Estimate;
  } else {
    throw ConfigError("train.missing_label_mode must be fix_zero or estimate");
  }
  BMode b_mode;
  if (b_text == "fixed") {
    b_mode = BMode::Fixed;
  } else if (b_text == "sampled") {
    b_mode = BMode::Sampled;
  } else {
    throw ConfigError("train.b_mode must be fixed or sampled");
  }
  const ThetaPrior gated{};
  const ThetaPrior symmetric{PriorKind::Symmetric, config.get_double("model.mc3m_concentration")};
  if (!(symmetric.concentration > 0.0)) throw ConfigError("model.mc3m_concentration must be positive");
  auto ss3m_id = [](MissingLabelMode m, BMode b) {
    return std::string("ss3m_") + (m == MissingLabelMode::Estimate ? "smplA0" : "fixA0") + "_" +
           (b == BMode::Sampled ? "smplB" : "fixB");
  };

  const std::string variant = config.get("train.variant");
  std::vector<Variant> out;
  if (variant == "ss3m") {
    out.push_back({ss3m_id(missing, b_mode), hyper.num_labeled, missing, b_mode, gated});
  } else if (variant == "mc3m-sp") {
    out.push_back({kModelMc3mSp, 0, missing, b_mode, gated});
  } else if (variant == "mc3m") {
    out.push_back({kModelMc3m, 0, missing, BMode::Fixed, symmetric});
  } else if (variant == "all") {
    for (auto m : {MissingLabelMode::Estimate, MissingLabelMode::FixZero})
      for (auto b : {BMode::Sampled, BMode::Fixed}) out.push_back({ss3m_id(m, b), hyper.num_labeled, m, b, gated});
    out.push_back({kModelMc3mSp, 0, missing, b_mode, gated});
    out.push_back({kModelMc3m, 0, missing, BMode::Fixed, symmetric});
  } else {
    throw ConfigError("train.variant must be ss3m, mc3m-sp, mc3m or all");
  }
  return out;
}

TrainedModel load_model(const fs::path& dir, std::vector<std::string>* label_names = nullptr) {
  const fs::path file = dir / "model.json";
  json doc;
  try {
    doc = json::parse(read_file(file));
  } catch (const json::exception&) {
    throw DataError(file.string() + " is not a model file");
  }
  const std::string format = doc.value("format", "");
  if (format != kModelFormat) {
    if (format.rfind("ss3m-model-v", 0) == 0) {
      throw VersionError(file.string() + " has format version " + format + " but this build reads " +
                         kModelFormat);
    }
    throw DataError(file.string() + " is not a model file");
  }
  try {
    TrainedModel model;
    model.hyper = hyper_from_json(doc.at("hyperparameters"));
    const auto& prior = doc.at("prior");
    model.prior.kind = prior.at("kind").get<std::string>() == "symmetric" ? PriorKind::Symmetric
                                                                           : PriorKind::ActivationGated;
    model.prior.concentration = prior.at("concentration").get<double>();
    model.max_log_likelihood = doc.at("max_log_likelihood").get<double>();
    model.state = load_state(dir / doc.at("state").get<std::string>());
    if (label_names) *label_names = doc.at("label_names").get<std::vector<std::string>>();
    return model;
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": corrupt model file (" + e.what() + ")");
  }
}

struct Context {
  RunConfig& config;
  Output& output;
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed;
  unsigned threads;
};

void cmd_generate(Context& ctx) {
  const auto& config = ctx.config;
  std::vector<std::size_t> vocab_sizes;
  for (const auto& item : config.get_list("generate.vocab_sizes")) {
    vocab_sizes.push_back(parse_number<std::size_t>("generate.vocab_sizes", item));
  }
  if (vocab_sizes.empty()) throw ConfigError("generate.vocab_sizes needs at least one source");
  const Hyperparameters hyper = hyper_from(config, vocab_sizes.size());
  const auto num_patients = parse_number<std::size_t>("generate.num_patients", config.get("generate.num_patients"));
  const GeneratedData data = generate(hyper, vocab_sizes, doc_lengths_from(config, vocab_sizes.size()),
                                      num_patients, derive_seed(ctx.seed, "generate"));
  const LabelMatrix labels = labels_from_activations(data.truth, hyper.num_labeled);

  std::ostringstream jsonl;
  for (const auto& rec : corpus_to_records(data.corpus, &labels)) {
    jsonl << json{{"patient_id", rec.patient_id}, {"source", rec.source}, {"tokens", rec.tokens},
                  {"labels", rec.labels}}
                 .dump()
          << '\n';
  }
  ctx.output.write("corpus.jsonl", jsonl.str());
  save_corpus(data.corpus, ctx.output.path("corpus.json"));
  ctx.output.record("corpus.json");
  save_labels(labels, data.corpus.patient_ids, ctx.output.path("labels.json"));
  ctx.output.record("labels.json");
  save_state(data.truth, ctx.output.path("truth_state.json"));
  ctx.output.record("truth_state.json");
  ctx.out << "generated " << num_patients << " patients, " << data.corpus.num_tokens() << " tokens\n";
}

void cmd_preprocess(Context& ctx) {
  const auto& config = ctx.config;
  PreprocessConfig pre;
  pre.min_count = parse_number<std::size_t>("preprocess.min_count", config.get("preprocess.min_count"));
  pre.max_doc_fraction = config.get_double("preprocess.max_doc_fraction");
  const RawLoadResult raw = load_raw(config.get("preprocess.input"));
  if (raw.unknown_fields > 0) {
    ctx.err << "warning: skipped " << raw.unknown_fields << " unrecognised record fields\n";
  }
  pre.sources = config.get_list("preprocess.sources");
  if (const auto& path = config.get("preprocess.stopwords"); !path.empty()) {
    std::istringstream in(read_file(path));
    for (std::string line; std::getline(in, line);) {
      if (auto word = trim(line); !word.empty()) pre.stopwords.insert(word);
    }
  }
  pre.validate();
  const PreprocessResult result = preprocess(raw.records, pre);
  if (result.dropped_patients > 0) {
    ctx.err << "warning: dropped " << result.dropped_patients << " patients left without tokens\n";
  }

  PatientLabels patient_labels = collect_labels(raw.records);
  if (const auto& path = config.get("preprocess.label_csv"); !path.empty()) {
    merge_labels(patient_labels, load_label_csv(path));
  }
  const std::string& num_labels_text = config.get("preprocess.num_labels");
  const auto num_labels = num_labels_text.empty()
                              ? static_cast<std::size_t>(config.get_int("model.num_labeled"))
                              : parse_number<std::size_t>("preprocess.num_labels", num_labels_text);
  std::vector<std::string> warnings;
  const LabelMatrix labels = build_labels(patient_labels, result.corpus.patient_ids, num_labels, &warnings);
  for (const auto& w : warnings) ctx.err << "warning: " << w << '\n';

  const SplitResult parts = split(result.corpus, labels, config.get_double("preprocess.train_fraction"),
                                  derive_seed(ctx.seed, "split"));
  save_corpus(parts.train_corpus, ctx.output.path("train_corpus.json"));
  ctx.output.record("train_corpus.json");
  save_labels(parts.train_labels, parts.train_corpus.patient_ids, ctx.output.path("train_labels.json"));
  ctx.output.record("train_labels.json");
  save_corpus(parts.test_corpus, ctx.output.path("test_corpus.json"));
  ctx.output.record("test_corpus.json");
  save_labels(parts.test_labels, parts.test_corpus.patient_ids, ctx.output.path("test_labels.json"));
  ctx.output.record("test_labels.json");
  ctx.out << "preprocessed " << result.corpus.num_patients() << " patients ("
          << parts.train_corpus.num_patients() << " train, " << parts.test_corpus.num_patients()
          << " test), " << labels.num_labels() << " labels\n";
}

void cmd_train(Context& ctx) {
  const auto& config = ctx.config;
  const Corpus corpus = load_corpus(config.get("data.train_corpus"));
  const LabelMatrix all_labels = load_labels(config.get("data.train_labels"));
  if (all_labels.num_patients() != corpus.num_patients()) {
    throw DataError("training labels have " + std::to_string(all_labels.num_patients()) +
                    " rows for " + std::to_string(corpus.num_patients()) + " patients");
  }
  const Hyperparameters base = hyper_from(config, corpus.num_sources());

  for (const Variant& variant : variants_from(config, base)) {
    Hyperparameters hyper = base;
    hyper.num_labeled = variant.num_labeled;
    const LabelMatrix labels = first_labels(all_labels, variant.num_labeled);
    TrainOptions options;
    options.missing_label_mode = variant.missing;
    options.b_mode = variant.b_mode;
    options.theta_prior = variant.prior;
    options.seed = derive_seed(ctx.seed, "train");
    options.threads = ctx.threads;
    const TrainTrace trace = train(corpus, labels, hyper, options);

    const std::string dir = variant.id + "/";
    ctx.output.write(dir + "likelihood.csv", likelihood_csv(trace));
    save_state(trace.best_state, ctx.output.path(dir + "best_state.json"));
    ctx.output.record(dir + "best_state.json");
    save_state(trace.final_state, ctx.output.path(dir + "final_state.json"));
    ctx.output.record(dir + "final_state.json");
    json model;
    model["format"] = kModelFormat;
    model["model_id"] = variant.id;
    model["hyperparameters"] = hyper_to_json(hyper);
    model["prior"] = {{"kind", variant.prior.kind == PriorKind::Symmetric ? "symmetric" : "activation_gated"},
                      {"concentration", variant.prior.concentration}};
    model["missing_label_mode"] = mode_name(variant.missing);
    model["b_mode"] = mode_name(variant.b_mode);
    model["label_names"] = labels.label_names;
    model["max_log_likelihood"] = trace.best_log_likelihood;
    model["best_iteration"] = trace.best_iteration;
    model["state"] = "best_state.json";
    ctx.output.write(dir + "model.json", model.dump(2) + "\n");
    ctx.out << variant.id << ": max log-likelihood " << format_double(trace.best_log_likelihood)
            << " at iteration " << trace.best_iteration << '\n';
  }
}

void cmd_evaluate(Context& ctx) {
  const auto& config = ctx.config;
  const auto num_labeled = static_cast<std::size_t>(config.get_int("model.num_labeled"));
  const Corpus train_corpus = load_corpus(config.get("data.train_corpus"));
  const Corpus test_corpus = load_corpus(config.get("data.test_corpus"));
  const LabelMatrix train_labels = first_labels(load_labels(config.get("data.train_labels")), num_labeled);
  const LabelMatrix test_labels = first_labels(load_labels(config.get("data.test_labels")), num_labeled);
  if (train_labels.num_patients() != train_corpus.num_patients() ||
      test_labels.num_patients() != test_corpus.num_patients()) {
    throw DataError("label files do not match their corpora");
  }

  SuiteInputs inputs;
  inputs.train_corpus = &train_corpus;
  inputs.train_labels = &train_labels;
  inputs.test_corpus = &test_corpus;
  inputs.test_labels = &test_labels;
  const fs::path models_dir = config.get("data.models");
  for (const char* id : {kModelSmplASmplB, kModelSmplAFixB, kModelFixASmplB, kModelFixAFixB, kModelMc3mSp,
                         kModelMc3m}) {
    if (fs::exists(models_dir / id / "model.json")) inputs.models.emplace(id, load_model(models_dir / id));
  }

  SuiteConfig suite;
  suite.heldout.burn_in = static_cast<int>(config.get_int("evaluate.burn_in"));
  suite.heldout.samples = static_cast<int>(config.get_int("evaluate.samples"));
  if (suite.heldout.burn_in < 0 || suite.heldout.samples < 1) {
    throw ConfigError("evaluate.burn_in must be >= 0 and evaluate.samples >= 1");
  }
  suite.heldout.seed = derive_seed(ctx.seed, "evaluate");
  suite.heldout.threads = ctx.threads;
  suite.logistic.l2 = config.get_double("evaluate.lr_l2");
  suite.logistic.epochs = static_cast<int>(config.get_int("evaluate.lr_epochs"));
  suite.logistic.learning_rate = config.get_double("evaluate.lr_learning_rate");
  suite.shuffle_test_labels = config.get_bool("evaluate.shuffle_labels");
  suite.seed = derive_seed(ctx.seed, "evaluate-control");

  const SuiteResult result = evaluate_suite(inputs, suite);
  for (const auto& w : result.warnings) ctx.err << "warning: " << w << '\n';
  ctx.output.write("metrics.csv", result.csv);
  ctx.output.write("metrics.txt", result.table);
  for (const auto& [id, scores] : result.scores) {
    ctx.output.write("scores/" + id + ".csv",
                     render_scores_csv(scores, test_corpus.patient_ids, test_labels.label_names));
  }
  ctx.out << result.table;
}

void cmd_summarize(Context& ctx) {
  const auto& config = ctx.config;
  const ModelState state = load_state(config.get("data.state"));
  const Corpus corpus = load_corpus(config.get("data.train_corpus"));
  const auto k = parse_number<std::size_t>("summarize.k", config.get("summarize.k"));
  std::vector<std::string> label_names;
  if (config.has("data.train_labels") && !config.get("data.train_labels").empty()) {
    const auto num_labeled = std::min<std::size_t>(
        static_cast<std::size_t>(config.get_int("model.num_labeled")), state.num_phenotypes());
    label_names = first_labels(load_labels(config.get("data.train_labels")), num_labeled).label_names;
  }
  if (state.phi.size() != corpus.num_sources()) throw DataError("state and corpus disagree on sources");
  for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
    if (state.phi[s].cols() != corpus.vocab_size(s)) {
      throw DataError("state and corpus disagree on the vocabulary of source '" + corpus.source_names[s] + "'");
    }
  }

  std::ostringstream text;
  json phenotypes = json::array();
  std::size_t previous = static_cast<std::size_t>(-1);
  for (const auto& entry : phenotype_summary(state, corpus, k)) {
    const bool labeled = entry.phenotype < label_names.size();
    if (entry.phenotype != previous) {
      text << "phenotype " << entry.phenotype;
      if (labeled) text << " [" << label_names[entry.phenotype] << ']';
      text << '\n';
      previous = entry.phenotype;
    }
    text << "  " << corpus.source_names[entry.source] << ':';
    json tokens = json::array();
    for (const auto& t : entry.tokens) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4f", t.probability);
      text << ' ' << t.token << " (" << buf << ')';
      tokens.push_back({{"token", t.token}, {"probability", t.probability}});
    }
    text << '\n';
    phenotypes.push_back({{"phenotype", entry.phenotype},
                          {"label", labeled ? json(label_names[entry.phenotype]) : json(nullptr)},
                          {"source", corpus.source_names[entry.source]},
                          {"tokens", std::move(tokens)}});
  }
  json doc{{"format", kSummaryFormat}, {"k", k}, {"phenotypes", std::move(phenotypes)}};
  ctx.output.write("summary.txt", text.str());
  ctx.output.write("summary.json", doc.dump(2) + "\n");
  ctx.out << text.str();
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys)
    if (k.default_value) values_[k.name] = k.default_value;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  // Nothing is applied unless the whole text parses.
  std::map<std::string, std::string> parsed;
  std::istringstream in(text);
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + ": key '" + key + "' given twice");
    if (!find_key(key)) throw ConfigError(where + ": unknown config key '" + key + "'");
    parsed[key] = trim(line.substr(eq + 1));
  }
  for (auto& [key, value] : parsed) values_[key] = std::move(value);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return values_.contains(key); }

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config key '" + key + "' is required for this command");
  return it->second;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  return parse_number<std::int64_t>(key, get(key));
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::istringstream in(get(key));
  for (std::string item; std::getline(in, item, ',');) {
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  }
  return out;
}

std::string RunConfig::render() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << '\n';
  return out.str();
}

const std::vector<ConfigKey>& config_keys() { return kKeys; }

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised mixed membership models for multi-source count data"};
  app.fallthrough();
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  bool force = false;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_flag("--force", force, "write into a non-empty output directory");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  for (const auto& k : kKeys) {
    std::string names = std::string("--") + k.name;
    if (std::string(k.name) == "run.seed") names = "--seed," + names;
    if (std::string(k.name) == "run.threads") names = "--threads," + names;
    flag_options[k.name] = app.add_option(names, flag_values[k.name], k.help)->group("Config keys");
  }

  using Command = void (*)(Context&);
  const std::vector<std::tuple<const char*, const char*, Command>> commands = {
      {"generate", "simulate a synthetic corpus with labels and ground truth", &cmd_generate},
      {"preprocess", "filter JSON-lines records and split them into train and test", &cmd_preprocess},
      {"train", "fit models by Gibbs sampling", &cmd_train},
      {"evaluate", "held-out label prediction and baselines", &cmd_evaluate},
      {"summarize", "top tokens of every phenotype", &cmd_summarize},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 1;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) config.load_text(read_file(config_path), config_path);
    for (const auto& [key, opt] : flag_options)
      if (opt->count() > 0) config.set(key, flag_values[key]);
    const auto seed = config.get_uint("run.seed");
    const auto threads = config.get_int("run.threads");
    if (threads < 1) throw ConfigError("run.threads must be at least 1");

    const std::string command = app.get_subcommands().front()->get_name();
    Output output(out_dir, force);
    Context ctx{config, output, out, err, seed, static_cast<unsigned>(threads)};
    for (const auto& [name, help, fn] : commands)
      if (command == name) fn(ctx);
    output.finish(command, config);
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("ss3m");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace ss3m
