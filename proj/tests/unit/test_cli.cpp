#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ss3m/cli.hpp"
#include "ss3m/data_io.hpp"
#include "ss3m/errors.hpp"
#include "ss3m/model.hpp"

using namespace ss3m;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kToyConfig = fs::path(SS3M_SOURCE_DIR) / "configs" / "toy.conf";
const fs::path kDefaultsConfig = fs::path(SS3M_SOURCE_DIR) / "configs" / "icd9_defaults.conf";

struct Workspace {
  fs::path root;
  explicit Workspace(const std::string& name) : root(fs::temp_directory_path() / ("ss3m_cli_" + name)) {
    fs::remove_all(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

Run toy(std::vector<std::string> args) {
  args.insert(args.begin() + 1, {"--config", kToyConfig.string()});
  return cli(std::move(args));
}

// metric rows of a metrics.csv keyed by "model,metric,averaging".
std::map<std::string, std::string> metric_rows(const std::string& csv) {
  std::map<std::string, std::string> rows;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    rows[line.substr(0, cut)] = line.substr(cut + 1);
  }
  return rows;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config parsing") {
  RunConfig c;
  c.load_text("# comment\nmodel.alpha = 0.2  # trailing\n\ntrain.variant=all\n");
  CHECK(c.get_double("model.alpha") == 0.2);
  CHECK(c.get("train.variant") == "all");
  CHECK(c.get_int("model.num_phenotypes") == 70);
  CHECK_THROWS_AS(c.load_text("model.nonsense = 1\n"), ConfigError);
  CHECK_THROWS_AS(c.load_text("model.alpha = 1\nmodel.alpha = 2\n"), ConfigError);
  CHECK_THROWS_AS(c.load_text("no equals sign\n"), ConfigError);
  CHECK_THROWS_AS(c.get("preprocess.min_count"), ConfigError);
  c.set("run.seed", "abc");
  CHECK_THROWS_AS(c.get_uint("run.seed"), ConfigError);
  CHECK(c.render().find("model.alpha = 0.2\n") != std::string::npos);
}

TEST_CASE("shipped ICD9 experiment defaults") {
  RunConfig c;
  c.load_text(read_file(kDefaultsConfig));
  CHECK(c.get_int("model.num_phenotypes") == 70);
  CHECK(c.get_int("model.num_labeled") == 50);
  CHECK(c.get_double("model.alpha") == 0.1);
  CHECK(c.get_double("model.gamma") == 0.01);
  CHECK(c.get_int("hmc.path_length") == 25);
  CHECK(c.get_double("hmc.step_size") == 0.01);
  CHECK(c.get_int("train.iterations") == 200);
  CHECK(c.get_double("model.b_shape") == 10.0);
  CHECK(c.get_double("model.b_scale") == 1.0);
  CHECK(c.get_double("model.bstar_shape") == 0.01);
  CHECK(c.get_double("model.bstar_scale") == 1.0);
}

TEST_CASE("usage errors exit with code 1") {
  Workspace ws("usage");
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({"generate"}).code == 1);
  CHECK(cli({"bogus", "--out", ws / "x"}).code == 1);
  CHECK(cli({"generate", "--out", ws / "x", "--model.unknown", "1"}).code == 1);
  std::ofstream(ws.root.string() + ".conf") << "model.unknown = 1\n";
  CHECK(cli({"generate", "--config", ws.root.string() + ".conf", "--out", ws / "y"}).code == 1);
  fs::remove(ws.root.string() + ".conf");
  // Preprocessing thresholds have no defaults.
  const auto r = cli({"preprocess", "--out", ws / "z", "--preprocess.input", "whatever.jsonl"});
  CHECK(r.code == 1);
  CHECK(r.err.find("preprocess.min_count") != std::string::npos);
}

TEST_CASE("missing input data exits with code 2") {
  Workspace ws("missing");
  const auto r = cli({"train", "--out", ws / "t", "--data.train_corpus", ws / "none.json",
                      "--data.train_labels", ws / "none.json", "--model.num_phenotypes", "3",
                      "--model.num_labeled", "1"});
  CHECK(r.code == 2);
}

TEST_CASE("output directory refusal and force") {
  Workspace ws("force");
  REQUIRE(toy({"generate", "--out", ws / "g", "--generate.num_patients", "20"}).code == 0);
  const auto again = toy({"generate", "--out", ws / "g", "--generate.num_patients", "20"});
  CHECK(again.code == 1);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(toy({"generate", "--out", ws / "g", "--generate.num_patients", "20", "--force"}).code == 0);
}

TEST_CASE("same seed gives the same manifest") {
  Workspace ws("manifest");
  REQUIRE(toy({"generate", "--out", ws / "a", "--seed", "5"}).code == 0);
  REQUIRE(toy({"generate", "--out", ws / "b", "--seed", "5"}).code == 0);
  REQUIRE(toy({"generate", "--out", ws / "c", "--seed", "6"}).code == 0);
  const auto a = read_file(ws / "a/manifest.json");
  CHECK(a == read_file(ws / "b/manifest.json"));
  CHECK(a != read_file(ws / "c/manifest.json"));
  const auto doc = json::parse(a);
  CHECK(doc["command"] == "generate");
  CHECK(doc["seed"] == 5);
  CHECK(doc["files"].contains("corpus.jsonl"));
  // The resolved config is enough to repeat the run.
  REQUIRE(cli({"generate", "--config", ws / "a/config.resolved", "--out", ws / "d"}).code == 0);
  CHECK(read_file(ws / "d/corpus.json") == read_file(ws / "a/corpus.json"));
}

TEST_CASE("toy pipeline end to end") {
  Workspace ws("pipeline");
  REQUIRE(toy({"generate", "--out", ws / "gen"}).code == 0);
  const auto raw = load_raw(ws / "gen/corpus.jsonl");
  CHECK(raw.unknown_fields == 0);
  CHECK_FALSE(raw.records.empty());

  const auto pre = toy({"preprocess", "--out", ws / "pre", "--preprocess.input", ws / "gen/corpus.jsonl"});
  REQUIRE_MESSAGE(pre.code == 0, pre.err);
  const auto train_corpus = load_corpus(ws / "pre/train_corpus.json");
  const auto test_corpus = load_corpus(ws / "pre/test_corpus.json");
  CHECK(train_corpus.num_patients() == 160);
  CHECK(test_corpus.num_patients() == 40);
  CHECK(load_labels(ws / "pre/train_labels.json").num_labels() == 3);

  const auto start = std::chrono::steady_clock::now();
  const auto tr = toy({"train", "--out", ws / "models", "--train.variant", "all", "--train.iterations", "1",
                       "--data.train_corpus", ws / "pre/train_corpus.json", "--data.train_labels",
                       ws / "pre/train_labels.json"});
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  REQUIRE_MESSAGE(tr.code == 0, tr.err);
  CHECK(seconds < 10.0);
  for (const char* id : {"ss3m_smplA0_smplB", "ss3m_smplA0_fixB", "ss3m_fixA0_smplB", "ss3m_fixA0_fixB",
                         "mc3m-sp", "mc3m"}) {
    const auto model = json::parse(read_file(ws / (std::string("models/") + id + "/model.json")));
    CHECK(model["format"] == "ss3m-model-v1");
    const auto csv = read_file(ws / (std::string("models/") + id + "/likelihood.csv"));
    CHECK(csv.rfind("iteration,log_likelihood,hmc_accept_rate\n", 0) == 0);
  }

  const auto ev = toy({"evaluate", "--out", ws / "eval", "--data.train_corpus", ws / "pre/train_corpus.json",
                       "--data.train_labels", ws / "pre/train_labels.json", "--data.test_corpus",
                       ws / "pre/test_corpus.json", "--data.test_labels", ws / "pre/test_labels.json",
                       "--data.models", ws / "models"});
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const auto rows = metric_rows(read_file(ws / "eval/metrics.csv"));
  std::set<std::string> models;
  for (const auto& [key, value] : rows) models.insert(key.substr(0, key.find(',')));
  CHECK(models.size() == 10);
  CHECK(rows.count("raw_lr,log_likelihood,max") == 0);
  CHECK(rows.count("mc3m_lr,log_likelihood,max") == 1);
  CHECK(fs::exists(ws / "eval/metrics.txt"));
  CHECK(fs::exists(ws / "eval/scores/ss3m_fixA0_fixB.csv"));

  const auto sm = toy({"summarize", "--out", ws / "sum", "--data.state", ws / "models/ss3m_fixA0_fixB/best_state.json",
                       "--data.train_corpus", ws / "pre/train_corpus.json", "--data.train_labels",
                       ws / "pre/train_labels.json"});
  REQUIRE_MESSAGE(sm.code == 0, sm.err);
  const auto summary = json::parse(read_file(ws / "sum/summary.json"));
  CHECK(summary["format"] == "ss3m-summary-v1");
  CHECK(summary["k"] == 10);
  REQUIRE(summary["phenotypes"].size() == 10);
  for (const auto& entry : summary["phenotypes"]) {
    REQUIRE(entry["tokens"].size() == 10);
    CHECK(entry["phenotype"].is_number_unsigned());
    CHECK(entry["source"].is_string());
    CHECK((entry["label"].is_string() || entry["label"].is_null()));
    double last = 2.0;
    for (const auto& t : entry["tokens"]) {
      CHECK(t["token"].is_string());
      CHECK(t["probability"].get<double>() <= last);
      last = t["probability"].get<double>();
    }
  }
  CHECK(summary["phenotypes"][0]["label"].is_string());
  CHECK(summary["phenotypes"][9]["label"].is_null());
}

TEST_CASE("missing baselines and the shuffled control") {
  Workspace ws("control");
  REQUIRE(toy({"generate", "--out", ws / "gen", "--generate.num_patients", "600"}).code == 0);
  REQUIRE(toy({"preprocess", "--out", ws / "pre", "--preprocess.input", ws / "gen/corpus.jsonl"}).code == 0);
  REQUIRE(toy({"train", "--out", ws / "models", "--data.train_corpus", ws / "pre/train_corpus.json",
               "--data.train_labels", ws / "pre/train_labels.json"}).code == 0);
  auto evaluate = [&](const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> args{"evaluate", "--out", ws / out, "--data.train_corpus", ws / "pre/train_corpus.json",
                                  "--data.train_labels", ws / "pre/train_labels.json", "--data.test_corpus",
                                  ws / "pre/test_corpus.json", "--data.test_labels", ws / "pre/test_labels.json",
                                  "--data.models", ws / "models"};
    args.insert(args.end(), extra.begin(), extra.end());
    return toy(args);
  };
  const auto plain = evaluate("eval", {});
  REQUIRE(plain.code == 0);
  CHECK(plain.err.find("mc3m") != std::string::npos);
  const auto table = read_file(ws / "eval/metrics.txt");
  CHECK(table.find("missing") != std::string::npos);
  const auto rows = metric_rows(read_file(ws / "eval/metrics.csv"));
  CHECK(rows.at("mc3m_lr,auroc,macro") == "NA");

  const auto shuffled = evaluate("shuffled", {"--evaluate.shuffle_labels", "true"});
  REQUIRE(shuffled.code == 0);
  const auto shuffled_rows = metric_rows(read_file(ws / "shuffled/metrics.csv"));
  const double control = std::stod(shuffled_rows.at("ss3m_fixA0_fixB,auroc,macro"));
  MESSAGE("shuffled macro AUROC " << control << ", unshuffled " << rows.at("ss3m_fixA0_fixB,auroc,macro"));
  CHECK(control >= 0.4);
  CHECK(control <= 0.6);
}

TEST_CASE("training is byte reproducible") {
  Workspace ws("repro");
  REQUIRE(toy({"generate", "--out", ws / "gen", "--generate.num_patients", "60"}).code == 0);
  for (const char* dir : {"a", "b"}) {
    REQUIRE(toy({"train", "--out", ws / dir, "--train.iterations", "5", "--train.b_mode", "sampled",
                 "--data.train_corpus", ws / "gen/corpus.json", "--data.train_labels", ws / "gen/labels.json"})
                .code == 0);
  }
  CHECK(read_file(ws / "a/ss3m_fixA0_smplB/likelihood.csv") == read_file(ws / "b/ss3m_fixA0_smplB/likelihood.csv"));
  CHECK(read_file(ws / "a/manifest.json") == read_file(ws / "b/manifest.json"));
}

TEST_CASE("summaries of labelled phenotypes overlap the truth") {
  // With gamma = 0.01 a true phi row has only a handful of tokens with any
  // mass and the rest of its top ten is an arbitrary pick among ~0 values,
  // so this run uses a denser gamma.
  Workspace ws("jaccard");
  REQUIRE(toy({"generate", "--out", ws / "gen", "--model.gamma", "0.5"}).code == 0);
  REQUIRE(toy({"train", "--out", ws / "models", "--model.gamma", "0.5", "--data.train_corpus",
               ws / "gen/corpus.json", "--data.train_labels", ws / "gen/labels.json"}).code == 0);
  REQUIRE(toy({"summarize", "--out", ws / "sum", "--data.state", ws / "models/ss3m_fixA0_fixB/best_state.json",
               "--data.train_corpus", ws / "gen/corpus.json"}).code == 0);
  const auto truth = load_state(ws / "gen/truth_state.json");
  const auto corpus = load_corpus(ws / "gen/corpus.json");
  const auto truth_top = phenotype_summary(truth, corpus, 10);
  const auto summary = json::parse(read_file(ws / "sum/summary.json"));
  // Labelled phenotypes are matched by index; the labels pin them.
  double total = 0.0;
  int pairs = 0;
  for (const auto& entry : summary["phenotypes"]) {
    const auto p = entry["phenotype"].get<std::size_t>();
    if (p >= 3) continue;
    const auto s = entry["source"].get<std::string>() == corpus.source_names[0] ? 0u : 1u;
    std::set<std::string> learned, expected;
    for (const auto& t : entry["tokens"]) learned.insert(t["token"].get<std::string>());
    for (const auto& t : truth_top[p * 2 + s].tokens) expected.insert(t.token);
    std::size_t common = 0;
    for (const auto& t : learned) common += expected.count(t);
    total += static_cast<double>(common) / static_cast<double>(learned.size() + expected.size() - common);
    ++pairs;
  }
  REQUIRE(pairs == 6);
  MESSAGE("mean Jaccard@10 " << total / pairs);
  CHECK(total / pairs > 0.5);
}

}
