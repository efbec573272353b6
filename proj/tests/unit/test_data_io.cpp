#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "fixtures.hpp"
#include "ss3m/data_io.hpp"
#include "ss3m/errors.hpp"
#include "ss3m/gibbs.hpp"

using namespace ss3m;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("ss3m_unit_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

RawLoadResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_raw(in);
}

std::vector<RawRecord> toy_records() {
  return {
      {"p1", "notes", {"fever", "cough", "the", "rare"}, {"486"}},
      {"p2", "notes", {"fever", "the", "cough"}, {"486", "401"}},
      {"p3", "notes", {"the", "pain", "pain"}, {}},
      {"p1", "labs", {"hb", "na"}, {}},
      {"p3", "labs", {"na"}, {"401"}},
  };
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("parse raw records") {
  CHECK(parse("").records.empty());
  const auto one =
      parse(R"({"patient_id":"p1","source":"notes","tokens":["fever","cough"],"labels":["486"]})" "\n");
  REQUIRE(one.records.size() == 1);
  CHECK(one.records[0] == RawRecord{"p1", "notes", {"fever", "cough"}, {"486"}});
  const auto extra = parse(R"({"patient_id":"p1","source":"s","tokens":[],"note":1})" "\n\n");
  CHECK(extra.unknown_fields == 1);
  CHECK(extra.records[0].labels.empty());
}

TEST_CASE("malformed lines name their line number") {
  const std::string bad = R"({"patient_id":"p1","source":"s","tokens":[]})" "\n" "{oops\n";
  try {
    parse(bad);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse(R"({"patient_id":"","source":"s","tokens":[]})"), DataError);
  CHECK_THROWS_AS(parse(R"({"patient_id":"p","source":"s","tokens":[1]})"), DataError);
}

TEST_CASE("repeated patient source lines concatenate in file order") {
  const std::vector<RawRecord> records{{"p1", "s", {"a", "b"}, {}}, {"p1", "s", {"c", "a"}, {}}};
  const auto corpus = preprocess(records, PreprocessConfig{}).corpus;
  REQUIRE(corpus.num_patients() == 1);
  std::vector<std::string> words;
  for (auto id : corpus.tokens[0][0]) words.push_back((*corpus.vocab)[0].token(id));
  CHECK(words == std::vector<std::string>{"a", "b", "c", "a"});
  const auto back = corpus_to_records(corpus);
  REQUIRE(back.size() == 1);
  CHECK(back[0].tokens == std::vector<std::string>{"a", "b", "c", "a"});
}

TEST_CASE("identity preprocessing keeps every token") {
  const auto r = preprocess(toy_records(), PreprocessConfig{});
  CHECK(r.dropped_patients == 0);
  CHECK(r.corpus.source_names == std::vector<std::string>{"labs", "notes"});
  CHECK(r.corpus.patient_ids == std::vector<std::string>{"p1", "p2", "p3"});
  CHECK(r.corpus.num_tokens() == 13);
  CHECK((*r.corpus.vocab)[1].tokens() == std::vector<std::string>{"cough", "fever", "pain", "rare", "the"});
}

TEST_CASE("document frequency filter removes ubiquitous tokens") {
  PreprocessConfig cfg;
  cfg.max_doc_fraction = 0.5;
  const auto r = preprocess(toy_records(), cfg);
  CHECK_FALSE((*r.corpus.vocab)[1].find("the").has_value());
  for (const auto& patient : r.corpus.tokens) {
    for (auto id : patient[1]) CHECK((*r.corpus.vocab)[1].token(id) != "the");
  }
}

TEST_CASE("count filter and stopwords match a hand enumeration") {
  PreprocessConfig cfg;
  cfg.min_count = 2;
  cfg.stopwords = {"the"};
  const auto r = preprocess(toy_records(), cfg);
  // labs: hb 1, na 2; notes: cough 2, fever 2, pain 2, rare 1.
  CHECK((*r.corpus.vocab)[0].tokens() == std::vector<std::string>{"na"});
  CHECK((*r.corpus.vocab)[1].tokens() == std::vector<std::string>{"cough", "fever", "pain"});
}

TEST_CASE("patients left empty are dropped") {
  PreprocessConfig cfg;
  cfg.stopwords = {"the", "pain", "na"};
  const auto r = preprocess(toy_records(), cfg);
  CHECK(r.dropped_patients == 1);
  CHECK(r.corpus.patient_ids == std::vector<std::string>{"p1", "p2"});
}

TEST_CASE("preprocessing is idempotent and order independent") {
  PreprocessConfig cfg;
  cfg.min_count = 2;
  cfg.max_doc_fraction = 0.9;
  const auto once = preprocess(toy_records(), cfg).corpus;
  const auto twice = preprocess(corpus_to_records(once), PreprocessConfig{}).corpus;
  CHECK(once == twice);
  auto shuffled = toy_records();
  std::reverse(shuffled.begin(), shuffled.end());
  // Reversal keeps the relative order of lines for any (patient, source).
  CHECK(preprocess(shuffled, cfg).corpus == once);
}

TEST_CASE("preprocess config validation") {
  PreprocessConfig cfg;
  cfg.max_doc_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.max_doc_fraction = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  PreprocessConfig declared;
  declared.sources = {"notes"};
  CHECK_THROWS_AS(preprocess(toy_records(), declared), DataError);
}

TEST_CASE("label matrix construction") {
  PatientLabels labels;
  // Frequencies: e 3, a 2, b 2, d 2, c 1. With top 3 the tie between a, b and
  // d at rank 2 keeps a and b.
  labels["p1"] = {{"e", LabelPolarity::Present}, {"a", LabelPolarity::Present}, {"d", LabelPolarity::Present}};
  labels["p2"] = {{"e", LabelPolarity::Present}, {"b", LabelPolarity::Present}, {"d", LabelPolarity::Present}};
  labels["p3"] = {{"e", LabelPolarity::Present}, {"a", LabelPolarity::Present}, {"b", LabelPolarity::Present},
                  {"c", LabelPolarity::Present}};
  labels["p4"] = {{"a", LabelPolarity::Absent}};
  const std::vector<std::string> ids{"p1", "p2", "p3", "p4", "p5"};
  const auto m = build_labels(labels, ids, 3);
  CHECK(m.label_names == std::vector<std::string>{"e", "a", "b"});
  CHECK(m.entries(0, 1) == LabelState::Present);
  CHECK(m.entries(1, 1) == LabelState::Unknown);
  CHECK(m.entries(3, 1) == LabelState::Absent);
  for (std::size_t j = 0; j < 3; ++j) CHECK(m.entries(4, j) == LabelState::Unknown);
  std::vector<std::string> warnings;
  CHECK(build_labels(labels, ids, 50, &warnings).num_labels() == 5);
  CHECK(warnings.size() == 1);
}

TEST_CASE("top fifty of eighty labels") {
  PatientLabels labels;
  for (int d = 0; d < 300; ++d) {
    for (int j = 0; j < 80; ++j) {
      if ((d * 7 + j * 3) % (j % 11 + 2) == 0) labels["p" + std::to_string(d)]["L" + std::to_string(j)] = LabelPolarity::Present;
    }
  }
  std::vector<std::string> ids;
  for (int d = 0; d < 300; ++d) ids.push_back("p" + std::to_string(d));
  CHECK(build_labels(labels, ids, 50).num_labels() == 50);
}

TEST_CASE("label csv with states") {
  TempDir dir;
  std::ofstream(dir.path / "l.csv") << "patient_id,label,state\np1,486,present\np2,486,absent\n";
  std::ofstream(dir.path / "two.csv") << "patient_id,label\np3,401\n";
  const auto labels = load_label_csv(dir.path / "l.csv");
  CHECK(labels.at("p1").at("486") == LabelPolarity::Present);
  CHECK(labels.at("p2").at("486") == LabelPolarity::Absent);
  CHECK(load_label_csv(dir.path / "two.csv").at("p3").at("401") == LabelPolarity::Present);
  std::ofstream(dir.path / "bad.csv") << "patient_id,label\np1,486,maybe\n";
  CHECK_THROWS_AS(load_label_csv(dir.path / "bad.csv"), DataError);
}

TEST_CASE("patient split") {
  const auto h = fixture::small_hyper(3, 2, 1);
  const auto g = generate(h, std::vector<std::size_t>{10}, DocLengthSpec{FixedLength{3}}, 10, 1);
  const auto labels = labels_from_activations(g.truth, 2);
  for (std::uint64_t seed : {0, 1, 99}) {
    const auto r = split(g.corpus, labels, 0.8, seed);
    CHECK(r.split.train.size() == 8);
    CHECK(r.split.test.size() == 2);
    std::set<std::size_t> all(r.split.train.begin(), r.split.train.end());
    all.insert(r.split.test.begin(), r.split.test.end());
    CHECK(all.size() == 10);
    CHECK(r.train_corpus.vocab == r.test_corpus.vocab);
    CHECK(r.test_labels.num_patients() == 2);
    CHECK(split(g.corpus, labels, 0.8, seed).split.test == r.split.test);
  }
  CHECK_THROWS_AS(split(g.corpus, labels, 1.0, 0), ConfigError);
}

TEST_CASE("artifact round trips") {
  TempDir dir;
  const auto h = fixture::small_hyper(4, 2, 2);
  const auto g = generate(h, std::vector<std::size_t>{12, 7},
                          DocLengthSpec{PoissonLength{9.0}, PoissonLength{4.0}}, 15, 3);
  auto labels = labels_from_activations(g.truth, 2);
  labels.entries(0, 0) = LabelState::Absent;

  save_state(g.truth, dir.path / "state.json");
  CHECK(load_state(dir.path / "state.json") == g.truth);
  save_corpus(g.corpus, dir.path / "corpus.json");
  const auto corpus = load_corpus(dir.path / "corpus.json");
  CHECK(corpus == g.corpus);
  save_labels(labels, g.corpus.patient_ids, dir.path / "labels.json");
  CHECK(load_labels(dir.path / "labels.json") == labels);

  // A trained state keeps tiny and subnormal values exactly.
  auto hh = h;
  hh.iterations = 2;
  const auto trace = train(g.corpus, labels, hh, TrainOptions{});
  save_state(trace.final_state, dir.path / "trained.json");
  CHECK(load_state(dir.path / "trained.json") == trace.final_state);

  save_raw(corpus_to_records(g.corpus, &labels), dir.path / "raw.jsonl");
  const auto raw = load_raw(dir.path / "raw.jsonl").records;
  const auto back = preprocess(raw, PreprocessConfig{}).corpus;
  CHECK(back.num_tokens() == g.corpus.num_tokens());
}

TEST_CASE("corrupted and foreign files") {
  TempDir dir;
  write_file_atomic(dir.path / "junk.json", "\x7f" "ELF garbage");
  CHECK_THROWS_AS(load_state(dir.path / "junk.json"), DataError);
  write_file_atomic(dir.path / "corpus.json", R"({"format":"ss3m-corpus-v1"})");
  CHECK_THROWS_AS(load_state(dir.path / "corpus.json"), DataError);
  write_file_atomic(dir.path / "future.json", R"({"format":"ss3m-state-v9"})");
  try {
    load_state(dir.path / "future.json");
    FAIL("expected a VersionError");
  } catch (const VersionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("ss3m-state-v9") != std::string::npos);
    CHECK(msg.find("ss3m-state-v1") != std::string::npos);
  }
  CHECK_THROWS_AS(load_state(dir.path / "missing.json"), DataError);
}

}
