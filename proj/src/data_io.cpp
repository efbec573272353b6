#include "ss3m/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "ss3m/errors.hpp"
#include "ss3m/random.hpp"

namespace ss3m {

using nlohmann::json;

namespace {

const std::set<std::string> kRecordFields = {"patient_id", "source", "tokens", "labels"};

std::vector<std::string> string_array(const json& value, const char* field, std::size_t line) {
  if (!value.is_array()) {
    throw DataError("line " + std::to_string(line) + ": field '" + field + "' must be an array");
  }
  std::vector<std::string> out;
  out.reserve(value.size());
  for (const auto& item : value) {
    if (!item.is_string()) {
      throw DataError("line " + std::to_string(line) + ": field '" + field +
                      "' must contain only strings");
    }
    out.push_back(item.get<std::string>());
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Parses a JSON document and checks its "format" tag.
json parse_container(const std::filesystem::path& path, const char* expected_format) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception&) {
    throw DataError(path.string() + " is not a " + expected_format + " file (unreadable header)");
  }
  if (!doc.is_object() || !doc.contains("format") || !doc["format"].is_string()) {
    throw DataError(path.string() + " is not a " + expected_format + " file (missing format tag)");
  }
  const auto format = doc["format"].get<std::string>();
  if (format == expected_format) return doc;
  const std::string expected(expected_format);
  const auto stem = expected.substr(0, expected.rfind("-v") + 2);
  if (format.rfind(stem, 0) == 0) {
    throw VersionError(path.string() + " has format version " + format +
                       " but this build reads " + expected);
  }
  throw DataError(path.string() + " is not a " + expected + " file (format tag '" + format + "')");
}

template <typename T>
std::vector<T> flat_array(const json& doc, const char* field, std::size_t expected) {
  auto values = doc.at(field).get<std::vector<T>>();
  if (values.size() != expected) {
    throw DataError(std::string("field '") + field + "' has " + std::to_string(values.size()) +
                    " entries, expected " + std::to_string(expected));
  }
  return values;
}

}  // namespace

void PreprocessConfig::validate() const {
  auto check = [](const SourceFilter& f, const std::string& where) {
    if (!(f.max_doc_fraction > 0.0 && f.max_doc_fraction <= 1.0)) {
      throw ConfigError("max_doc_fraction" + where + " must lie in (0, 1]");
    }
  };
  check({min_count, max_doc_fraction}, "");
  for (const auto& [source, filter] : overrides) check(filter, " for source '" + source + "'");
}

RawLoadResult parse_raw(std::istream& in) {
  RawLoadResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected an object");
    RawRecord rec;
    if (!obj.contains("patient_id") || !obj["patient_id"].is_string() ||
        obj["patient_id"].get<std::string>().empty()) {
      throw DataError("line " + std::to_string(line_no) + ": missing or empty patient_id");
    }
    rec.patient_id = obj["patient_id"].get<std::string>();
    if (!obj.contains("source") || !obj["source"].is_string()) {
      throw DataError("line " + std::to_string(line_no) + ": missing source");
    }
    rec.source = obj["source"].get<std::string>();
    if (!obj.contains("tokens")) throw DataError("line " + std::to_string(line_no) + ": missing tokens");
    rec.tokens = string_array(obj["tokens"], "tokens", line_no);
    if (obj.contains("labels")) rec.labels = string_array(obj["labels"], "labels", line_no);
    for (const auto& item : obj.items()) {
      if (!kRecordFields.contains(item.key())) ++result.unknown_fields;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

RawLoadResult load_raw(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_raw(in);
}

void save_raw(const std::vector<RawRecord>& records, const std::filesystem::path& path) {
  std::string out;
  for (const auto& rec : records) {
    json obj = {{"patient_id", rec.patient_id},
                {"source", rec.source},
                {"tokens", rec.tokens},
                {"labels", rec.labels}};
    out += obj.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

std::vector<RawRecord> corpus_to_records(const Corpus& corpus, const LabelMatrix* labels) {
  std::vector<RawRecord> records;
  for (std::size_t d = 0; d < corpus.num_patients(); ++d) {
    for (std::size_t s = 0; s < corpus.num_sources(); ++s) {
      RawRecord rec{corpus.patient_ids[d], corpus.source_names[s], {}, {}};
      for (TokenId w : corpus.tokens[d][s]) rec.tokens.push_back((*corpus.vocab)[s].token(w));
      if (labels && s == 0) {
        for (std::size_t j = 0; j < labels->num_labels(); ++j) {
          if (labels->entries(d, j) == LabelState::Present) rec.labels.push_back(labels->label_names[j]);
        }
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

PreprocessResult preprocess(const std::vector<RawRecord>& records, const PreprocessConfig& config) {
  config.validate();
  if (records.empty()) throw DataError("no records to preprocess");

  std::vector<std::string> sources = config.sources;
  if (sources.empty()) {
    std::set<std::string> seen;
    for (const auto& rec : records) seen.insert(rec.source);
    sources.assign(seen.begin(), seen.end());
  }
  std::unordered_map<std::string, std::size_t> source_index;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (!source_index.emplace(sources[s], s).second) {
      throw ConfigError("source '" + sources[s] + "' declared twice");
    }
  }
  for (const auto& [name, filter] : config.overrides) {
    if (!source_index.contains(name)) throw ConfigError("override for undeclared source '" + name + "'");
  }

  // patient id -> per-source token strings, concatenated in file order
  std::map<std::string, std::vector<std::vector<std::string>>> merged;
  for (const auto& rec : records) {
    auto it = source_index.find(rec.source);
    if (it == source_index.end()) {
      throw DataError("record for patient '" + rec.patient_id + "' has undeclared source '" +
                      rec.source + "'");
    }
    auto& docs = merged[rec.patient_id];
    docs.resize(sources.size());
    auto& doc = docs[it->second];
    for (const auto& token : rec.tokens) {
      if (!config.stopwords.contains(token)) doc.push_back(token);
    }
  }
  const auto num_patients = static_cast<double>(merged.size());

  auto vocab = std::make_shared<std::vector<Vocabulary>>();
  for (std::size_t s = 0; s < sources.size(); ++s) {
    SourceFilter filter{config.min_count, config.max_doc_fraction};
    if (auto it = config.overrides.find(sources[s]); it != config.overrides.end()) filter = it->second;
    std::map<std::string, std::pair<std::size_t, std::size_t>> stats;  // total, patients
    for (const auto& [id, docs] : merged) {
      std::unordered_set<std::string_view> in_doc;
      for (const auto& token : docs[s]) {
        auto& entry = stats[token];
        ++entry.first;
        if (in_doc.insert(token).second) ++entry.second;
      }
    }
    std::vector<std::string> kept;
    for (const auto& [token, counts] : stats) {
      const double doc_fraction = static_cast<double>(counts.second) / num_patients;
      if (counts.first >= filter.min_count && doc_fraction <= filter.max_doc_fraction) {
        kept.push_back(token);
      }
    }
    if (kept.empty()) {
      throw ConfigError("preprocessing leaves source '" + sources[s] + "' with an empty vocabulary");
    }
    vocab->emplace_back(std::move(kept));
  }

  PreprocessResult result;
  result.corpus.source_names = sources;
  for (const auto& [id, docs] : merged) {
    std::vector<std::vector<TokenId>> indexed(sources.size());
    bool any = false;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      for (const auto& token : docs[s]) {
        if (auto w = (*vocab)[s].find(token)) {
          indexed[s].push_back(*w);
          any = true;
        }
      }
    }
    if (!any) {
      ++result.dropped_patients;
      continue;
    }
    result.corpus.patient_ids.push_back(id);
    result.corpus.tokens.push_back(std::move(indexed));
  }
  result.corpus.vocab = std::move(vocab);
  return result;
}

PatientLabels collect_labels(const std::vector<RawRecord>& records) {
  PatientLabels out;
  for (const auto& rec : records) {
    auto& labels = out[rec.patient_id];
    for (const auto& label : rec.labels) labels[label] = LabelPolarity::Present;
  }
  return out;
}

PatientLabels load_label_csv(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty label file");
  const std::string header = trim(line);
  const bool has_state = header == "patient_id,label,state";
  if (!has_state && header != "patient_id,label") {
    throw DataError(path.string() + ": expected header 'patient_id,label'");
  }
  PatientLabels out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != (has_state ? 3u : 2u) || cells[0].empty() || cells[1].empty()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + " is malformed");
    }
    LabelPolarity polarity = LabelPolarity::Present;
    if (has_state) {
      if (cells[2] == "absent") {
        polarity = LabelPolarity::Absent;
      } else if (cells[2] != "present") {
        throw DataError(path.string() + ": line " + std::to_string(line_no) +
                        ": state must be present or absent");
      }
    }
    out[cells[0]][cells[1]] = polarity;
  }
  return out;
}

void merge_labels(PatientLabels& into, const PatientLabels& from) {
  for (const auto& [patient, labels] : from) {
    auto& target = into[patient];
    for (const auto& [label, polarity] : labels) {
      auto [it, inserted] = target.emplace(label, polarity);
      // A positive observation wins over an explicit negative.
      if (!inserted && polarity == LabelPolarity::Present) it->second = polarity;
    }
  }
}

LabelMatrix build_labels(const PatientLabels& labels, const std::vector<std::string>& patient_ids,
                         std::size_t top_k, std::vector<std::string>* warnings) {
  if (top_k == 0) throw ConfigError("top_k must be positive");
  std::map<std::string, std::size_t> frequency;
  for (const auto& id : patient_ids) {
    auto it = labels.find(id);
    if (it == labels.end()) continue;
    for (const auto& [label, polarity] : it->second) {
      if (polarity == LabelPolarity::Present) ++frequency[label];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(frequency.begin(), frequency.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() < top_k && warnings) {
    warnings->push_back("only " + std::to_string(ranked.size()) + " distinct labels available, " +
                        std::to_string(top_k) + " requested");
  }
  ranked.resize(std::min(ranked.size(), top_k));

  LabelMatrix out;
  for (const auto& [name, count] : ranked) out.label_names.push_back(name);
  out.entries = Matrix<LabelState>(patient_ids.size(), out.label_names.size(), LabelState::Unknown);
  for (std::size_t d = 0; d < patient_ids.size(); ++d) {
    auto it = labels.find(patient_ids[d]);
    if (it == labels.end()) continue;
    for (std::size_t j = 0; j < out.label_names.size(); ++j) {
      auto found = it->second.find(out.label_names[j]);
      if (found == it->second.end()) continue;
      out.entries(d, j) =
          found->second == LabelPolarity::Present ? LabelState::Present : LabelState::Absent;
    }
  }
  return out;
}

LabelMatrix build_labels(const std::vector<RawRecord>& records,
                         const std::vector<std::string>& patient_ids, std::size_t top_k,
                         std::vector<std::string>* warnings) {
  return build_labels(collect_labels(records), patient_ids, top_k, warnings);
}

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& patients) {
  Corpus out;
  out.source_names = corpus.source_names;
  out.vocab = corpus.vocab;
  for (std::size_t d : patients) {
    out.patient_ids.push_back(corpus.patient_ids.at(d));
    out.tokens.push_back(corpus.tokens.at(d));
  }
  return out;
}

LabelMatrix subset(const LabelMatrix& labels, const std::vector<std::size_t>& patients) {
  LabelMatrix out;
  out.label_names = labels.label_names;
  out.entries = Matrix<LabelState>(patients.size(), labels.num_labels());
  for (std::size_t i = 0; i < patients.size(); ++i) {
    for (std::size_t j = 0; j < labels.num_labels(); ++j) out.entries(i, j) = labels.entries(patients[i], j);
  }
  return out;
}

SplitResult split(const Corpus& corpus, const LabelMatrix& labels, double train_fraction,
                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie strictly inside (0, 1)");
  }
  if (labels.num_patients() != corpus.num_patients()) {
    throw DimensionError("labels and corpus disagree on the number of patients");
  }
  const std::size_t num_d = corpus.num_patients();
  const auto num_train =
      static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(num_d)));
  if (num_train == 0 || num_train == num_d) {
    throw DataError("split of " + std::to_string(num_d) + " patients leaves one side empty");
  }
  std::vector<std::size_t> order(num_d);
  for (std::size_t d = 0; d < num_d; ++d) order[d] = d;
  Rng rng(seed);
  for (std::size_t i = num_d; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  SplitResult out;
  out.split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(num_train));
  out.split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(num_train), order.end());
  std::sort(out.split.train.begin(), out.split.train.end());
  std::sort(out.split.test.begin(), out.split.test.end());
  out.train_corpus = subset(corpus, out.split.train);
  out.test_corpus = subset(corpus, out.split.test);
  out.train_labels = subset(labels, out.split.train);
  out.test_labels = subset(labels, out.split.test);
  return out;
}

void save_state(const ModelState& state, const std::filesystem::path& path) {
  json doc;
  doc["format"] = kStateFormat;
  doc["num_patients"] = state.num_patients();
  doc["num_phenotypes"] = state.num_phenotypes();
  doc["theta"] = state.theta.data();
  json phi = json::array();
  for (const auto& m : state.phi) phi.push_back({{"vocab_size", m.cols()}, {"values", m.data()}});
  doc["phi"] = std::move(phi);
  doc["z"] = state.z;
  doc["activations"] = state.activations.data();
  doc["b"] = state.b;
  doc["bstar"] = state.bstar;
  write_file_atomic(path, doc.dump() + "\n");
}

ModelState load_state(const std::filesystem::path& path) {
  const json doc = parse_container(path, kStateFormat);
  try {
    ModelState state;
    const auto num_d = doc.at("num_patients").get<std::size_t>();
    const auto num_p = doc.at("num_phenotypes").get<std::size_t>();
    state.theta = Matrix<double>(num_d, num_p);
    state.theta.data() = flat_array<double>(doc, "theta", num_d * num_p);
    for (const auto& entry : doc.at("phi")) {
      const auto vocab = entry.at("vocab_size").get<std::size_t>();
      Matrix<double> m(num_p, vocab);
      m.data() = flat_array<double>(entry, "values", num_p * vocab);
      state.phi.push_back(std::move(m));
    }
    state.z = doc.at("z").get<std::vector<std::vector<std::vector<Assignment>>>>();
    state.activations = Matrix<std::uint8_t>(num_d, num_p);
    state.activations.data() = flat_array<std::uint8_t>(doc, "activations", num_d * num_p);
    state.b = flat_array<double>(doc, "b", num_p);
    state.bstar = doc.at("bstar").get<double>();
    if (state.z.size() != num_d) throw DataError("z has the wrong number of patients");
    return state;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt state file (" + e.what() + ")");
  }
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  json doc;
  doc["format"] = kCorpusFormat;
  doc["sources"] = corpus.source_names;
  json vocab = json::array();
  for (const auto& v : *corpus.vocab) vocab.push_back(v.tokens());
  doc["vocab"] = std::move(vocab);
  doc["patient_ids"] = corpus.patient_ids;
  doc["tokens"] = corpus.tokens;
  write_file_atomic(path, doc.dump() + "\n");
}

Corpus load_corpus(const std::filesystem::path& path) {
  const json doc = parse_container(path, kCorpusFormat);
  try {
    Corpus corpus;
    corpus.source_names = doc.at("sources").get<std::vector<std::string>>();
    auto vocab = std::make_shared<std::vector<Vocabulary>>();
    for (const auto& v : doc.at("vocab")) vocab->emplace_back(v.get<std::vector<std::string>>());
    corpus.vocab = std::move(vocab);
    corpus.patient_ids = doc.at("patient_ids").get<std::vector<std::string>>();
    corpus.tokens = doc.at("tokens").get<std::vector<std::vector<std::vector<TokenId>>>>();
    corpus.validate();
    return corpus;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt corpus file (" + e.what() + ")");
  }
}

void save_labels(const LabelMatrix& labels, const std::vector<std::string>& patient_ids,
                 const std::filesystem::path& path) {
  if (patient_ids.size() != labels.num_patients()) {
    throw DimensionError("label rows and patient ids disagree");
  }
  json doc;
  doc["format"] = kLabelsFormat;
  doc["label_names"] = labels.label_names;
  doc["patient_ids"] = patient_ids;
  json rows = json::array();
  for (std::size_t d = 0; d < labels.num_patients(); ++d) {
    std::string row;
    for (std::size_t j = 0; j < labels.num_labels(); ++j) {
      switch (labels.entries(d, j)) {
        case LabelState::Present: row += '1'; break;
        case LabelState::Absent: row += '0'; break;
        case LabelState::Unknown: row += '?'; break;
      }
    }
    rows.push_back(std::move(row));
  }
  doc["entries"] = std::move(rows);
  write_file_atomic(path, doc.dump() + "\n");
}

LabelMatrix load_labels(const std::filesystem::path& path) {
  const json doc = parse_container(path, kLabelsFormat);
  try {
    LabelMatrix labels;
    labels.label_names = doc.at("label_names").get<std::vector<std::string>>();
    const auto rows = doc.at("entries").get<std::vector<std::string>>();
    labels.entries = Matrix<LabelState>(rows.size(), labels.label_names.size());
    for (std::size_t d = 0; d < rows.size(); ++d) {
      if (rows[d].size() != labels.label_names.size()) throw DataError("label row has wrong width");
      for (std::size_t j = 0; j < rows[d].size(); ++j) {
        switch (rows[d][j]) {
          case '1': labels.entries(d, j) = LabelState::Present; break;
          case '0': labels.entries(d, j) = LabelState::Absent; break;
          case '?': labels.entries(d, j) = LabelState::Unknown; break;
          default: throw DataError("invalid label cell");
        }
      }
    }
    return labels;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": corrupt label file (" + e.what() + ")");
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw DataError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ss3m
