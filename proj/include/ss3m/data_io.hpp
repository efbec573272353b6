#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ss3m/model.hpp"

namespace ss3m {

// One line of the JSON-lines corpus format:
// {"patient_id": str, "source": str, "tokens": [str], "labels": [str]}
struct RawRecord {
  std::string patient_id;
  std::string source;
  std::vector<std::string> tokens;
  std::vector<std::string> labels;

  bool operator==(const RawRecord&) const = default;
};

struct RawLoadResult {
  std::vector<RawRecord> records;
  // Number of unrecognised fields that were skipped.
  std::size_t unknown_fields = 0;
};

// Records in file order. Throws DataError with the line number on malformed
// input.
RawLoadResult load_raw(const std::filesystem::path& path);
RawLoadResult parse_raw(std::istream& in);
void save_raw(const std::vector<RawRecord>& records, const std::filesystem::path& path);

struct SourceFilter {
  std::size_t min_count = 0;
  double max_doc_fraction = 1.0;
};

struct PreprocessConfig {
  std::set<std::string> stopwords;
  // Tokens whose total count in a source is below min_count are dropped.
  std::size_t min_count = 0;
  // Tokens present in more than this fraction of patients are dropped.
  double max_doc_fraction = 1.0;
  // Declared sources, in source-index order. Empty: every source seen in the
  // records, sorted.
  std::vector<std::string> sources;
  std::map<std::string, SourceFilter> overrides;

  void validate() const;
};

struct PreprocessResult {
  Corpus corpus;
  // Patients left without tokens in every source.
  std::size_t dropped_patients = 0;
};

// Merges records per patient (token lists of repeated (patient, source)
// pairs are concatenated in file order), filters tokens, and builds sorted
// per-source vocabularies. Patients are ordered by id.
PreprocessResult preprocess(const std::vector<RawRecord>& records, const PreprocessConfig& config);

// Inverse of preprocess for an already indexed corpus: one record per
// (patient, source) pair, labels attached to the first record of a patient.
std::vector<RawRecord> corpus_to_records(const Corpus& corpus, const LabelMatrix* labels = nullptr);

enum class LabelPolarity { Present, Absent };
using PatientLabels = std::map<std::string, std::map<std::string, LabelPolarity>>;

// Union of record labels per patient (all Present).
PatientLabels collect_labels(const std::vector<RawRecord>& records);
// CSV with header patient_id,label and an optional third column `state`
// holding present or absent.
PatientLabels load_label_csv(const std::filesystem::path& path);
void merge_labels(PatientLabels& into, const PatientLabels& from);

// Keeps the top_k most frequent present labels (ties broken
// lexicographically); rows follow patient_ids. Cells are Present, Absent for
// explicit negatives, Unknown otherwise.
LabelMatrix build_labels(const PatientLabels& labels, const std::vector<std::string>& patient_ids,
                         std::size_t top_k, std::vector<std::string>* warnings = nullptr);
LabelMatrix build_labels(const std::vector<RawRecord>& records,
                         const std::vector<std::string>& patient_ids, std::size_t top_k,
                         std::vector<std::string>* warnings = nullptr);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct SplitResult {
  Corpus train_corpus;
  LabelMatrix train_labels;
  Corpus test_corpus;
  LabelMatrix test_labels;
  Split split;
};

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& patients);
LabelMatrix subset(const LabelMatrix& labels, const std::vector<std::size_t>& patients);

// Seeded uniform patient-level split; both halves share the vocabulary.
SplitResult split(const Corpus& corpus, const LabelMatrix& labels, double train_fraction,
                  std::uint64_t seed);

inline constexpr const char* kStateFormat = "ss3m-state-v1";
inline constexpr const char* kCorpusFormat = "ss3m-corpus-v1";
inline constexpr const char* kLabelsFormat = "ss3m-labels-v1";

void save_state(const ModelState& state, const std::filesystem::path& path);
// Throws VersionError for other format versions, DataError for anything
// that is not a state file.
ModelState load_state(const std::filesystem::path& path);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
void save_labels(const LabelMatrix& labels, const std::vector<std::string>& patient_ids,
                 const std::filesystem::path& path);
LabelMatrix load_labels(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace ss3m
