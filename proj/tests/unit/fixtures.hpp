#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ss3m/model.hpp"

namespace fixture {

// Corpus with token vocabularies named "s<s>_t<v>" and patients "p<d>".
inline ss3m::Corpus make_corpus(const std::vector<std::size_t>& vocab_sizes,
                                std::vector<std::vector<std::vector<ss3m::TokenId>>> tokens) {
  ss3m::Corpus corpus;
  auto vocab = std::make_shared<std::vector<ss3m::Vocabulary>>();
  for (std::size_t s = 0; s < vocab_sizes.size(); ++s) {
    corpus.source_names.push_back("s" + std::to_string(s));
    std::vector<std::string> words;
    for (std::size_t v = 0; v < vocab_sizes[s]; ++v) {
      words.push_back("s" + std::to_string(s) + "_t" + std::to_string(v));
    }
    vocab->emplace_back(std::move(words));
  }
  corpus.vocab = vocab;
  for (std::size_t d = 0; d < tokens.size(); ++d) corpus.patient_ids.push_back("p" + std::to_string(d));
  corpus.tokens = std::move(tokens);
  return corpus;
}

inline ss3m::Hyperparameters small_hyper(std::size_t num_p, std::size_t num_lab, std::size_t sources) {
  ss3m::Hyperparameters h;
  h.num_phenotypes = num_p;
  h.num_labeled = num_lab;
  h.token_concentration.assign(sources, 0.01);
  return h;
}

}  // namespace fixture
