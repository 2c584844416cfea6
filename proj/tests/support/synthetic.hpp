#pragma once

// Synthetic corpora used across the test suites: a two-topic corpus with
// disjoint vocabulary halves (topic recovery has a known answer) and a
// labeled multi-class corpus with a label-correlated metadata field.

#include <cstdint>
#include <string>
#include <vector>

namespace docfuse::testsupport {

// Fresh scratch directory under the system temp root; wiped when it already
// exists.
std::string temp_dir(const std::string& name);

struct DisjointSpec {
  std::size_t num_docs = 200;
  std::size_t tokens_per_doc = 50;
  std::size_t words_per_topic = 50;
  std::uint64_t seed = 11;
};

struct DisjointCorpus {
  std::string corpus_path;
  std::string schema_path;
  std::vector<int> topic_of_doc;  // generating topic, corpus order
};

DisjointCorpus write_disjoint_corpus(const DisjointSpec& spec, const std::string& dir);

struct SyntheticSpec {
  std::size_t num_docs = 500;
  std::size_t num_classes = 5;
  std::size_t tokens_per_doc = 30;
  std::size_t exclusive_words = 20;  // per class
  std::size_t shared_words = 80;
  double own_vocab_prob = 0.5;  // otherwise a shared-pool word
  std::size_t tag_max = 3;      // metadata max_len
  double tag_correlation = 0.85;
  std::size_t noise_tags = 10;
  bool with_metadata = true;
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::string corpus_path;
  std::string schema_path;
  std::vector<std::string> labels;  // corpus order
};

SyntheticCorpus write_synthetic_corpus(const SyntheticSpec& spec, const std::string& dir);

}  // namespace docfuse::testsupport
