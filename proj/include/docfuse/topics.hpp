#pragma once

// LDA by collapsed Gibbs sampling, fold-in inference for per-document topic
// distributions, and persistence for the model and the cached per-document
// targets.

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "docfuse/corpus.hpp"

namespace docfuse {

struct TopicModel {
  std::size_t num_topics = 0;  // K
  std::size_t vocab_size = 0;  // V
  double alpha = 0.0;          // symmetric document-topic prior (per topic)
  double beta = 0.0;           // symmetric topic-word prior
  std::vector<std::vector<int>> topic_word_counts;  // K x V
  std::vector<long long> topic_totals;              // K, row sums of the above
  std::uint64_t seed = 0;

  void validate() const;  // count consistency and prior positivity
};

struct LdaConfig {
  std::size_t num_topics = 50;
  double alpha = -1.0;  // <= 0 selects 50/K
  double beta = 0.01;
  std::size_t iterations = 500;
  std::uint64_t seed = 0;
};

// Observer view after each Gibbs sweep.
struct SweepStats {
  std::size_t iteration;    // 1-based
  double log_likelihood;    // corpus token log-likelihood under current state
  const TopicModel& model;
  const std::vector<std::vector<int>>& doc_topic_counts;
  const std::vector<std::size_t>& doc_lengths;  // sampled tokens per document
};
using SweepObserver = std::function<void(const SweepStats&)>;

// Standard collapsed Gibbs: P(z_i = k) proportional to
// (n_{d,k}+alpha) * (n_{k,w}+beta) / (n_k+V*beta), current token excluded.
// Documents with no tokens are skipped. Deterministic given the seed.
TopicModel train_lda(const Corpus& corpus, const LdaConfig& config,
                     const SweepObserver& observer = {});

// Fold-in Gibbs against frozen topic-word counts; returns
// phi_k = (n_{d,k}+alpha)/(len+K*alpha) averaged over the last
// max(1, fold_in_iters/2) sweeps. Empty input yields uniform 1/K.
std::vector<double> infer_doc_topics(const TopicModel& model,
                                     const std::vector<std::size_t>& tokens,
                                     std::size_t fold_in_iters, std::uint64_t seed);

struct TopWord {
  std::size_t token_id;
  double probability;  // (count+beta)/(total+V*beta)
};

// Per-topic n highest-probability words, ties by token id ascending.
std::vector<std::vector<TopWord>> top_words(const TopicModel& model, std::size_t n);

void save_topic_model(const TopicModel& model, const std::string& path);
TopicModel load_topic_model(const std::string& path);

// Sidecar of cached per-document topic targets: first line K, then
// "doc_id v1 ... vK" per line, written with round-trip precision.
using PhiTable = std::map<std::string, std::vector<double>>;
void save_phi_table(const PhiTable& table, std::size_t num_topics, const std::string& path);
PhiTable load_phi_table(const std::string& path, std::size_t* num_topics = nullptr);

}  // namespace docfuse
