#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "docfuse/error.hpp"
#include "docfuse/topics.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace docfuse;

namespace {

std::string write_file(const std::string& dir, const std::string& name,
                       const std::string& content) {
  const std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

Corpus single_token_corpus(const std::string& dir) {
  const std::string path =
      write_file(dir, "c.jsonl", R"({"id":"only","text":"word","metadata":{}})"
                                 "\n");
  MetadataSchema schema;
  return load_corpus(path, schema);
}

// Fraction of documents explained by the per-dominant-topic majority class
// (standard cluster purity).
double dominant_topic_purity(const std::vector<std::vector<int>>& doc_topic_counts,
                             const std::vector<int>& generating_topic) {
  std::map<int, std::map<int, std::size_t>> groups;  // dominant -> class -> count
  for (std::size_t d = 0; d < doc_topic_counts.size(); ++d) {
    const auto& counts = doc_topic_counts[d];
    const int dominant = static_cast<int>(
        std::max_element(counts.begin(), counts.end()) - counts.begin());
    ++groups[dominant][generating_topic[d]];
  }
  std::size_t matched = 0;
  for (const auto& [dominant, per_class] : groups) {
    (void)dominant;
    std::size_t best = 0;
    for (const auto& [cls, count] : per_class) {
      (void)cls;
      best = std::max(best, count);
    }
    matched += best;
  }
  return static_cast<double>(matched) / static_cast<double>(generating_topic.size());
}

}  // namespace

TEST_CASE("one-token corpus folds in to a near-uniform posterior") {
  // With the default alpha = 50/K the smoothed estimate is (n+25)/51 per
  // sweep, so any fold-in average sits within 0.011 of 1/2.
  const std::string dir = testsupport::temp_dir("topics_single");
  const Corpus corpus = single_token_corpus(dir);
  LdaConfig config;
  config.num_topics = 2;
  config.iterations = 20;
  config.seed = 1;
  const TopicModel model = train_lda(corpus, config);
  const std::vector<double> phi =
      infer_doc_topics(model, corpus.documents[0].tokens, 50, 3);
  CHECK(std::abs(phi[0] - 0.5) < 0.011);
  CHECK(std::abs(phi[1] - 0.5) < 0.011);
  CHECK(std::abs(phi[0] + phi[1] - 1.0) < 1e-9);
}

TEST_CASE("counts are conserved after every sweep") {
  const std::string dir = testsupport::temp_dir("topics_conserve");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 60, .seed = 2}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  const long long total_tokens = static_cast<long long>(corpus.total_tokens());

  LdaConfig config;
  config.num_topics = 4;
  config.iterations = 15;
  config.seed = 5;
  std::size_t sweeps_seen = 0;
  train_lda(corpus, config, [&](const SweepStats& stats) {
    ++sweeps_seen;
    const long long total = std::accumulate(stats.model.topic_totals.begin(),
                                            stats.model.topic_totals.end(), 0ll);
    CHECK(total == total_tokens);
    stats.model.validate();
    for (std::size_t d = 0; d < stats.doc_topic_counts.size(); ++d) {
      const long long doc_sum = std::accumulate(stats.doc_topic_counts[d].begin(),
                                                stats.doc_topic_counts[d].end(), 0ll);
      CHECK(doc_sum == static_cast<long long>(stats.doc_lengths[d]));
    }
  });
  CHECK(sweeps_seen == 15);
}

TEST_CASE("a disjoint-vocabulary corpus is recovered with high purity") {
  const std::string dir = testsupport::temp_dir("topics_recovery");
  const auto data = testsupport::write_disjoint_corpus(
      {.num_docs = 100, .tokens_per_doc = 50, .seed = 11}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));

  LdaConfig config;
  config.num_topics = 2;
  // The 50/K default would cap a 50-token document's fold-in at
  // (50+25)/(50+50) = 0.75 regardless of the data; concentration needs a
  // prior the document can outweigh.
  config.alpha = 0.5;
  config.iterations = 200;
  config.seed = 17;
  std::vector<std::vector<int>> final_doc_topics;
  const TopicModel model = train_lda(corpus, config, [&](const SweepStats& stats) {
    if (stats.iteration == config.iterations) final_doc_topics = stats.doc_topic_counts;
  });
  REQUIRE(final_doc_topics.size() == corpus.documents.size());
  CHECK(dominant_topic_purity(final_doc_topics, data.topic_of_doc) >= 0.95);

  // Fold-in of a document built purely from one vocabulary half lands on
  // that topic with high confidence.
  std::vector<std::size_t> alpha_tokens;
  for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
    if (data.topic_of_doc[d] == 0) {
      alpha_tokens = corpus.documents[d].tokens;
      break;
    }
  }
  const std::vector<double> phi = infer_doc_topics(model, alpha_tokens, 50, 23);
  const std::size_t dominant =
      static_cast<std::size_t>(std::max_element(phi.begin(), phi.end()) - phi.begin());
  CHECK(phi[dominant] >= 0.8);

  // top_words of the topic that owns the alpha half stay within that half.
  const auto tops = top_words(model, 10);
  for (const auto& tw : tops[dominant]) {
    const std::string& word = corpus.vocab.token_of(tw.token_id);
    CHECK(word.rfind("alpha", 0) == 0);
  }
}

TEST_CASE("log-likelihood trends upward during training") {
  const std::string dir = testsupport::temp_dir("topics_loglik");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 60, .seed = 29}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  LdaConfig config;
  config.num_topics = 2;
  config.iterations = 60;
  config.seed = 31;
  std::vector<double> loglik;
  train_lda(corpus, config,
            [&](const SweepStats& stats) { loglik.push_back(stats.log_likelihood); });
  REQUIRE(loglik.size() == 60);
  const double first10 = std::accumulate(loglik.begin(), loglik.begin() + 10, 0.0) / 10.0;
  const double last10 = std::accumulate(loglik.end() - 10, loglik.end(), 0.0) / 10.0;
  CHECK(last10 >= first10);
}

TEST_CASE("training is bit-deterministic given the seed") {
  const std::string dir = testsupport::temp_dir("topics_determinism");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 40, .seed = 37}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  LdaConfig config;
  config.num_topics = 3;
  config.iterations = 25;
  config.seed = 41;
  const TopicModel a = train_lda(corpus, config);
  const TopicModel b = train_lda(corpus, config);
  CHECK(a.topic_word_counts == b.topic_word_counts);
  CHECK(a.topic_totals == b.topic_totals);
  config.seed = 43;
  const TopicModel c = train_lda(corpus, config);
  CHECK(a.topic_word_counts != c.topic_word_counts);
}

TEST_CASE("empty documents fold in to the uniform distribution") {
  const std::string dir = testsupport::temp_dir("topics_emptydoc");
  const Corpus corpus = single_token_corpus(dir);
  LdaConfig config;
  config.num_topics = 5;
  config.iterations = 5;
  const TopicModel model = train_lda(corpus, config);
  const std::vector<double> phi = infer_doc_topics(model, {}, 50, 7);
  for (const double v : phi) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("fold-in output is always a probability vector") {
  const std::string dir = testsupport::temp_dir("topics_probvec");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 30, .seed = 47}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  LdaConfig config;
  config.num_topics = 7;
  config.iterations = 10;
  config.seed = 53;
  const TopicModel model = train_lda(corpus, config);
  for (std::size_t d = 0; d < 10; ++d) {
    const std::vector<double> phi =
        infer_doc_topics(model, corpus.documents[d].tokens, 30, 100 + d);
    double sum = 0.0;
    for (const double v : phi) {
      CHECK(v > 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("top_words with n = V is a permutation of the vocabulary") {
  const std::string dir = testsupport::temp_dir("topics_topwords");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 20, .seed = 59}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  LdaConfig config;
  config.num_topics = 2;
  config.iterations = 10;
  config.seed = 61;
  const TopicModel model = train_lda(corpus, config);

  const auto tops = top_words(model, model.vocab_size);
  for (const auto& topic : tops) {
    std::set<std::size_t> ids;
    for (const auto& tw : topic) ids.insert(tw.token_id);
    CHECK(ids.size() == model.vocab_size);
  }
  // Pure function: repeated calls agree.
  const auto again = top_words(model, 5);
  const auto again2 = top_words(model, 5);
  for (std::size_t k = 0; k < again.size(); ++k)
    for (std::size_t i = 0; i < again[k].size(); ++i) {
      CHECK(again[k][i].token_id == again2[k][i].token_id);
      CHECK(again[k][i].probability == again2[k][i].probability);
    }
  CHECK_THROWS_AS(top_words(model, 0), Error);
  CHECK_THROWS_AS(top_words(model, model.vocab_size + 1), Error);
}

TEST_CASE("train_lda and infer_doc_topics validate their inputs") {
  const std::string dir = testsupport::temp_dir("topics_validate");
  const Corpus corpus = single_token_corpus(dir);
  LdaConfig config;
  config.num_topics = 1;
  CHECK_THROWS_AS(train_lda(corpus, config), Error);
  config.num_topics = 2;
  config.iterations = 0;
  CHECK_THROWS_AS(train_lda(corpus, config), Error);
  config.iterations = 3;
  const TopicModel model = train_lda(corpus, config);
  CHECK_THROWS_AS(infer_doc_topics(model, {model.vocab_size}, 10, 1), Error);
}

TEST_CASE("topic model and phi table round-trip through their files") {
  const std::string dir = testsupport::temp_dir("topics_persist");
  const auto data = testsupport::write_disjoint_corpus({.num_docs = 30, .seed = 67}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));
  LdaConfig config;
  config.num_topics = 3;
  config.iterations = 15;
  config.seed = 71;
  const TopicModel model = train_lda(corpus, config);

  const std::string model_path = dir + "/model.json";
  save_topic_model(model, model_path);
  const TopicModel loaded = load_topic_model(model_path);
  CHECK(loaded.num_topics == model.num_topics);
  CHECK(loaded.vocab_size == model.vocab_size);
  CHECK(loaded.alpha == model.alpha);
  CHECK(loaded.beta == model.beta);
  CHECK(loaded.topic_word_counts == model.topic_word_counts);
  CHECK(loaded.topic_totals == model.topic_totals);

  PhiTable table;
  for (std::size_t d = 0; d < 5; ++d)
    table.emplace(corpus.documents[d].id,
                  infer_doc_topics(model, corpus.documents[d].tokens, 20, d));
  const std::string phi_path = dir + "/phi.tsv";
  save_phi_table(table, model.num_topics, phi_path);
  std::size_t k = 0;
  const PhiTable back = load_phi_table(phi_path, &k);
  CHECK(k == model.num_topics);
  REQUIRE(back.size() == table.size());
  for (const auto& [id, phi] : table) {
    REQUIRE(back.count(id) == 1);
    CHECK(back.at(id) == phi);  // %.17g round-trips doubles exactly
  }
}
