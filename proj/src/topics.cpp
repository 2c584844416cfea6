#include "docfuse/topics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "docfuse/error.hpp"
#include "json.hpp"

namespace docfuse {

namespace {

void write_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

void check_id_plain(const std::string& id) {
  if (id.empty() || id.find_first_of(" \t\r\n") != std::string::npos)
    throw Error("document id not representable in table files: \"" + id + "\"");
}

}  // namespace

void TopicModel::validate() const {
  if (num_topics < 2) throw Error("topic model: K must be >= 2");
  if (alpha <= 0.0 || beta <= 0.0) throw Error("topic model: priors must be positive");
  if (topic_word_counts.size() != num_topics || topic_totals.size() != num_topics)
    throw Error("topic model: count table shape mismatch");
  for (std::size_t k = 0; k < num_topics; ++k) {
    if (topic_word_counts[k].size() != vocab_size)
      throw Error("topic model: count table shape mismatch");
    long long sum = 0;
    for (const int c : topic_word_counts[k]) {
      if (c < 0) throw Error("topic model: negative count");
      sum += c;
    }
    if (sum != topic_totals[k]) throw Error("topic model: topic totals inconsistent");
  }
}

TopicModel train_lda(const Corpus& corpus, const LdaConfig& config,
                     const SweepObserver& observer) {
  if (config.num_topics < 2) throw Error("train_lda: K must be >= 2");
  if (config.iterations < 1) throw Error("train_lda: iterations must be >= 1");
  if (corpus.documents.empty()) throw Error("train_lda: empty corpus");

  const std::size_t num_topics = config.num_topics;
  const std::size_t vocab_size = corpus.vocab.size();
  const double alpha =
      config.alpha > 0.0 ? config.alpha : 50.0 / static_cast<double>(num_topics);
  const double beta = config.beta;

  TopicModel model;
  model.num_topics = num_topics;
  model.vocab_size = vocab_size;
  model.alpha = alpha;
  model.beta = beta;
  model.seed = config.seed;
  model.topic_word_counts.assign(num_topics, std::vector<int>(vocab_size, 0));
  model.topic_totals.assign(num_topics, 0);

  const std::size_t num_docs = corpus.documents.size();
  std::vector<std::vector<int>> doc_topic_counts(num_docs, std::vector<int>(num_topics, 0));
  std::vector<std::vector<int>> assignments(num_docs);
  std::vector<std::size_t> doc_lengths(num_docs, 0);

  Rng rng(derive_seed(config.seed, "lda-gibbs"));

  // Random initial assignments; empty documents are skipped throughout.
  for (std::size_t d = 0; d < num_docs; ++d) {
    const auto& tokens = corpus.documents[d].tokens;
    doc_lengths[d] = tokens.size();
    assignments[d].resize(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::size_t w = tokens[i];
      if (w >= vocab_size) throw Error("train_lda: token id out of range");
      const int k = static_cast<int>(uniform_index(rng, num_topics));
      assignments[d][i] = k;
      ++doc_topic_counts[d][k];
      ++model.topic_word_counts[k][w];
      ++model.topic_totals[k];
    }
  }

  const double v_beta = static_cast<double>(vocab_size) * beta;
  std::vector<double> cumulative(num_topics, 0.0);

  for (std::size_t iter = 1; iter <= config.iterations; ++iter) {
    for (std::size_t d = 0; d < num_docs; ++d) {
      const auto& tokens = corpus.documents[d].tokens;
      auto& z = assignments[d];
      auto& n_dk = doc_topic_counts[d];
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::size_t w = tokens[i];
        const int old_k = z[i];
        --n_dk[old_k];
        --model.topic_word_counts[old_k][w];
        --model.topic_totals[old_k];

        double total = 0.0;
        for (std::size_t k = 0; k < num_topics; ++k) {
          const double p = (n_dk[k] + alpha) * (model.topic_word_counts[k][w] + beta) /
                           (static_cast<double>(model.topic_totals[k]) + v_beta);
          total += p;
          cumulative[k] = total;
        }
        const double u = uniform01(rng) * total;
        std::size_t new_k = 0;
        while (new_k + 1 < num_topics && cumulative[new_k] <= u) ++new_k;

        z[i] = static_cast<int>(new_k);
        ++n_dk[new_k];
        ++model.topic_word_counts[new_k][w];
        ++model.topic_totals[new_k];
      }
    }

    if (observer) {
      // Token log-likelihood under the current counts: every token scored by
      // sum_k theta_dk * phi_kw with smoothed estimates.
      double log_likelihood = 0.0;
      for (std::size_t d = 0; d < num_docs; ++d) {
        const auto& tokens = corpus.documents[d].tokens;
        if (tokens.empty()) continue;
        const double denom_theta =
            static_cast<double>(tokens.size()) + static_cast<double>(num_topics) * alpha;
        for (const std::size_t w : tokens) {
          double p = 0.0;
          for (std::size_t k = 0; k < num_topics; ++k) {
            const double theta = (doc_topic_counts[d][k] + alpha) / denom_theta;
            const double phi = (model.topic_word_counts[k][w] + beta) /
                               (static_cast<double>(model.topic_totals[k]) + v_beta);
            p += theta * phi;
          }
          log_likelihood += std::log(p);
        }
      }
      SweepStats stats{iter, log_likelihood, model, doc_topic_counts, doc_lengths};
      observer(stats);
    }
  }
  return model;
}

std::vector<double> infer_doc_topics(const TopicModel& model,
                                     const std::vector<std::size_t>& tokens,
                                     std::size_t fold_in_iters, std::uint64_t seed) {
  const std::size_t num_topics = model.num_topics;
  std::vector<double> phi(num_topics, 1.0 / static_cast<double>(num_topics));
  if (tokens.empty()) return phi;
  for (const std::size_t w : tokens)
    if (w >= model.vocab_size) throw Error("infer_doc_topics: token id out of range");

  const std::size_t iterations = std::max<std::size_t>(1, fold_in_iters);
  const std::size_t window = std::max<std::size_t>(1, iterations / 2);
  const double v_beta = static_cast<double>(model.vocab_size) * model.beta;
  const double denom_theta = static_cast<double>(tokens.size()) +
                             static_cast<double>(num_topics) * model.alpha;

  Rng rng(derive_seed(seed, "lda-foldin"));
  std::vector<int> n_dk(num_topics, 0);
  std::vector<int> z(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int k = static_cast<int>(uniform_index(rng, num_topics));
    z[i] = k;
    ++n_dk[k];
  }

  std::vector<double> cumulative(num_topics, 0.0);
  std::vector<double> phi_acc(num_topics, 0.0);
  std::size_t averaged = 0;

  for (std::size_t iter = 1; iter <= iterations; ++iter) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::size_t w = tokens[i];
      --n_dk[z[i]];
      double total = 0.0;
      for (std::size_t k = 0; k < num_topics; ++k) {
        const double p = (n_dk[k] + model.alpha) *
                         (model.topic_word_counts[k][w] + model.beta) /
                         (static_cast<double>(model.topic_totals[k]) + v_beta);
        total += p;
        cumulative[k] = total;
      }
      const double u = uniform01(rng) * total;
      std::size_t new_k = 0;
      while (new_k + 1 < num_topics && cumulative[new_k] <= u) ++new_k;
      z[i] = static_cast<int>(new_k);
      ++n_dk[new_k];
    }
    if (iter > iterations - window) {
      for (std::size_t k = 0; k < num_topics; ++k)
        phi_acc[k] += (n_dk[k] + model.alpha) / denom_theta;
      ++averaged;
    }
  }
  for (std::size_t k = 0; k < num_topics; ++k)
    phi[k] = phi_acc[k] / static_cast<double>(averaged);
  return phi;
}

std::vector<std::vector<TopWord>> top_words(const TopicModel& model, std::size_t n) {
  if (n < 1) throw Error("top_words: n must be >= 1");
  if (n > model.vocab_size) throw Error("top_words: n exceeds vocabulary size");
  const double v_beta = static_cast<double>(model.vocab_size) * model.beta;
  std::vector<std::vector<TopWord>> result(model.num_topics);
  std::vector<std::size_t> order(model.vocab_size);
  for (std::size_t k = 0; k < model.num_topics; ++k) {
    for (std::size_t w = 0; w < model.vocab_size; ++w) order[w] = w;
    const auto& counts = model.topic_word_counts[k];
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (counts[a] != counts[b]) return counts[a] > counts[b];
      return a < b;
    });
    result[k].reserve(n);
    const double denom = static_cast<double>(model.topic_totals[k]) + v_beta;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t w = order[i];
      result[k].push_back({w, (counts[w] + model.beta) / denom});
    }
  }
  return result;
}

void save_topic_model(const TopicModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "docfuse-topic-model";
  j["version"] = 1;
  j["num_topics"] = model.num_topics;
  j["vocab_size"] = model.vocab_size;
  j["alpha"] = model.alpha;
  j["beta"] = model.beta;
  j["seed"] = model.seed;
  j["topic_word_counts"] = model.topic_word_counts;
  j["topic_totals"] = model.topic_totals;
  std::ofstream out(path);
  if (!out) throw FileError("cannot write topic model: " + path);
  out << j.dump() << '\n';
}

TopicModel load_topic_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open topic model: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("topic model " + path + ": " + e.what());
  }
  if (j.value("format", "") != std::string("docfuse-topic-model"))
    throw Error("topic model " + path + ": unrecognized format");
  if (j.value("version", 0) != 1)
    throw Error("topic model " + path + ": unsupported version");
  TopicModel model;
  model.num_topics = j.at("num_topics").get<std::size_t>();
  model.vocab_size = j.at("vocab_size").get<std::size_t>();
  model.alpha = j.at("alpha").get<double>();
  model.beta = j.at("beta").get<double>();
  model.seed = j.at("seed").get<std::uint64_t>();
  model.topic_word_counts = j.at("topic_word_counts").get<std::vector<std::vector<int>>>();
  model.topic_totals = j.at("topic_totals").get<std::vector<long long>>();
  model.validate();
  return model;
}

void save_phi_table(const PhiTable& table, std::size_t num_topics, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write topic targets: " + path);
  out << num_topics << '\n';
  for (const auto& [id, phi] : table) {
    check_id_plain(id);
    if (phi.size() != num_topics)
      throw Error("topic target for " + id + " has wrong length");
    out << id;
    for (const double v : phi) {
      out << ' ';
      write_double(out, v);
    }
    out << '\n';
  }
}

PhiTable load_phi_table(const std::string& path, std::size_t* num_topics) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open topic targets: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("topic targets " + path + ": empty file");
  std::size_t k = 0;
  try {
    k = std::stoul(line);
  } catch (const std::exception&) {
    throw Error("topic targets " + path + ": bad header");
  }
  if (num_topics) *num_topics = k;
  PhiTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    std::vector<double> phi(k);
    for (std::size_t i = 0; i < k; ++i) {
      if (!(ss >> phi[i]))
        throw Error("topic targets " + path + " line " + std::to_string(line_no) +
                    ": expected " + std::to_string(k) + " values");
    }
    table.emplace(std::move(id), std::move(phi));
  }
  return table;
}

}  // namespace docfuse
