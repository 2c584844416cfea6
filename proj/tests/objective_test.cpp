#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>

#include "docfuse/error.hpp"
#include "docfuse/objective.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace docfuse;
using nn::Matrix;
using nn::Vec;

namespace {

std::string write_file(const std::string& dir, const std::string& name,
                       const std::string& content) {
  const std::string path = dir + "/" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

// KL(phi || lambda) summed directly in extended precision.
double kl_oracle(const Vec& phi, const Vec& lambda) {
  long double acc = 0.0L;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    if (phi[k] <= 0.0) continue;
    acc += static_cast<long double>(phi[k]) *
           std::log(static_cast<long double>(phi[k]) / static_cast<long double>(lambda[k]));
  }
  return static_cast<double>(acc);
}

// The textbook BCE formula, valid away from saturating logits.
double bce_oracle(const Vec& y, const Vec& zeta) {
  long double acc = 0.0L;
  for (std::size_t v = 0; v < y.size(); ++v) {
    const long double s = 1.0L / (1.0L + std::exp(-static_cast<long double>(zeta[v])));
    acc += -static_cast<long double>(y[v]) * std::log(s) -
           (1.0L - static_cast<long double>(y[v])) * std::log(1.0L - s);
  }
  return static_cast<double>(acc);
}

Vec random_distribution(std::size_t n, Rng& rng) {
  Vec v(n);
  double sum = 0.0;
  for (double& x : v) {
    x = uniform_range(rng, 0.05, 1.0);
    sum += x;
  }
  for (double& x : v) x /= sum;
  return v;
}

// The end-to-end gradient-check instance: D_t=6, D_e=5, K=3, one one_hot
// field with V=4 (two real values plus UNK/PAD), L=2, D_p=3.
struct TinyInstance {
  Corpus corpus;
  FusionModel model;
  TargetTable targets;
  TrainingConfig config;
};

TinyInstance make_tiny_instance(const std::string& dir, std::uint64_t seed = 5) {
  const std::string schema_path = write_file(
      dir, "schema.json",
      R"({"max_tokens": 8,
          "fields": [{"name":"tag","encoding":"one_hot","max_len":2,"embed_dim":3}]})");
  const std::string corpus_path = write_file(
      dir, "corpus.jsonl",
      R"({"id":"a","text":"red green blue","metadata":{"tag":["x"]},"label":"A"})"
      "\n"
      R"({"id":"b","text":"blue blue night","metadata":{"tag":["x","y"]},"label":"A"})"
      "\n"
      R"({"id":"c","text":"green night","metadata":{"tag":["y"]},"label":"B"})"
      "\n"
      R"({"id":"d","text":"red","metadata":{},"label":"B"})"
      "\n");
  TinyInstance t;
  t.corpus = load_corpus(corpus_path, MetadataSchema::load(schema_path));
  FusionDims dims;
  dims.text_dim = 6;
  dims.word_dim = 4;
  dims.embed_dim = 5;
  dims.num_topics = 3;
  t.model = make_fusion_model(t.corpus, dims, TextEncoder::Mode::trainable,
                              PoolingMode::unmasked_mean, /*dropout=*/0.0, seed);

  Rng rng(seed ^ 0xabcddcba);
  PhiTable phi;
  for (const auto& doc : t.corpus.documents)
    phi.emplace(doc.id, random_distribution(dims.num_topics, rng));
  t.targets = build_target_table(t.corpus, phi);

  t.config.omega_text = 1.0;
  t.config.omega_meta["tag"] = 1.0;
  t.config.dropout = 0.0;
  return t;
}

std::vector<const Document*> all_docs(const Corpus& corpus) {
  std::vector<const Document*> batch;
  for (const auto& doc : corpus.documents) batch.push_back(&doc);
  return batch;
}

}  // namespace

TEST_CASE("topic_projection: zero weights give the uniform distribution") {
  const Matrix w(5, 4);  // D_e x K, all zero
  const Vec z{0.3, -0.7, 1.1, 0.0, 2.0};
  const Vec lambda = topic_projection(z, w);
  for (const double v : lambda) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("topic_projection is invariant to constant logit shifts") {
  Rng rng(3);
  Matrix w(4, 3);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = uniform_range(rng, -1.0, 1.0);
  Vec z(4);
  for (double& v : z) v = uniform_range(rng, -1.0, 1.0);
  const Vec a = topic_projection(z, w);

  // W'(i,k) = W(i,k) + c*z_i/|z|^2 adds the constant c to every logit.
  double z2 = 0.0;
  for (const double v : z) z2 += v * v;
  Matrix shifted = w;
  const double c = 7.5;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t k = 0; k < w.cols(); ++k) shifted(i, k) += c * z[i] / z2;
  const Vec b = topic_projection(z, shifted);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(std::abs(a[k] - b[k]) < 1e-9);
}

TEST_CASE("topic_projection matches a softmax-of-matvec oracle") {
  Rng rng(9);
  Matrix w(6, 3);
  for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = uniform_range(rng, -2.0, 2.0);
  Vec z(6);
  for (double& v : z) v = uniform_range(rng, -2.0, 2.0);
  const Vec got = topic_projection(z, w);

  std::vector<long double> logits(3, 0.0L);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t k = 0; k < 3; ++k) logits[k] += static_cast<long double>(w(i, k)) * z[i];
  long double mx = std::max({logits[0], logits[1], logits[2]});
  long double sum = 0.0L;
  std::vector<long double> want(3);
  for (std::size_t k = 0; k < 3; ++k) {
    want[k] = std::exp(logits[k] - mx);
    sum += want[k];
  }
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(std::abs(got[k] - static_cast<double>(want[k] / sum)) < 1e-12);
  CHECK_THROWS_AS(topic_projection(Vec{1.0}, w), Error);
}

TEST_CASE("text_loss is zero at the target and ln 2 for the analytic pair") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec phi = random_distribution(1 + trial % 7, rng);
    CHECK(std::abs(text_loss(phi, phi)) < 1e-12);
  }
  CHECK(std::abs(text_loss(Vec{1.0, 0.0}, Vec{0.5, 0.5}) - std::log(2.0)) < 1e-12);
  CHECK_THROWS_AS(text_loss(Vec{1.0}, Vec{0.5, 0.5}), Error);
}

TEST_CASE("text_loss matches a direct-summation oracle and is nonnegative") {
  Rng rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + trial % 9;
    const Vec phi = random_distribution(k, rng);
    const Vec lambda = random_distribution(k, rng);
    const double loss = text_loss(phi, lambda);
    CHECK(loss >= 0.0);
    CHECK(std::abs(loss - kl_oracle(phi, lambda)) < 1e-12);
  }
}

TEST_CASE("metadata_loss has the ln 2 anchor and vanishes for confident logits") {
  CHECK(std::abs(metadata_loss(Vec{1.0}, Vec{0.0}) - std::log(2.0)) < 1e-12);
  double prev = metadata_loss(Vec{1.0}, Vec{0.0});
  for (double zeta = 5.0; zeta <= 40.0; zeta += 5.0) {
    const double loss = metadata_loss(Vec{1.0}, Vec{zeta});
    CHECK(loss < prev);
    prev = loss;
  }
  CHECK(prev < 1e-15);
  CHECK_THROWS_AS(metadata_loss(Vec{1.0, 0.0}, Vec{0.0}), Error);
}

TEST_CASE("metadata_loss: stable form matches the naive formula for |zeta| <= 10") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    Vec y(7), zeta(7);
    for (double& v : y) v = uniform01(rng) < 0.5 ? 0.0 : 1.0;
    for (double& v : zeta) v = uniform_range(rng, -10.0, 10.0);
    const double loss = metadata_loss(y, zeta);
    CHECK(loss >= 0.0);
    CHECK(std::abs(loss - bce_oracle(y, zeta)) < 1e-9);
  }
}

TEST_CASE("metadata_loss is invariant to joint coordinate permutations") {
  Rng rng(19);
  Vec y{1.0, 0.0, 1.0, 0.0, 0.0};
  Vec zeta{0.3, -1.2, 2.0, 0.7, -0.4};
  const double base = metadata_loss(y, zeta);
  std::vector<std::size_t> perm{4, 2, 0, 3, 1};
  Vec y2(5), zeta2(5);
  for (std::size_t i = 0; i < 5; ++i) {
    y2[i] = y[perm[i]];
    zeta2[i] = zeta[perm[i]];
  }
  CHECK(metadata_loss(y2, zeta2) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("total_loss: zero metadata weights reduce to the weighted text loss") {
  const std::string dir = testsupport::temp_dir("objective_textonly");
  TinyInstance t = make_tiny_instance(dir);
  t.config.omega_text = 0.7;
  t.config.omega_meta["tag"] = 0.0;
  const LossBreakdown b = total_loss(t.model, all_docs(t.corpus), t.targets, t.config);
  CHECK(b.total == 0.7 * b.text_loss);
}

TEST_CASE("total_loss: batch averaging makes duplicates a no-op") {
  const std::string dir = testsupport::temp_dir("objective_dup");
  TinyInstance t = make_tiny_instance(dir);
  const Document* doc = &t.corpus.documents[0];
  const LossBreakdown once = total_loss(t.model, {doc}, t.targets, t.config);
  const LossBreakdown twice = total_loss(t.model, {doc, doc}, t.targets, t.config);
  CHECK(once.total == doctest::Approx(twice.total).epsilon(1e-12));
  CHECK(once.text_loss == doctest::Approx(twice.text_loss).epsilon(1e-12));
}

TEST_CASE("total_loss composes the KL and BCE oracles") {
  const std::string dir = testsupport::temp_dir("objective_compose");
  TinyInstance t = make_tiny_instance(dir);
  t.config.omega_text = 0.6;
  t.config.omega_meta["tag"] = 1.7;
  const std::vector<const Document*> batch = all_docs(t.corpus);
  const LossBreakdown b = total_loss(t.model, batch, t.targets, t.config);

  long double text_acc = 0.0L, meta_acc = 0.0L;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Document& doc = *batch[i];
    text_acc += kl_oracle(t.targets.phi.at(doc.id), b.lambdas[i]);
    meta_acc += bce_oracle(t.targets.recon.at(doc.id).fields[0], b.zetas[i][0]);
  }
  const double text_mean = static_cast<double>(text_acc) / static_cast<double>(batch.size());
  const double meta_mean = static_cast<double>(meta_acc) / static_cast<double>(batch.size());
  CHECK(std::abs(b.text_loss - text_mean) < 1e-9);
  CHECK(std::abs(b.meta_loss[0] - meta_mean) < 1e-9);
  CHECK(std::abs(b.total - (0.6 * text_mean + 1.7 * meta_mean)) < 1e-9);
}

TEST_CASE("LossBreakdown total always recomposes from its parts") {
  const std::string dir = testsupport::temp_dir("objective_recompose");
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    TinyInstance t = make_tiny_instance(dir, 100 + trial);
    t.config.omega_text = uniform_range(rng, 0.0, 2.0);
    t.config.omega_meta["tag"] = uniform_range(rng, 0.0, 2.0);
    if (t.config.omega_text == 0.0 && t.config.omega_meta["tag"] == 0.0)
      t.config.omega_text = 1.0;
    const LossBreakdown b = total_loss(t.model, all_docs(t.corpus), t.targets, t.config);
    const double recomposed =
        t.config.omega_text * b.text_loss + t.config.omega_meta["tag"] * b.meta_loss[0];
    CHECK(std::abs(b.total - recomposed) < 1e-9);
  }
}

TEST_CASE("total_loss reports missing targets by document id") {
  const std::string dir = testsupport::temp_dir("objective_missing");
  TinyInstance t = make_tiny_instance(dir);
  t.targets.phi.erase("c");
  CHECK_THROWS_WITH_AS(total_loss(t.model, all_docs(t.corpus), t.targets, t.config),
                       doctest::Contains("c"), Error);
}

TEST_CASE("end-to-end analytic gradient matches central finite differences") {
  const std::string dir = testsupport::temp_dir("objective_gradcheck");
  TinyInstance t = make_tiny_instance(dir);
  t.config.omega_text = 1.3;
  t.config.omega_meta["tag"] = 0.8;
  const std::vector<const Document*> batch = all_docs(t.corpus);

  FusionGradients grads = make_gradients(t.model);
  total_loss(t.model, batch, t.targets, t.config, false, nullptr, &grads);

  const auto loss = [&]() {
    return total_loss(t.model, batch, t.targets, t.config).total;
  };
  const auto report = nn::grad_check(loss, param_blocks(t.model), grad_blocks(grads, t.model),
                                     1e-5, 1e-4);
  INFO("worst block: ", report.worst_block, "[", report.worst_index, "]");
  CHECK(report.max_rel_err < 1e-4);
  CHECK(report.passed);
}

TEST_CASE("gradients flow through every parameter block on the tiny instance") {
  const std::string dir = testsupport::temp_dir("objective_gradflow");
  TinyInstance t = make_tiny_instance(dir);
  FusionGradients grads = make_gradients(t.model);
  total_loss(t.model, all_docs(t.corpus), t.targets, t.config, false, nullptr, &grads);
  for (const auto& block : grad_blocks(grads, t.model)) {
    double norm = 0.0;
    for (std::size_t i = 0; i < block.size; ++i) norm += std::abs(block.values[i]);
    INFO("block: ", block.name);
    CHECK(norm > 0.0);
  }
}

TEST_CASE("train: lr = 0 leaves every parameter unchanged") {
  const std::string dir = testsupport::temp_dir("objective_lr0");
  TinyInstance t = make_tiny_instance(dir);
  FusionModel before = t.model;
  TrainingConfig config = t.config;
  config.adam.lr = 0.0;
  config.batch_size = 2;
  config.epochs = 3;
  config.dropout = 0.0;
  config.seed = 77;
  train(t.corpus, t.targets, t.model, config);
  CHECK(t.model.fusion_weight == before.fusion_weight);
  CHECK(t.model.topic_weight == before.topic_weight);
  CHECK(t.model.text.word_embeddings == before.text.word_embeddings);
  CHECK(t.model.meta[0].l1.weight == before.meta[0].l1.weight);
  CHECK(t.model.meta_weight[0] == before.meta_weight[0]);
}

TEST_CASE("train: the same seed reproduces bit-identical parameters") {
  const std::string dir = testsupport::temp_dir("objective_trainseed");
  auto run = [&](std::uint64_t seed) {
    TinyInstance t = make_tiny_instance(dir, 900);
    TrainingConfig config = t.config;
    config.adam.lr = 1e-3;
    config.batch_size = 2;
    config.epochs = 4;
    config.dropout = 0.1;
    config.seed = seed;
    train(t.corpus, t.targets, t.model, config);
    return t.model;
  };
  const FusionModel a = run(123);
  const FusionModel b = run(123);
  CHECK(a.fusion_weight == b.fusion_weight);
  CHECK(a.topic_weight == b.topic_weight);
  CHECK(a.text.word_embeddings == b.text.word_embeddings);
  CHECK(a.meta_weight[0] == b.meta_weight[0]);
  const FusionModel c = run(124);
  CHECK(a.fusion_weight != c.fusion_weight);
}

TEST_CASE("train aborts on non-finite losses naming the document") {
  const std::string dir = testsupport::temp_dir("objective_nonfinite");
  TinyInstance t = make_tiny_instance(dir);
  t.model.fusion_weight(0, 0) = std::numeric_limits<double>::infinity();
  TrainingConfig config = t.config;
  config.epochs = 1;
  config.dropout = 0.0;
  CHECK_THROWS_WITH_AS(train(t.corpus, t.targets, t.model, config),
                       doctest::Contains("non-finite loss at document"), Error);
}

TEST_CASE("train reduces the loss substantially on a learnable synthetic corpus") {
  const std::string dir = testsupport::temp_dir("objective_learn");
  const auto data = testsupport::write_synthetic_corpus({.num_docs = 200, .seed = 55}, dir);
  const Corpus corpus = load_corpus(data.corpus_path, MetadataSchema::load(data.schema_path));

  LdaConfig lda;
  lda.num_topics = 5;
  lda.iterations = 100;
  lda.seed = 3;
  const TopicModel topics = train_lda(corpus, lda);
  PhiTable phi;
  for (const auto& doc : corpus.documents)
    phi.emplace(doc.id, infer_doc_topics(topics, doc.tokens, 30, derive_seed(3, doc.id)));

  FusionDims dims;
  dims.text_dim = 16;
  dims.word_dim = 16;
  dims.embed_dim = 32;
  dims.num_topics = 5;
  FusionModel model = make_fusion_model(corpus, dims, TextEncoder::Mode::trainable,
                                        PoolingMode::unmasked_mean, 0.1, 44);

  TrainingConfig config;
  config.adam.lr = 1e-3;
  config.batch_size = 8;
  config.epochs = 30;
  config.dropout = 0.1;
  config.seed = 10;
  const TargetTable targets = build_target_table(corpus, phi);
  const TrainReport report = train(corpus, targets, model, config);
  REQUIRE(report.epochs.size() == 30);
  const double first = report.epochs.front().total;
  const double last = report.epochs.back().total;
  CHECK(last < 0.8 * first);

  const std::string log_path = dir + "/loss.csv";
  save_loss_log(report, corpus.schema, log_path);
  std::ifstream in(log_path);
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  CHECK(line == "epoch,text_loss,meta_loss_tag,total");
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 30);
}

TEST_CASE("training config validation catches bad weights") {
  const std::string dir = testsupport::temp_dir("objective_badcfg");
  TinyInstance t = make_tiny_instance(dir);
  TrainingConfig config = t.config;
  config.omega_text = 0.0;
  config.omega_meta["tag"] = 0.0;
  CHECK_THROWS_AS(config.validate(t.model.schema), Error);
  config.omega_meta["tag"] = -1.0;
  CHECK_THROWS_AS(config.validate(t.model.schema), Error);
  config.omega_meta.clear();
  config.omega_meta["no_such_field"] = 1.0;
  CHECK_THROWS_AS(config.validate(t.model.schema), Error);
  config.omega_meta.clear();
  config.batch_size = 0;
  CHECK_THROWS_AS(config.validate(t.model.schema), Error);
}
