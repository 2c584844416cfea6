#include "docfuse/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "docfuse/error.hpp"
#include "json.hpp"

namespace docfuse {

namespace fs = std::filesystem;

namespace {

void write_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw FileError("no " + what + " path given");
  if (!fs::exists(path)) throw FileError(what + " not found: " + path);
}

// Removes every tracked output unless release() is called, so failed
// commands never leave partial files behind.
class OutputGuard {
 public:
  ~OutputGuard() {
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  const std::string& track(const std::string& path) {
    paths_.push_back(path);
    return paths_.back();
  }
  void release() { paths_.clear(); }

 private:
  std::vector<std::string> paths_;
};

void ensure_output_dir(const RunConfig& config) {
  if (!config.output_dir.empty()) fs::create_directories(config.output_dir);
}

}  // namespace

std::string RunConfig::resolve(const std::string& explicit_path,
                               const std::string& default_name) const {
  if (!explicit_path.empty()) return explicit_path;
  if (output_dir.empty()) return default_name;
  return (fs::path(output_dir) / default_name).string();
}

void apply_config_json(RunConfig& config, const std::string& path) {
  require_file(path, "config file");
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("config file " + path + ": " + e.what());
  }
  auto str = [&](const char* key, std::string& out) {
    if (j.contains(key)) out = j.at(key).get<std::string>();
  };
  auto num = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  str("corpus", config.corpus_path);
  str("schema", config.schema_path);
  str("word_vectors", config.word_vectors_path);
  str("precomputed", config.precomputed_path);
  str("output_dir", config.output_dir);
  str("topic_model", config.topic_model_path);
  str("phi_targets", config.phi_path);
  str("model", config.model_path);
  str("loss_log", config.loss_log_path);
  str("embeddings", config.embeddings_path);
  str("predictions", config.predictions_path);
  str("metrics", config.metrics_path);
  str("confusion", config.confusion_path);
  str("pca", config.pca_path);
  str("clusters", config.clusters_path);
  str("sweep", config.sweep_path);
  str("pooling", config.pooling);
  num("topics", config.num_topics);
  num("lda_alpha", config.lda_alpha);
  num("lda_beta", config.lda_beta);
  num("lda_iterations", config.lda_iterations);
  num("fold_in_iters", config.fold_in_iters);
  num("text_dim", config.text_dim);
  num("word_dim", config.word_dim);
  num("embed_dim", config.embed_dim);
  num("lr", config.lr);
  num("beta1", config.adam_beta1);
  num("beta2", config.adam_beta2);
  num("epsilon", config.adam_epsilon);
  num("batch_size", config.batch_size);
  num("epochs", config.epochs);
  num("dropout", config.dropout);
  num("omega_text", config.omega_text);
  num("knn_k", config.knn_k);
  num("exemplar_fraction", config.exemplar_fraction);
  num("overcluster", config.overcluster_k);
  num("seed", config.seed);
  num("max_tokens", config.max_tokens);
  num("min_count", config.min_count);
  if (j.contains("omega_meta")) {
    for (const auto& [field, w] : j.at("omega_meta").items())
      config.omega_meta[field] = w.get<double>();
  }
}

std::size_t effective_epochs(const RunConfig& config, std::size_t corpus_size) {
  if (config.epochs > 0) return config.epochs;
  return corpus_size > 5000 ? 1 : 3;
}

namespace {

Corpus load_input_corpus(const RunConfig& config) {
  require_file(config.corpus_path, "corpus file");
  require_file(config.schema_path, "schema file");
  const MetadataSchema schema = MetadataSchema::load(config.schema_path);
  LoadOptions options;
  options.max_tokens = config.max_tokens;
  options.min_count = config.min_count;
  return load_corpus(config.corpus_path, schema, options);
}

TrainingConfig training_config(const RunConfig& config) {
  TrainingConfig cfg;
  cfg.omega_text = config.omega_text;
  cfg.omega_meta = config.omega_meta;
  cfg.adam.lr = config.lr;
  cfg.adam.beta1 = config.adam_beta1;
  cfg.adam.beta2 = config.adam_beta2;
  cfg.adam.epsilon = config.adam_epsilon;
  cfg.batch_size = config.batch_size;
  cfg.dropout = config.dropout;
  cfg.seed = derive_seed(config.seed, "shuffle");
  return cfg;
}

}  // namespace

void cmd_train_lda(const RunConfig& config) {
  const Corpus corpus = load_input_corpus(config);
  ensure_output_dir(config);
  OutputGuard guard;

  LdaConfig lda;
  lda.num_topics = config.num_topics;
  lda.alpha = config.lda_alpha;
  lda.beta = config.lda_beta;
  lda.iterations = config.lda_iterations;
  lda.seed = derive_seed(config.seed, "lda");

  SweepObserver observer;
  if (!config.quiet) {
    observer = [&](const SweepStats& stats) {
      if (stats.iteration == 1 || stats.iteration % 50 == 0 ||
          stats.iteration == lda.iterations) {
        std::cout << "lda iteration " << stats.iteration << " log-likelihood ";
        write_double(std::cout, stats.log_likelihood);
        std::cout << '\n';
      }
    };
  }
  const TopicModel model = train_lda(corpus, lda, observer);

  PhiTable phi;
  const std::uint64_t foldin_root = derive_seed(config.seed, "lda-foldin");
  for (const auto& doc : corpus.documents)
    phi.emplace(doc.id, infer_doc_topics(model, doc.tokens, config.fold_in_iters,
                                         derive_seed(foldin_root, doc.id)));

  save_topic_model(model, guard.track(config.resolve(config.topic_model_path,
                                                     "topic_model.json")));
  save_phi_table(phi, model.num_topics,
                 guard.track(config.resolve(config.phi_path, "phi_targets.tsv")));
  guard.release();
}

void cmd_train(const RunConfig& config) {
  const Corpus corpus = load_input_corpus(config);
  const std::string phi_path = config.resolve(config.phi_path, "phi_targets.tsv");
  if (!fs::exists(phi_path))
    throw FileError("topic targets not found: " + phi_path +
                    " (run the train-lda command first)");
  std::size_t num_topics = 0;
  const PhiTable phi = load_phi_table(phi_path, &num_topics);
  if (num_topics < 2) throw Error("topic targets " + phi_path + ": bad topic count");

  const WordVectorTable* word_vectors = nullptr;
  WordVectorTable wv_storage;
  for (const auto& field : corpus.schema.fields) {
    if (field.encoding == FieldEncoding::word_vectors) {
      require_file(config.word_vectors_path, "word-vector file");
      wv_storage = load_word_vectors(config.word_vectors_path);
      word_vectors = &wv_storage;
      break;
    }
  }
  const PrecomputedTable* precomputed = nullptr;
  PrecomputedTable pre_storage;
  TextEncoder::Mode text_mode = TextEncoder::Mode::trainable;
  if (!config.precomputed_path.empty()) {
    require_file(config.precomputed_path, "precomputed embedding file");
    pre_storage = load_precomputed_embeddings(config.precomputed_path);
    precomputed = &pre_storage;
    text_mode = TextEncoder::Mode::precomputed;
  }

  FusionDims dims;
  dims.text_dim = config.text_dim;
  dims.word_dim = config.word_dim;
  dims.embed_dim = config.embed_dim;
  dims.num_topics = num_topics;

  FusionModel model = make_fusion_model(
      corpus, dims, text_mode, pooling_from_string(config.pooling), config.dropout,
      derive_seed(config.seed, "init"), word_vectors, precomputed);

  TrainingConfig train_cfg = training_config(config);
  train_cfg.epochs = effective_epochs(config, corpus.documents.size());

  const TargetTable targets = build_target_table(corpus, phi);
  const TrainReport report = train(corpus, targets, model, train_cfg);
  if (!config.quiet) {
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
      std::cout << "epoch " << (e + 1) << " text ";
      write_double(std::cout, report.epochs[e].text_loss);
      for (std::size_t p = 0; p < corpus.schema.fields.size(); ++p) {
        std::cout << " meta[" << corpus.schema.fields[p].name << "] ";
        write_double(std::cout, report.epochs[e].meta_loss[p]);
      }
      std::cout << " total ";
      write_double(std::cout, report.epochs[e].total);
      std::cout << '\n';
    }
  }

  ensure_output_dir(config);
  OutputGuard guard;
  save_model(model, guard.track(config.resolve(config.model_path, "model.bin")));
  save_loss_log(report, model.schema,
                guard.track(config.resolve(config.loss_log_path, "loss_log.csv")));
  guard.release();
}

namespace {

struct ClassificationRun {
  Corpus corpus;
  FusionModel model;
  EmbeddingSet embeddings;  // every document, corpus order, labels attached
  ExemplarSplit split;
  std::vector<Prediction> predictions;          // evaluation documents
  std::map<std::string, std::string> gold;      // evaluation documents
};

EmbeddingSet embed_corpus(const FusionModel& model, const Corpus& corpus) {
  EmbeddingSet set;
  set.ids.reserve(corpus.documents.size());
  set.matrix = nn::Matrix(corpus.documents.size(), model.embed_dim);
  set.labels.reserve(corpus.documents.size());
  for (std::size_t i = 0; i < corpus.documents.size(); ++i) {
    const Document& doc = corpus.documents[i];
    set.ids.push_back(doc.id);
    set.labels.push_back(doc.label);
    const nn::Vec z = embed_document(model, doc);
    std::copy(z.begin(), z.end(), set.matrix.row(i));
  }
  return set;
}

ClassificationRun run_classification(const RunConfig& config) {
  require_file(config.corpus_path, "corpus file");
  const std::string model_path = config.resolve(config.model_path, "model.bin");
  require_file(model_path, "model file");

  ClassificationRun run;
  run.model = load_model(model_path);
  run.corpus = load_corpus_with(config.corpus_path, run.model.schema, run.model.vocab,
                                run.model.max_tokens);
  run.embeddings = embed_corpus(run.model, run.corpus);
  run.split =
      split_exemplars(run.corpus, config.exemplar_fraction, derive_seed(config.seed, "split"));

  EmbeddingSet exemplars;
  exemplars.matrix = nn::Matrix(run.split.exemplar_ids.size(), run.model.embed_dim);
  for (std::size_t i = 0; i < run.split.exemplar_ids.size(); ++i) {
    const std::size_t idx = run.corpus.index_of(run.split.exemplar_ids[i]);
    exemplars.ids.push_back(run.split.exemplar_ids[i]);
    exemplars.labels.push_back(run.corpus.documents[idx].label);
    std::copy(run.embeddings.matrix.row(idx), run.embeddings.matrix.row(idx) + run.model.embed_dim,
              exemplars.matrix.row(i));
  }

  for (const auto& id : run.split.eval_ids) {
    const std::size_t idx = run.corpus.index_of(id);
    run.predictions.push_back(
        knn_classify(id, run.embeddings.row_vec(idx), exemplars, config.knn_k));
    run.gold.emplace(id, *run.corpus.documents[idx].label);
  }
  return run;
}

void write_predictions_csv(const std::vector<Prediction>& predictions,
                           const std::map<std::string, std::string>& gold,
                           const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write predictions: " + path);
  out << "doc_id,predicted,gold,neighbor_ids,neighbor_distances\n";
  for (const auto& pred : predictions) {
    out << pred.id << ',' << pred.label << ',' << gold.at(pred.id) << ',';
    for (std::size_t i = 0; i < pred.neighbor_ids.size(); ++i) {
      if (i) out << ';';
      out << pred.neighbor_ids[i];
    }
    out << ',';
    for (std::size_t i = 0; i < pred.neighbor_distances.size(); ++i) {
      if (i) out << ';';
      write_double(out, pred.neighbor_distances[i]);
    }
    out << '\n';
  }
}

}  // namespace

void cmd_embed(const RunConfig& config) {
  require_file(config.corpus_path, "corpus file");
  const std::string model_path = config.resolve(config.model_path, "model.bin");
  require_file(model_path, "model file");
  const FusionModel model = load_model(model_path);
  const Corpus corpus =
      load_corpus_with(config.corpus_path, model.schema, model.vocab, model.max_tokens);
  const EmbeddingSet set = embed_corpus(model, corpus);
  ensure_output_dir(config);
  OutputGuard guard;
  save_embeddings(set, guard.track(config.resolve(config.embeddings_path, "embeddings.tsv")));
  guard.release();
}

void cmd_classify(const RunConfig& config) {
  const ClassificationRun run = run_classification(config);
  ensure_output_dir(config);
  OutputGuard guard;
  write_predictions_csv(run.predictions, run.gold,
                        guard.track(config.resolve(config.predictions_path, "predictions.csv")));
  guard.release();
}

EvalOutcome cmd_evaluate(const RunConfig& config) {
  const ClassificationRun run = run_classification(config);
  EvalOutcome outcome;
  outcome.report = evaluate(run.predictions, run.gold);
  outcome.exemplar_count = run.split.exemplar_ids.size();
  outcome.eval_count = run.split.eval_ids.size();

  ensure_output_dir(config);
  OutputGuard guard;

  {
    const std::string path = guard.track(config.resolve(config.metrics_path, "metrics.txt"));
    std::ofstream out(path);
    if (!out) throw FileError("cannot write metrics: " + path);
    char buf[40];
    out << "exemplars " << outcome.exemplar_count << '\n';
    out << "evaluated " << outcome.eval_count << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", outcome.report.accuracy);
    out << "accuracy " << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", outcome.report.micro_f1);
    out << "micro_f1 " << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", outcome.report.macro_f1);
    out << "macro_f1 " << buf << '\n';
    out << "class precision recall f1 support\n";
    for (const auto& m : outcome.report.per_class) {
      out << m.label;
      std::snprintf(buf, sizeof(buf), " %.6f %.6f %.6f ", m.precision, m.recall, m.f1);
      out << buf << m.support << '\n';
    }
  }

  save_confusion_csv(confusion_matrix(run.predictions, run.gold),
                     guard.track(config.resolve(config.confusion_path, "confusion.csv")));

  {
    const PcaResult pca = pca_project(run.embeddings, 2);
    const std::string path = guard.track(config.resolve(config.pca_path, "pca.csv"));
    std::ofstream out(path);
    if (!out) throw FileError("cannot write PCA coordinates: " + path);
    out << "doc_id,x,y,label\n";
    for (std::size_t i = 0; i < run.embeddings.size(); ++i) {
      out << run.embeddings.ids[i] << ',';
      write_double(out, pca.coordinates(i, 0));
      out << ',';
      write_double(out, pca.coordinates(i, 1));
      out << ',' << (run.embeddings.labels[i] ? *run.embeddings.labels[i] : std::string())
          << '\n';
    }
  }

  if (config.overcluster_k > 0) {
    const KMeansResult clusters =
        kmeans(run.embeddings, config.overcluster_k, derive_seed(config.seed, "kmeans"));
    const std::string path = guard.track(config.resolve(config.clusters_path, "clusters.csv"));
    std::ofstream out(path);
    if (!out) throw FileError("cannot write clusters: " + path);
    out << "doc_id,cluster,label\n";
    for (std::size_t i = 0; i < run.embeddings.size(); ++i)
      out << run.embeddings.ids[i] << ',' << clusters.assignments[i] << ','
          << (run.embeddings.labels[i] ? *run.embeddings.labels[i] : std::string()) << '\n';
    const nn::Matrix dist = centroid_distances(clusters.centroids);
    const std::string dist_path = guard.track(
        config.resolve(config.clusters_path.empty() ? "" : config.clusters_path + ".centroids",
                       "centroid_distances.csv"));
    std::ofstream dout(dist_path);
    if (!dout) throw FileError("cannot write centroid distances: " + dist_path);
    for (std::size_t a = 0; a < dist.rows(); ++a) {
      for (std::size_t b = 0; b < dist.cols(); ++b) {
        if (b) dout << ',';
        write_double(dout, dist(a, b));
      }
      dout << '\n';
    }
  }

  if (!config.quiet) {
    std::cout << "evaluated " << outcome.eval_count << " documents against "
              << outcome.exemplar_count << " exemplars\n";
    char buf[96];
    std::snprintf(buf, sizeof(buf), "macro_f1 %.4f micro_f1 %.4f accuracy %.4f",
                  outcome.report.macro_f1, outcome.report.micro_f1, outcome.report.accuracy);
    std::cout << buf << '\n';
  }
  guard.release();
  return outcome;
}

void cmd_sweep_topics(const RunConfig& config, const std::vector<std::size_t>& k_values) {
  if (k_values.empty()) throw Error("sweep-topics: empty K list");
  ensure_output_dir(config);
  std::vector<std::pair<std::size_t, double>> rows;
  for (const std::size_t k : k_values) {
    RunConfig sub = config;
    sub.num_topics = k;
    sub.output_dir = (fs::path(config.output_dir) / ("sweep_k" + std::to_string(k))).string();
    sub.topic_model_path.clear();
    sub.phi_path.clear();
    sub.model_path.clear();
    sub.loss_log_path.clear();
    sub.metrics_path.clear();
    sub.confusion_path.clear();
    sub.pca_path.clear();
    sub.quiet = true;
    cmd_train_lda(sub);
    cmd_train(sub);
    const EvalOutcome outcome = cmd_evaluate(sub);
    rows.emplace_back(k, outcome.report.macro_f1);
    if (!config.quiet) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "K=%zu macro_f1 %.4f", k, outcome.report.macro_f1);
      std::cout << buf << '\n';
    }
  }
  OutputGuard guard;
  const std::string path = guard.track(config.resolve(config.sweep_path, "sweep_topics.csv"));
  std::ofstream out(path);
  if (!out) throw FileError("cannot write sweep results: " + path);
  out << "K,macro_f1\n";
  char buf[48];
  for (const auto& [k, f1] : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.6f", k, f1);
    out << buf << '\n';
  }
  guard.release();
}

void cmd_sweep_trainsize(const RunConfig& config, const std::vector<double>& fractions) {
  if (fractions.empty()) throw Error("sweep-trainsize: empty fraction list");
  ensure_output_dir(config);
  // Labels never enter the self-supervised objective, so one trained model
  // serves every fraction; rerunning training per point would reproduce the
  // same bytes from the shared seed.
  RunConfig base = config;
  base.output_dir = (fs::path(config.output_dir) / "sweep_trainsize").string();
  base.topic_model_path.clear();
  base.phi_path.clear();
  base.model_path.clear();
  base.loss_log_path.clear();
  base.quiet = true;
  cmd_train_lda(base);
  cmd_train(base);

  std::vector<std::pair<double, double>> rows;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    RunConfig sub = base;
    sub.exemplar_fraction = fractions[i];
    sub.output_dir = (fs::path(base.output_dir) / ("f" + std::to_string(i))).string();
    sub.model_path = base.resolve("", "model.bin");
    sub.metrics_path.clear();
    sub.confusion_path.clear();
    sub.pca_path.clear();
    const EvalOutcome outcome = cmd_evaluate(sub);
    rows.emplace_back(fractions[i], outcome.report.macro_f1);
    if (!config.quiet) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "fraction=%g macro_f1 %.4f", fractions[i],
                    outcome.report.macro_f1);
      std::cout << buf << '\n';
    }
  }
  OutputGuard guard;
  const std::string path =
      guard.track(config.resolve(config.sweep_path, "sweep_trainsize.csv"));
  std::ofstream out(path);
  if (!out) throw FileError("cannot write sweep results: " + path);
  out << "fraction,macro_f1\n";
  char buf[48];
  for (const auto& [f, f1] : rows) {
    std::snprintf(buf, sizeof(buf), "%g,%.6f", f, f1);
    out << buf << '\n';
  }
  guard.release();
}

}  // namespace docfuse
