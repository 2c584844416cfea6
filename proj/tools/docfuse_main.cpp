// docfuse command-line interface: schema-driven ingestion, LDA surrogate
// targets, fusion training, embedding, KNN classification, evaluation, and
// the sweep experiments.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "docfuse/error.hpp"
#include "docfuse/pipeline.hpp"

namespace {

// Parses repeatable "field=weight" assignments.
void apply_omega_meta(docfuse::RunConfig& config, const std::vector<std::string>& entries) {
  for (const auto& entry : entries) {
    const auto pos = entry.find('=');
    if (pos == std::string::npos || pos == 0)
      throw docfuse::Error("--omega-meta expects <field>=<weight>, got \"" + entry + "\"");
    const std::string field = entry.substr(0, pos);
    try {
      config.omega_meta[field] = std::stod(entry.substr(pos + 1));
    } catch (const std::exception&) {
      throw docfuse::Error("--omega-meta expects a numeric weight in \"" + entry + "\"");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  docfuse::RunConfig config;

  // The JSON config is applied before flag binding so that explicit flags win.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    try {
      if (arg == "--config" && i + 1 < argc) {
        docfuse::apply_config_json(config, argv[i + 1]);
      } else if (arg.rfind("--config=", 0) == 0) {
        docfuse::apply_config_json(config, arg.substr(9));
      }
    } catch (const docfuse::FileError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    }
  }

  CLI::App app{"Self-supervised document embeddings from latent topics and metadata"};
  app.fallthrough();
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values");

  app.add_option("--corpus", config.corpus_path, "corpus JSON Lines file");
  app.add_option("--schema", config.schema_path, "metadata schema JSON file");
  app.add_option("--word-vectors", config.word_vectors_path,
                 "word-vector file for word_vectors fields");
  app.add_option("--precomputed-embeddings", config.precomputed_path,
                 "precomputed text embeddings (switches the text encoder to lookup mode)");
  app.add_option("--out-dir", config.output_dir, "directory for default output paths");
  app.add_option("--topic-model", config.topic_model_path, "topic model output/input path");
  app.add_option("--phi-targets", config.phi_path, "cached topic target sidecar path");
  app.add_option("--model", config.model_path, "fusion model output/input path");
  app.add_option("--loss-log", config.loss_log_path, "per-epoch loss CSV path");
  app.add_option("--embeddings", config.embeddings_path, "embeddings output path");
  app.add_option("--predictions", config.predictions_path, "predictions CSV path");
  app.add_option("--metrics", config.metrics_path, "metrics report path");
  app.add_option("--confusion", config.confusion_path, "confusion matrix CSV path");
  app.add_option("--pca", config.pca_path, "2-D PCA coordinates CSV path");
  app.add_option("--clusters", config.clusters_path, "KMeans cluster CSV path");
  app.add_option("--sweep-out", config.sweep_path, "sweep results CSV path");

  app.add_option("--topics,-K", config.num_topics, "number of LDA topics");
  app.add_option("--lda-alpha", config.lda_alpha, "document-topic prior (<=0 selects 50/K)");
  app.add_option("--lda-beta", config.lda_beta, "topic-word prior");
  app.add_option("--lda-iterations", config.lda_iterations, "Gibbs sweeps");
  app.add_option("--fold-in-iters", config.fold_in_iters, "fold-in sweeps per document");

  app.add_option("--text-dim", config.text_dim, "text embedding size D_t (trainable mode)");
  app.add_option("--word-dim", config.word_dim, "word embedding size D_w");
  app.add_option("--embed-dim", config.embed_dim, "final embedding size D_e");

  app.add_option("--lr", config.lr, "Adam learning rate");
  app.add_option("--beta1", config.adam_beta1, "Adam beta1");
  app.add_option("--beta2", config.adam_beta2, "Adam beta2");
  app.add_option("--epsilon", config.adam_epsilon, "Adam epsilon");
  app.add_option("--batch-size", config.batch_size, "mini-batch size");
  app.add_option("--epochs", config.epochs,
                 "training epochs (0: 3 for small corpora, 1 above 5000 documents)");
  app.add_option("--dropout", config.dropout, "dropout rate on the fused vector");
  app.add_option("--omega-text", config.omega_text, "weight of the topic loss");
  std::vector<std::string> omega_meta_entries;
  app.add_option("--omega-meta", omega_meta_entries,
                 "per-field reconstruction weight as <field>=<weight>")
      ->take_all();

  app.add_option("--knn-k", config.knn_k, "number of neighbors");
  app.add_option("--exemplar-fraction", config.exemplar_fraction,
                 "fraction of documents used as labeled exemplars");
  app.add_option("--overcluster", config.overcluster_k,
                 "evaluate only: KMeans over-clustering size (0 disables)");

  app.add_option("--seed", config.seed, "root seed for every stochastic component");
  app.add_option("--pooling", config.pooling, "metadata pooling mode")
      ->check(CLI::IsMember({"unmasked_mean", "paper_literal"}));
  app.add_option("--max-tokens", config.max_tokens, "token truncation (0: schema value)");
  app.add_option("--min-count", config.min_count, "tokens rarer than this map to UNK");
  app.add_flag("--quiet", config.quiet, "suppress progress output");

  CLI::App* cmd_train_lda = app.add_subcommand("train-lda", "train the LDA topic model");
  CLI::App* cmd_train = app.add_subcommand("train", "train the fusion encoder");
  CLI::App* cmd_embed = app.add_subcommand("embed", "embed every corpus document");
  CLI::App* cmd_classify = app.add_subcommand("classify", "KNN-classify the evaluation split");
  CLI::App* cmd_evaluate =
      app.add_subcommand("evaluate", "classification metrics, confusion matrix, PCA export");
  CLI::App* cmd_sweep_topics =
      app.add_subcommand("sweep-topics", "macro-F1 across topic counts");
  CLI::App* cmd_sweep_trainsize =
      app.add_subcommand("sweep-trainsize", "macro-F1 across exemplar fractions");

  std::vector<std::size_t> k_list;
  cmd_sweep_topics->add_option("--k-list", k_list, "topic counts to sweep")
      ->delimiter(',');
  std::vector<double> fraction_list;
  cmd_sweep_trainsize->add_option("--fraction-list", fraction_list, "exemplar fractions to sweep")
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    apply_omega_meta(config, omega_meta_entries);
    if (cmd_train_lda->parsed()) {
      docfuse::cmd_train_lda(config);
    } else if (cmd_train->parsed()) {
      docfuse::cmd_train(config);
    } else if (cmd_embed->parsed()) {
      docfuse::cmd_embed(config);
    } else if (cmd_classify->parsed()) {
      docfuse::cmd_classify(config);
    } else if (cmd_evaluate->parsed()) {
      docfuse::cmd_evaluate(config);
    } else if (cmd_sweep_topics->parsed()) {
      docfuse::cmd_sweep_topics(config, k_list);
    } else if (cmd_sweep_trainsize->parsed()) {
      docfuse::cmd_sweep_trainsize(config, fraction_list);
    }
  } catch (const docfuse::FileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
