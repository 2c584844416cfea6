#pragma once

// End-to-end commands shared by the CLI and the integration tests: LDA
// training with cached topic targets, fusion training, embedding,
// classification, evaluation, and the sweep experiments. All randomness
// flows from one root seed through named sub-seeds.

#include <map>
#include <string>
#include <vector>

#include "docfuse/classify.hpp"
#include "docfuse/objective.hpp"
#include "docfuse/topics.hpp"

namespace docfuse {

struct RunConfig {
  // Inputs.
  std::string corpus_path;
  std::string schema_path;
  std::string word_vectors_path;   // required only for word_vectors fields
  std::string precomputed_path;    // switches the text encoder to precomputed

  // Outputs (empty entries default under output_dir).
  std::string output_dir = "out";
  std::string topic_model_path;
  std::string phi_path;
  std::string model_path;
  std::string loss_log_path;
  std::string embeddings_path;
  std::string predictions_path;
  std::string metrics_path;
  std::string confusion_path;
  std::string pca_path;
  std::string clusters_path;
  std::string sweep_path;

  // Topic model.
  std::size_t num_topics = 50;
  double lda_alpha = -1.0;  // <= 0 selects 50/K
  double lda_beta = 0.01;
  std::size_t lda_iterations = 500;
  std::size_t fold_in_iters = 50;

  // Encoder dims.
  std::size_t text_dim = 64;
  std::size_t word_dim = 300;
  std::size_t embed_dim = 500;

  // Training.
  double lr = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 0;  // 0: 3 for small corpora, 1 above 5000 documents
  double dropout = 0.1;
  double omega_text = 1.0;
  std::map<std::string, double> omega_meta;

  // Classification.
  std::size_t knn_k = 10;
  double exemplar_fraction = 0.1;
  std::size_t overcluster_k = 0;  // 0 disables the KMeans analysis output

  // Shared.
  std::uint64_t seed = 42;
  std::string pooling = "unmasked_mean";
  std::size_t max_tokens = 0;  // 0: take the schema's
  std::int64_t min_count = 1;

  bool quiet = false;

  std::string resolve(const std::string& explicit_path, const std::string& default_name) const;
};

// Fills RunConfig fields from a JSON object; flags given on the command line
// are applied afterwards and win.
void apply_config_json(RunConfig& config, const std::string& path);

std::size_t effective_epochs(const RunConfig& config, std::size_t corpus_size);

// train-lda: topic model file plus the cached per-document topic targets.
void cmd_train_lda(const RunConfig& config);

// train: fusion model file plus the per-epoch loss log. Needs the phi
// sidecar produced by train-lda.
void cmd_train(const RunConfig& config);

// embed: embeddings file for every corpus document.
void cmd_embed(const RunConfig& config);

// classify: predictions CSV for the evaluation split.
void cmd_classify(const RunConfig& config);

struct EvalOutcome {
  EvalReport report;
  std::size_t exemplar_count = 0;
  std::size_t eval_count = 0;
};

// evaluate: metrics report, confusion CSV, PCA CSV (and optional KMeans
// over-clustering outputs).
EvalOutcome cmd_evaluate(const RunConfig& config);

// sweep-topics / sweep-trainsize: plot-ready CSVs, one pipeline evaluation
// per sweep point with the shared base seed.
void cmd_sweep_topics(const RunConfig& config, const std::vector<std::size_t>& k_values);
void cmd_sweep_trainsize(const RunConfig& config, const std::vector<double>& fractions);

}  // namespace docfuse
