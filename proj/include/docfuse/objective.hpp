#pragma once

// Self-supervised losses and the training loop: KL divergence of the topic
// projection against cached topic targets, multi-label binary cross-entropy
// for metadata reconstruction, and their weighted sum optimized with Adam.

#include <map>
#include <string>
#include <vector>

#include "docfuse/encoder.hpp"
#include "docfuse/topics.hpp"

namespace docfuse {

struct TrainingConfig {
  double omega_text = 1.0;
  std::map<std::string, double> omega_meta;  // field -> weight; absent fields use 1.0
  nn::AdamConfig adam;                       // lr 5e-5, eps 1e-8 defaults
  std::size_t batch_size = 8;
  std::size_t epochs = 3;
  double dropout = 0.1;
  std::uint64_t seed = 0;

  double omega_for(const std::string& field) const;
  void validate(const MetadataSchema& schema) const;
};

struct LossBreakdown {
  double text_loss = 0.0;
  std::vector<double> meta_loss;  // per field, batch means
  double total = 0.0;
  // Per-example intermediates kept for tests: post-softmax topic projections
  // and raw metadata decoder outputs.
  std::vector<nn::Vec> lambdas;
  std::vector<std::vector<nn::Vec>> zetas;
};

// lambda = softmax(W_t^T z); strictly positive, sums to 1.
nn::Vec topic_projection(const nn::Vec& z, const nn::Matrix& topic_weight);

// KL(phi || lambda) with 0*log0 := 0; lambda is clamped at 1e-12 inside the
// log only. Nonnegative for distributions.
double text_loss(const nn::Vec& phi, const nn::Vec& lambda);

// Multi-label binary cross-entropy of logits `zeta` against y in {0,1}^V,
// computed in the numerically stable form.
double metadata_loss(const nn::Vec& y, const nn::Vec& zeta);

// Cached supervision for every document: topic target plus per-field
// reconstruction targets.
struct TargetTable {
  std::map<std::string, nn::Vec> phi;
  std::map<std::string, ReconstructionTarget> recon;
};
TargetTable build_target_table(const Corpus& corpus, const PhiTable& phi_table);

// Per-example losses averaged over the batch, then weighted. When `grads` is
// given, accumulates the full analytic gradient (zeroing first). Dropout is
// active only when training is true.
LossBreakdown total_loss(const FusionModel& model,
                         const std::vector<const Document*>& batch,
                         const TargetTable& targets, const TrainingConfig& config,
                         bool training = false, Rng* dropout_rng = nullptr,
                         FusionGradients* grads = nullptr);

struct EpochLoss {
  double text_loss = 0.0;
  std::vector<double> meta_loss;
  double total = 0.0;
};
struct TrainReport {
  std::vector<EpochLoss> epochs;
};

// Mini-batch Adam over seeded shuffles; deterministic given the config.
// Aborts with the offending document id when a loss turns non-finite.
TrainReport train(const Corpus& corpus, const TargetTable& targets, FusionModel& model,
                  const TrainingConfig& config);

// CSV: epoch,text_loss,meta_loss_<field>...,total
void save_loss_log(const TrainReport& report, const MetadataSchema& schema,
                   const std::string& path);

}  // namespace docfuse
