#include "docfuse/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "docfuse/error.hpp"

namespace docfuse {

double TrainingConfig::omega_for(const std::string& field) const {
  const auto it = omega_meta.find(field);
  return it == omega_meta.end() ? 1.0 : it->second;
}

void TrainingConfig::validate(const MetadataSchema& schema) const {
  if (batch_size < 1) throw Error("training config: batch_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw Error("training config: dropout must be in [0, 1)");
  if (omega_text < 0.0) throw Error("training config: omega_text must be >= 0");
  double weight_sum = omega_text;
  for (const auto& f : schema.fields) {
    const double w = omega_for(f.name);
    if (w < 0.0) throw Error("training config: omega for field " + f.name + " must be >= 0");
    weight_sum += w;
  }
  for (const auto& [name, w] : omega_meta) {
    (void)w;
    if (!schema.find(name))
      throw Error("training config: omega for unknown field " + name);
  }
  if (weight_sum <= 0.0) throw Error("training config: at least one omega must be positive");
}

nn::Vec topic_projection(const nn::Vec& z, const nn::Matrix& topic_weight) {
  if (z.size() != topic_weight.rows()) throw Error("topic_projection: shape mismatch");
  return nn::softmax(nn::matvec_t(topic_weight, z));
}

double text_loss(const nn::Vec& phi, const nn::Vec& lambda) {
  if (phi.size() != lambda.size()) throw Error("text_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < phi.size(); ++k) {
    if (phi[k] <= 0.0) continue;  // 0*log0 := 0
    const double lk = std::max(lambda[k], 1e-12);
    loss += phi[k] * std::log(phi[k] / lk);
  }
  return loss;
}

double metadata_loss(const nn::Vec& y, const nn::Vec& zeta) {
  if (y.size() != zeta.size()) throw Error("metadata_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t v = 0; v < y.size(); ++v) {
    // max(zeta,0) - zeta*y + log(1+exp(-|zeta|))
    const double zt = zeta[v];
    loss += std::max(zt, 0.0) - zt * y[v] + std::log1p(std::exp(-std::abs(zt)));
  }
  return loss;
}

TargetTable build_target_table(const Corpus& corpus, const PhiTable& phi_table) {
  TargetTable targets;
  for (const auto& doc : corpus.documents) {
    const auto it = phi_table.find(doc.id);
    if (it == phi_table.end())
      throw Error("missing topic target for document " + doc.id);
    targets.phi.emplace(doc.id, it->second);
    targets.recon.emplace(doc.id, build_targets(doc, corpus.schema));
  }
  return targets;
}

LossBreakdown total_loss(const FusionModel& model,
                         const std::vector<const Document*>& batch,
                         const TargetTable& targets, const TrainingConfig& config,
                         bool training, Rng* dropout_rng, FusionGradients* grads) {
  if (batch.empty()) throw Error("total_loss: empty batch");
  const std::size_t num_fields = model.schema.fields.size();

  LossBreakdown breakdown;
  breakdown.meta_loss.assign(num_fields, 0.0);
  if (grads) grads->zero();

  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  for (const Document* doc : batch) {
    const auto phi_it = targets.phi.find(doc->id);
    const auto recon_it = targets.recon.find(doc->id);
    if (phi_it == targets.phi.end() || recon_it == targets.recon.end())
      throw Error("missing target for document " + doc->id);
    const nn::Vec& phi_target = phi_it->second;
    if (phi_target.size() != model.num_topics)
      throw Error("topic target for document " + doc->id + " has wrong length");

    EmbedCache cache;
    const nn::Vec z = embed_document(model, *doc, training, dropout_rng, &cache);

    nn::Vec lambda = topic_projection(z, model.topic_weight);
    const double doc_text_loss = text_loss(phi_target, lambda);
    breakdown.text_loss += doc_text_loss * inv_batch;

    std::vector<nn::Vec> doc_zetas(num_fields);
    for (std::size_t p = 0; p < num_fields; ++p) {
      doc_zetas[p] = nn::matvec_t(model.meta_weight[p], z);
      const double loss_p = metadata_loss(recon_it->second.fields[p], doc_zetas[p]);
      breakdown.meta_loss[p] += loss_p * inv_batch;
      if (!std::isfinite(loss_p))
        throw Error("non-finite loss at document " + doc->id);
    }
    if (!std::isfinite(doc_text_loss))
      throw Error("non-finite loss at document " + doc->id);

    if (grads) {
      // d(text)/dlogits = lambda - phi for the softmax-KL composition.
      nn::Vec dz(model.embed_dim, 0.0);
      {
        nn::Vec dlogits(model.num_topics);
        const double scale = config.omega_text * inv_batch;
        for (std::size_t k = 0; k < model.num_topics; ++k)
          dlogits[k] = scale * (lambda[k] - phi_target[k]);
        nn::add_outer(grads->topic_weight, z, dlogits);
        const nn::Vec dz_text = nn::matvec(model.topic_weight, dlogits);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_text[i];
      }
      for (std::size_t p = 0; p < num_fields; ++p) {
        const nn::Vec& y = recon_it->second.fields[p];
        const double scale = config.omega_for(model.schema.fields[p].name) * inv_batch;
        nn::Vec dzeta(y.size());
        for (std::size_t v = 0; v < y.size(); ++v)
          dzeta[v] = scale * (nn::sigmoid(doc_zetas[p][v]) - y[v]);
        nn::add_outer(grads->meta_weight[p], z, dzeta);
        const nn::Vec dz_meta = nn::matvec(model.meta_weight[p], dzeta);
        for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_meta[i];
      }
      backprop_document(model, *doc, cache, dz, *grads);
    }

    breakdown.lambdas.push_back(std::move(lambda));
    breakdown.zetas.push_back(std::move(doc_zetas));
  }

  breakdown.total = config.omega_text * breakdown.text_loss;
  for (std::size_t p = 0; p < num_fields; ++p)
    breakdown.total += config.omega_for(model.schema.fields[p].name) * breakdown.meta_loss[p];
  return breakdown;
}

TrainReport train(const Corpus& corpus, const TargetTable& targets, FusionModel& model,
                  const TrainingConfig& config) {
  config.validate(model.schema);
  if (corpus.documents.empty()) throw Error("train: empty corpus");

  model.dropout_rate = config.dropout;  // the config is authoritative for training

  std::vector<nn::ParamBlock> params = param_blocks(model);
  FusionGradients grads = make_gradients(model);
  std::vector<nn::ParamBlock> gblocks = grad_blocks(grads, model);
  nn::AdamState adam(params, config.adam);

  Rng rng(derive_seed(config.seed, "train"));
  std::vector<std::size_t> order(corpus.documents.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  const std::size_t num_fields = model.schema.fields.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_vec(order, rng);
    EpochLoss epoch_loss;
    epoch_loss.meta_loss.assign(num_fields, 0.0);
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<const Document*> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(&corpus.documents[order[i]]);
      const LossBreakdown breakdown =
          total_loss(model, batch, targets, config, /*training=*/true, &rng, &grads);
      adam.step(params, gblocks);
      epoch_loss.text_loss += breakdown.text_loss;
      for (std::size_t p = 0; p < num_fields; ++p)
        epoch_loss.meta_loss[p] += breakdown.meta_loss[p];
      epoch_loss.total += breakdown.total;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    epoch_loss.text_loss *= inv;
    for (auto& m : epoch_loss.meta_loss) m *= inv;
    epoch_loss.total *= inv;
    report.epochs.push_back(std::move(epoch_loss));
  }
  return report;
}

void save_loss_log(const TrainReport& report, const MetadataSchema& schema,
                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write loss log: " + path);
  out << "epoch,text_loss";
  for (const auto& f : schema.fields) out << ",meta_loss_" << f.name;
  out << ",total\n";
  char buf[40];
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const EpochLoss& row = report.epochs[e];
    out << (e + 1);
    std::snprintf(buf, sizeof(buf), "%.17g", row.text_loss);
    out << ',' << buf;
    for (const double m : row.meta_loss) {
      std::snprintf(buf, sizeof(buf), "%.17g", m);
      out << ',' << buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g", row.total);
    out << ',' << buf << '\n';
  }
}

}  // namespace docfuse
