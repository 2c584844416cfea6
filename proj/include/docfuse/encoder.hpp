#pragma once

// Fusion encoder: text encoder, per-field metadata encoders with masked mean
// pooling, and the projection that produces the final document embedding.

#include <map>
#include <string>
#include <vector>

#include "docfuse/corpus.hpp"
#include "docfuse/nn.hpp"

namespace docfuse {

// `unmasked_mean` divides the pooled sum by the number of unmasked positions,
// which makes embeddings independent of pad length. `paper_literal` divides
// by the full sequence length L_p instead, so the scale shrinks with padding;
// it is kept for fidelity experiments.
enum class PoolingMode { unmasked_mean, paper_literal };

PoolingMode pooling_from_string(const std::string& s);
std::string to_string(PoolingMode mode);

// Externally computed text embeddings: first line D_t, then
// "doc_id v1 ... v{D_t}" per line.
struct PrecomputedTable {
  std::size_t dim = 0;
  std::map<std::string, nn::Vec> vectors;
};
PrecomputedTable load_precomputed_embeddings(const std::string& path);
void save_precomputed_embeddings(const PrecomputedTable& table, const std::string& path);

// Word-vector file: header line "D", then "word v1 ... vD" per line.
struct WordVectorTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, nn::Vec> vectors;
};
WordVectorTable load_word_vectors(const std::string& path);

// Averages the vectors of the words in `text`; words absent from the table
// contribute zero vectors. No words at all yields the zero vector.
nn::Vec average_word_vectors(const WordVectorTable& table, const std::string& text);

struct TextEncoder {
  enum class Mode { trainable, precomputed };
  Mode mode = Mode::trainable;
  std::size_t text_dim = 0;  // D_t

  // trainable: mean word embedding through a two-layer head
  nn::Matrix word_embeddings;  // V x D_w
  nn::DenseLayer head1;        // D_w -> D_t, tanh
  nn::DenseLayer head2;        // D_t -> D_t, identity

  // precomputed: frozen lookup, no gradient ever flows into the table
  std::map<std::string, nn::Vec> table;
};

struct MetadataEncoder {
  FieldEncoding input = FieldEncoding::one_hot;
  std::size_t input_dim = 0;          // V^p (one_hot) or word-vector dim
  std::vector<nn::Vec> value_inputs;  // dense input per value id (word_vectors only)
  nn::DenseLayer l1;                  // input_dim -> D_p, tanh
  nn::DenseLayer l2;                  // D_p -> D_p, tanh
};

// All trainable state plus the corpus-side context (schema, vocabulary)
// needed to embed previously unseen documents with a saved model.
struct FusionModel {
  MetadataSchema schema;
  Vocabulary vocab;
  std::size_t max_tokens = 512;
  PoolingMode pooling = PoolingMode::unmasked_mean;
  double dropout_rate = 0.1;
  std::size_t embed_dim = 0;   // D_e
  std::size_t num_topics = 0;  // K

  TextEncoder text;
  std::vector<MetadataEncoder> meta;  // schema field order

  nn::Matrix fusion_weight;             // (D_t + sum_p D_p) x D_e, applied transposed
  nn::Matrix topic_weight;              // D_e x K, applied transposed
  std::vector<nn::Matrix> meta_weight;  // per field: D_e x V^p, applied transposed

  std::size_t concat_dim() const;
};

struct FusionDims {
  std::size_t text_dim = 64;    // D_t (trainable mode; precomputed takes the file's)
  std::size_t word_dim = 300;   // D_w
  std::size_t embed_dim = 500;  // D_e
  std::size_t num_topics = 50;  // K
};

FusionModel make_fusion_model(const Corpus& corpus, const FusionDims& dims,
                              TextEncoder::Mode text_mode, PoolingMode pooling,
                              double dropout_rate, std::uint64_t init_seed,
                              const WordVectorTable* word_vectors = nullptr,
                              const PrecomputedTable* precomputed = nullptr);

struct FieldPositionCache {
  std::size_t value_id = 0;
  nn::LayerCache l1, l2;
};
struct FieldCache {
  std::vector<FieldPositionCache> positions;  // unmasked positions only
  nn::Vec pooled;
  double denom = 1.0;
};
struct EmbedCache {
  nn::Vec text_mean;  // D_w, trainable mode
  nn::LayerCache head1, head2;
  nn::Vec phi;  // D_t
  std::vector<FieldCache> fields;
  nn::Vec concat;   // pre-dropout
  nn::Vec mask;     // dropout scale factors; empty when inference
  nn::Vec dropped;  // what the fusion projection saw
};

// phi: trainable mode runs the mean word embedding (zero vector for empty
// text) through the head; precomputed mode returns the stored vector.
nn::Vec encode_text(const FusionModel& model, const Document& doc,
                    EmbedCache* cache = nullptr);

// psi_p: per-position encodings of unmasked values, pooled per the model's
// pooling mode. A fully padded field yields the zero vector.
nn::Vec encode_metadata(const FusionModel& model, const Document& doc, std::size_t field,
                        FieldCache* cache = nullptr);

// z = W_z^T (phi ⊕ psi_1 ⊕ ... ⊕ psi_P); dropout on the concatenation only
// when training is true.
nn::Vec embed_document(const FusionModel& model, const Document& doc, bool training = false,
                       Rng* dropout_rng = nullptr, EmbedCache* cache = nullptr);

struct FusionGradients {
  nn::Matrix word_embeddings;
  nn::LayerGrads head1, head2;
  struct FieldGrads {
    nn::LayerGrads l1, l2;
  };
  std::vector<FieldGrads> meta;
  nn::Matrix fusion_weight;
  nn::Matrix topic_weight;
  std::vector<nn::Matrix> meta_weight;

  void zero();
};

FusionGradients make_gradients(const FusionModel& model);

// Backpropagates dL/dz through the fusion projection, pooling, metadata
// encoders and (in trainable mode) the text path, accumulating into `grads`.
void backprop_document(const FusionModel& model, const Document& doc,
                       const EmbedCache& cache, const nn::Vec& dz, FusionGradients& grads);

// Parameter blocks in a fixed order (grad_blocks matches it). The
// precomputed text table is not a parameter and never appears here.
std::vector<nn::ParamBlock> param_blocks(FusionModel& model);
std::vector<nn::ParamBlock> grad_blocks(FusionGradients& grads, const FusionModel& model);

// Versioned binary format; load(save(m)) reproduces every parameter
// bit-exactly along with the schema, vocabulary, and dims.
void save_model(const FusionModel& model, const std::string& path);
FusionModel load_model(const std::string& path);

}  // namespace docfuse
