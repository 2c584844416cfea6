#pragma once

// Multi-part document ingestion: tokenization, vocabulary and value-set
// construction, padded/masked metadata sequences, reconstruction targets,
// and the exemplar/evaluation split.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "docfuse/rng.hpp"

namespace docfuse {

// Shared rule for text and metadata value strings: lowercase, split on
// Unicode whitespace, strip leading/trailing punctuation ('#tag' -> 'tag').
// Tokens that end up empty are dropped.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kUnkId = 0;
  static constexpr std::size_t kPadId = 1;

  Vocabulary();

  std::size_t size() const { return tokens_.size(); }
  // kUnkId when the token is absent.
  std::size_t id_of(const std::string& token) const;
  const std::string& token_of(std::size_t id) const { return tokens_[id]; }
  std::int64_t count_of(std::size_t id) const { return counts_[id]; }

  std::size_t add(const std::string& token, std::int64_t count);
  void add_count(std::size_t id, std::int64_t delta) { counts_[id] += delta; }

  bool operator==(const Vocabulary& other) const {
    return tokens_ == other.tokens_ && counts_ == other.counts_;
  }

 private:
  std::vector<std::string> tokens_;  // id -> token
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, std::size_t> ids_;
};

enum class FieldEncoding { one_hot, word_vectors };

// One metadata field: its value set Omega^p (indices 0/1 reserved for
// UNK/PAD), sequence length L_p and embedding size D_p.
struct FieldSpec {
  std::string name;
  FieldEncoding encoding = FieldEncoding::one_hot;
  std::size_t max_len = 1;     // L_p
  std::size_t embed_dim = 50;  // D_p
  std::vector<std::string> values;  // index -> value string

  std::size_t value_count() const { return values.size(); }  // V^p
  std::size_t value_id(const std::string& v) const;          // UNK when absent
  void add_value(const std::string& v);
  void rebuild_index();

  bool operator==(const FieldSpec& other) const {
    return name == other.name && encoding == other.encoding && max_len == other.max_len &&
           embed_dim == other.embed_dim && values == other.values;
  }

 private:
  std::unordered_map<std::string, std::size_t> value_ids_;
};

struct MetadataSchema {
  std::vector<FieldSpec> fields;
  std::size_t max_tokens = 512;  // T
  bool finalized = false;

  // Schema file: {"fields":[{"name","encoding","max_len","embed_dim"}],
  // "max_tokens": int}. A field may optionally declare "values".
  static MetadataSchema load(const std::string& path);

  const FieldSpec* find(const std::string& name) const;
  std::size_t field_index(const std::string& name) const;  // throws when absent
  void validate() const;
};

struct FieldValues {
  std::vector<std::size_t> indices;     // length L_p, PAD at padded slots
  std::vector<std::uint8_t> mask;       // gamma_p, 1 at real values
  std::vector<std::string> raw_values;  // value strings actually encoded

  std::size_t active_count() const;
};

struct Document {
  std::string id;
  std::string text;
  std::vector<std::size_t> tokens;      // vocabulary ids, length <= T
  std::vector<FieldValues> metadata;    // schema field order
  std::optional<std::string> label;
};

struct Corpus {
  MetadataSchema schema;  // finalized
  Vocabulary vocab;
  std::vector<Document> documents;

  std::size_t total_tokens() const;
  const Document* find(const std::string& id) const;
  std::size_t index_of(const std::string& id) const;  // throws when absent

  void rebuild_index();

 private:
  std::unordered_map<std::string, std::size_t> id_index_;
};

struct LoadOptions {
  std::size_t max_tokens = 0;   // 0: take the schema's max_tokens
  std::int64_t min_count = 1;   // tokens rarer than this map to UNK
};

// Corpus file: JSON Lines, one object per line:
//   {"id": str, "text": str, "metadata": {field: [str, ...]}, "label": str|null}
// Builds the vocabulary and finalizes value sets (sorted, after UNK/PAD).
Corpus load_corpus(const std::string& path, const MetadataSchema& schema,
                   const LoadOptions& options = {});

// Re-ingest a corpus file against an already-finalized schema and vocabulary
// (unknown tokens and values map to UNK). Used when embedding with a trained
// model.
Corpus load_corpus_with(const std::string& path, const MetadataSchema& finalized,
                        const Vocabulary& vocab, std::size_t max_tokens);

// Writes the same JSON Lines format load_corpus reads.
void save_corpus(const Corpus& corpus, const std::string& path);

// y_p in {0,1}^{V^p}: 1 exactly where a value occurs at an unmasked position.
struct ReconstructionTarget {
  std::vector<std::vector<double>> fields;
};

ReconstructionTarget build_targets(const Document& doc, const MetadataSchema& schema);

struct ExemplarSplit {
  std::vector<std::string> exemplar_ids;
  std::vector<std::string> eval_ids;
};

// Stratified by label with largest-remainder allocation; every label with at
// least 2 documents contributes at least one exemplar (the overall count can
// exceed round(fraction*N) when the fraction is very small relative to the
// number of labels). Deterministic given the seed.
ExemplarSplit split_exemplars(const Corpus& corpus, double fraction, std::uint64_t seed);

}  // namespace docfuse
