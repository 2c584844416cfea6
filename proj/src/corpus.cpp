#include "docfuse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "docfuse/error.hpp"
#include "json.hpp"

namespace docfuse {

namespace {

using nlohmann::json;

struct Codepoint {
  char32_t value;
  std::size_t length;  // bytes consumed
};

// Minimal UTF-8 decoding; invalid bytes are passed through one at a time so
// ingestion never fails on stray bytes.
Codepoint decode_utf8(std::string_view s, std::size_t pos) {
  const unsigned char b0 = static_cast<unsigned char>(s[pos]);
  if (b0 < 0x80) return {b0, 1};
  auto cont = [&](std::size_t i) {
    return pos + i < s.size() &&
           (static_cast<unsigned char>(s[pos + i]) & 0xC0) == 0x80;
  };
  if ((b0 & 0xE0) == 0xC0 && cont(1)) {
    const char32_t cp = ((b0 & 0x1Fu) << 6) | (static_cast<unsigned char>(s[pos + 1]) & 0x3Fu);
    return {cp, 2};
  }
  if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
    const char32_t cp = ((b0 & 0x0Fu) << 12) |
                        ((static_cast<unsigned char>(s[pos + 1]) & 0x3Fu) << 6) |
                        (static_cast<unsigned char>(s[pos + 2]) & 0x3Fu);
    return {cp, 3};
  }
  if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
    const char32_t cp = ((b0 & 0x07u) << 18) |
                        ((static_cast<unsigned char>(s[pos + 1]) & 0x3Fu) << 12) |
                        ((static_cast<unsigned char>(s[pos + 2]) & 0x3Fu) << 6) |
                        (static_cast<unsigned char>(s[pos + 3]) & 0x3Fu);
    return {cp, 4};
  }
  return {b0, 1};
}

bool is_space_cp(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_punct_cp(char32_t cp) {
  if (cp > 0x7F) return false;
  const char c = static_cast<char>(cp);
  return std::ispunct(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    // Skip whitespace.
    while (pos < text.size()) {
      const Codepoint cp = decode_utf8(text, pos);
      if (!is_space_cp(cp.value)) break;
      pos += cp.length;
    }
    if (pos >= text.size()) break;
    // Collect the run up to the next whitespace.
    std::vector<Codepoint> run;
    std::size_t run_start = pos;
    while (pos < text.size()) {
      const Codepoint cp = decode_utf8(text, pos);
      if (is_space_cp(cp.value)) break;
      run.push_back(cp);
      pos += cp.length;
    }
    // Strip leading/trailing punctuation.
    std::size_t first = 0, last = run.size();
    while (first < last && is_punct_cp(run[first].value)) ++first;
    while (last > first && is_punct_cp(run[last - 1].value)) --last;
    if (first >= last) continue;
    std::string token;
    std::size_t offset = run_start;
    for (std::size_t i = 0; i < run.size(); ++i) {
      if (i >= first && i < last) {
        for (std::size_t b = 0; b < run[i].length; ++b) {
          char c = text[offset + b];
          if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
          token.push_back(c);
        }
      }
      offset += run[i].length;
    }
    tokens.push_back(std::move(token));
  }
  return tokens;
}

Vocabulary::Vocabulary() {
  add("<unk>", 0);
  add("<pad>", 0);
}

std::size_t Vocabulary::id_of(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

std::size_t Vocabulary::add(const std::string& token, std::int64_t count) {
  const auto it = ids_.find(token);
  if (it != ids_.end()) {
    counts_[it->second] += count;
    return it->second;
  }
  const std::size_t id = tokens_.size();
  tokens_.push_back(token);
  counts_.push_back(count);
  ids_.emplace(token, id);
  return id;
}

std::size_t FieldSpec::value_id(const std::string& v) const {
  const auto it = value_ids_.find(v);
  return it == value_ids_.end() ? Vocabulary::kUnkId : it->second;
}

void FieldSpec::add_value(const std::string& v) {
  if (value_ids_.count(v)) return;
  value_ids_.emplace(v, values.size());
  values.push_back(v);
}

void FieldSpec::rebuild_index() {
  value_ids_.clear();
  for (std::size_t i = 0; i < values.size(); ++i) value_ids_.emplace(values[i], i);
}

MetadataSchema MetadataSchema::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open schema file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("schema file " + path + ": " + e.what());
  }
  MetadataSchema schema;
  schema.max_tokens = j.value("max_tokens", 512u);
  if (!j.contains("fields") || !j["fields"].is_array())
    throw Error("schema file " + path + ": missing \"fields\" array");
  for (const auto& f : j["fields"]) {
    FieldSpec spec;
    spec.name = f.at("name").get<std::string>();
    const std::string enc = f.at("encoding").get<std::string>();
    if (enc == "one_hot") {
      spec.encoding = FieldEncoding::one_hot;
    } else if (enc == "word_vectors") {
      spec.encoding = FieldEncoding::word_vectors;
    } else {
      throw Error("schema field " + spec.name + ": unknown encoding \"" + enc + "\"");
    }
    spec.max_len = f.at("max_len").get<std::size_t>();
    spec.embed_dim = f.at("embed_dim").get<std::size_t>();
    if (f.contains("values")) {
      spec.add_value("<unk>");
      spec.add_value("<pad>");
      for (const auto& v : f["values"]) spec.add_value(v.get<std::string>());
    }
    schema.fields.push_back(std::move(spec));
  }
  schema.validate();
  return schema;
}

const FieldSpec* MetadataSchema::find(const std::string& name) const {
  for (const auto& f : fields)
    if (f.name == name) return &f;
  return nullptr;
}

std::size_t MetadataSchema::field_index(const std::string& name) const {
  for (std::size_t i = 0; i < fields.size(); ++i)
    if (fields[i].name == name) return i;
  throw Error("unknown metadata field: " + name);
}

void MetadataSchema::validate() const {
  if (max_tokens < 1) throw Error("schema: max_tokens must be >= 1");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const auto& f = fields[i];
    if (f.name.empty()) throw Error("schema: empty field name");
    if (f.max_len < 1) throw Error("schema field " + f.name + ": max_len must be >= 1");
    if (f.embed_dim < 1) throw Error("schema field " + f.name + ": embed_dim must be >= 1");
    for (std::size_t k = i + 1; k < fields.size(); ++k)
      if (fields[k].name == f.name) throw Error("schema: duplicate field name " + f.name);
  }
}

std::size_t FieldValues::active_count() const {
  std::size_t n = 0;
  for (const auto m : mask) n += m;
  return n;
}

std::size_t Corpus::total_tokens() const {
  std::size_t n = 0;
  for (const auto& d : documents) n += d.tokens.size();
  return n;
}

const Document* Corpus::find(const std::string& id) const {
  const auto it = id_index_.find(id);
  return it == id_index_.end() ? nullptr : &documents[it->second];
}

std::size_t Corpus::index_of(const std::string& id) const {
  const auto it = id_index_.find(id);
  if (it == id_index_.end()) throw Error("unknown document id: " + id);
  return it->second;
}

void Corpus::rebuild_index() {
  id_index_.clear();
  for (std::size_t i = 0; i < documents.size(); ++i) {
    const auto [it, inserted] = id_index_.emplace(documents[i].id, i);
    (void)it;
    if (!inserted) throw Error("duplicate document id: " + documents[i].id);
  }
}

namespace {

struct RawDocument {
  std::string id;
  std::string text;
  std::vector<std::string> token_strings;              // truncated at T
  std::vector<std::vector<std::string>> field_values;  // schema order, truncated at L_p
  std::optional<std::string> label;
};

std::vector<RawDocument> parse_jsonl(const std::string& path, const MetadataSchema& schema,
                                     std::size_t max_tokens) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open corpus file: " + path);
  std::vector<RawDocument> raw;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    RawDocument doc;
    try {
      doc.id = j.at("id").get<std::string>();
      doc.text = j.at("text").get<std::string>();
      if (j.contains("label") && !j["label"].is_null())
        doc.label = j["label"].get<std::string>();
    } catch (const json::exception& e) {
      throw Error("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    doc.token_strings = tokenize(doc.text);
    if (doc.token_strings.size() > max_tokens) doc.token_strings.resize(max_tokens);
    doc.field_values.resize(schema.fields.size());
    if (j.contains("metadata")) {
      if (!j["metadata"].is_object())
        throw Error("corpus line " + std::to_string(line_no) + ": \"metadata\" must be an object");
      for (const auto& [key, vals] : j["metadata"].items()) {
        const FieldSpec* spec = schema.find(key);
        if (!spec)
          throw Error("corpus line " + std::to_string(line_no) +
                      ": metadata field \"" + key + "\" is not in the schema");
        if (!vals.is_array())
          throw Error("corpus line " + std::to_string(line_no) + ": metadata field \"" +
                      key + "\" must be an array of strings");
        auto& out = doc.field_values[schema.field_index(key)];
        for (const auto& v : vals) {
          if (!v.is_string())
            throw Error("corpus line " + std::to_string(line_no) + ": metadata field \"" +
                        key + "\" must be an array of strings");
          if (out.size() < spec->max_len) out.push_back(v.get<std::string>());
        }
      }
    }
    raw.push_back(std::move(doc));
  }
  if (raw.empty()) throw Error("corpus file " + path + " contains no documents");
  return raw;
}

Document finalize_document(const RawDocument& raw, const MetadataSchema& schema,
                           const Vocabulary& vocab) {
  Document doc;
  doc.id = raw.id;
  doc.text = raw.text;
  doc.label = raw.label;
  doc.tokens.reserve(raw.token_strings.size());
  for (const auto& t : raw.token_strings) doc.tokens.push_back(vocab.id_of(t));
  doc.metadata.resize(schema.fields.size());
  for (std::size_t p = 0; p < schema.fields.size(); ++p) {
    const FieldSpec& spec = schema.fields[p];
    FieldValues& fv = doc.metadata[p];
    fv.indices.assign(spec.max_len, Vocabulary::kPadId);
    fv.mask.assign(spec.max_len, 0);
    fv.raw_values = raw.field_values[p];
    for (std::size_t l = 0; l < fv.raw_values.size(); ++l) {
      fv.indices[l] = spec.value_id(fv.raw_values[l]);
      fv.mask[l] = 1;
    }
  }
  return doc;
}

}  // namespace

Corpus load_corpus(const std::string& path, const MetadataSchema& schema,
                   const LoadOptions& options) {
  Corpus corpus;
  corpus.schema = schema;
  const std::size_t max_tokens =
      options.max_tokens > 0 ? options.max_tokens : schema.max_tokens;
  corpus.schema.max_tokens = max_tokens;

  const std::vector<RawDocument> raw = parse_jsonl(path, schema, max_tokens);

  // Token counts over the truncated sequences.
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto& doc : raw)
    for (const auto& t : doc.token_strings) ++counts[t];

  // Ids in first-occurrence order; rare tokens fold into UNK.
  for (const auto& doc : raw) {
    for (const auto& t : doc.token_strings) {
      const std::int64_t c = counts.at(t);
      if (c >= options.min_count) {
        if (corpus.vocab.id_of(t) == Vocabulary::kUnkId && t != "<unk>")
          corpus.vocab.add(t, c);
      } else {
        corpus.vocab.add_count(Vocabulary::kUnkId, 1);
      }
    }
  }

  // Value sets: sorted distinct values after the reserved entries, unless the
  // schema declared the set explicitly.
  for (std::size_t p = 0; p < corpus.schema.fields.size(); ++p) {
    FieldSpec& spec = corpus.schema.fields[p];
    if (!spec.values.empty()) continue;  // declared
    std::vector<std::string> distinct;
    for (const auto& doc : raw)
      for (const auto& v : doc.field_values[p]) distinct.push_back(v);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    spec.add_value("<unk>");
    spec.add_value("<pad>");
    for (const auto& v : distinct) spec.add_value(v);
  }
  corpus.schema.finalized = true;

  corpus.documents.reserve(raw.size());
  for (const auto& doc : raw)
    corpus.documents.push_back(finalize_document(doc, corpus.schema, corpus.vocab));
  corpus.rebuild_index();
  return corpus;
}

Corpus load_corpus_with(const std::string& path, const MetadataSchema& finalized,
                        const Vocabulary& vocab, std::size_t max_tokens) {
  if (!finalized.finalized) throw Error("load_corpus_with: schema is not finalized");
  Corpus corpus;
  corpus.schema = finalized;
  corpus.schema.max_tokens = max_tokens;
  corpus.vocab = vocab;
  const std::vector<RawDocument> raw = parse_jsonl(path, finalized, max_tokens);
  corpus.documents.reserve(raw.size());
  for (const auto& doc : raw)
    corpus.documents.push_back(finalize_document(doc, corpus.schema, corpus.vocab));
  corpus.rebuild_index();
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write corpus file: " + path);
  for (const auto& doc : corpus.documents) {
    json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    json meta = json::object();
    for (std::size_t p = 0; p < corpus.schema.fields.size(); ++p)
      meta[corpus.schema.fields[p].name] = doc.metadata[p].raw_values;
    j["metadata"] = meta;
    j["label"] = doc.label ? json(*doc.label) : json(nullptr);
    out << j.dump() << '\n';
  }
}

ReconstructionTarget build_targets(const Document& doc, const MetadataSchema& schema) {
  ReconstructionTarget target;
  target.fields.resize(schema.fields.size());
  for (std::size_t p = 0; p < schema.fields.size(); ++p) {
    const FieldValues& fv = doc.metadata[p];
    auto& y = target.fields[p];
    y.assign(schema.fields[p].value_count(), 0.0);
    for (std::size_t l = 0; l < fv.mask.size(); ++l)
      if (fv.mask[l]) y[fv.indices[l]] = 1.0;
  }
  return target;
}

ExemplarSplit split_exemplars(const Corpus& corpus, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Error("split_exemplars: fraction must be in (0, 1)");
  const std::size_t n = corpus.documents.size();
  if (n < 2) throw Error("split_exemplars: need at least 2 documents");
  for (const auto& doc : corpus.documents)
    if (!doc.label)
      throw Error("split_exemplars: document " + doc.id + " has no label");

  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < n; ++i) by_label[*corpus.documents[i].label].push_back(i);

  std::size_t total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  total = std::clamp<std::size_t>(total, 1, n - 1);

  struct Quota {
    std::string label;
    std::size_t count;
    std::size_t base;
    double remainder;
  };
  std::vector<Quota> quotas;
  for (const auto& [label, ids] : by_label) {
    const double share =
        static_cast<double>(total) * static_cast<double>(ids.size()) / static_cast<double>(n);
    Quota q;
    q.label = label;
    q.count = ids.size();
    q.base = static_cast<std::size_t>(std::floor(share));
    q.remainder = share - static_cast<double>(q.base);
    quotas.push_back(q);
  }
  std::size_t assigned = 0;
  for (const auto& q : quotas) assigned += q.base;
  // Largest remainder first; ties by label.
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (quotas[a].remainder != quotas[b].remainder)
      return quotas[a].remainder > quotas[b].remainder;
    return quotas[a].label < quotas[b].label;
  });
  for (std::size_t i = 0; i < order.size() && assigned < total; ++i) {
    Quota& q = quotas[order[i]];
    if (q.base < q.count) {
      ++q.base;
      ++assigned;
    }
  }
  // Every label with >= 2 documents contributes at least one exemplar. Take
  // the slot from the largest allocation when possible; otherwise grow the
  // total.
  for (auto& q : quotas) {
    if (q.count >= 2 && q.base == 0) {
      Quota* donor = nullptr;
      for (auto& d : quotas)
        if (d.base >= 2 && (!donor || d.base > donor->base)) donor = &d;
      if (donor) --donor->base;
      q.base = 1;
    }
  }

  Rng rng(derive_seed(seed, "exemplar-split"));
  std::vector<std::size_t> exemplar_idx, eval_idx;
  for (auto& q : quotas) {
    auto ids = by_label.at(q.label);
    shuffle_vec(ids, rng);
    const std::size_t take = std::min(q.base, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i)
      (i < take ? exemplar_idx : eval_idx).push_back(ids[i]);
  }
  std::sort(exemplar_idx.begin(), exemplar_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());

  ExemplarSplit split;
  for (const auto i : exemplar_idx) split.exemplar_ids.push_back(corpus.documents[i].id);
  for (const auto i : eval_idx) split.eval_ids.push_back(corpus.documents[i].id);
  return split;
}

}  // namespace docfuse
