#include "docfuse/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "docfuse/error.hpp"

namespace docfuse {

PoolingMode pooling_from_string(const std::string& s) {
  if (s == "unmasked_mean") return PoolingMode::unmasked_mean;
  if (s == "paper_literal") return PoolingMode::paper_literal;
  throw Error("unknown pooling mode: " + s);
}

std::string to_string(PoolingMode mode) {
  return mode == PoolingMode::unmasked_mean ? "unmasked_mean" : "paper_literal";
}

namespace {

void write_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

}  // namespace

PrecomputedTable load_precomputed_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open embedding file: " + path);
  PrecomputedTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error("embedding file " + path + ": empty file");
  try {
    table.dim = std::stoul(line);
  } catch (const std::exception&) {
    throw Error("embedding file " + path + ": bad header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    nn::Vec v(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) {
      if (!(ss >> v[i]))
        throw Error("embedding file " + path + " line " + std::to_string(line_no) +
                    ": expected " + std::to_string(table.dim) + " values");
    }
    table.vectors.emplace(std::move(id), std::move(v));
  }
  return table;
}

void save_precomputed_embeddings(const PrecomputedTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write embedding file: " + path);
  out << table.dim << '\n';
  for (const auto& [id, v] : table.vectors) {
    out << id;
    for (const double x : v) {
      out << ' ';
      write_double(out, x);
    }
    out << '\n';
  }
}

WordVectorTable load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open word-vector file: " + path);
  WordVectorTable table;
  std::string line;
  if (!std::getline(in, line)) throw Error("word-vector file " + path + ": empty file");
  try {
    table.dim = std::stoul(line);
  } catch (const std::exception&) {
    throw Error("word-vector file " + path + ": bad header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    nn::Vec v(table.dim);
    for (std::size_t i = 0; i < table.dim; ++i) {
      if (!(ss >> v[i]))
        throw Error("word-vector file " + path + " line " + std::to_string(line_no) +
                    ": expected " + std::to_string(table.dim) + " values");
    }
    table.vectors.emplace(std::move(word), std::move(v));
  }
  return table;
}

nn::Vec average_word_vectors(const WordVectorTable& table, const std::string& text) {
  nn::Vec mean(table.dim, 0.0);
  const std::vector<std::string> words = tokenize(text);
  if (words.empty()) return mean;
  for (const auto& w : words) {
    const auto it = table.vectors.find(w);
    if (it == table.vectors.end()) continue;  // absent words count as zero vectors
    for (std::size_t i = 0; i < table.dim; ++i) mean[i] += it->second[i];
  }
  const double n = static_cast<double>(words.size());
  for (double& v : mean) v /= n;
  return mean;
}

std::size_t FusionModel::concat_dim() const {
  std::size_t dim = text.text_dim;
  for (const auto& f : schema.fields) dim += f.embed_dim;
  return dim;
}

FusionModel make_fusion_model(const Corpus& corpus, const FusionDims& dims,
                              TextEncoder::Mode text_mode, PoolingMode pooling,
                              double dropout_rate, std::uint64_t init_seed,
                              const WordVectorTable* word_vectors,
                              const PrecomputedTable* precomputed) {
  if (!corpus.schema.finalized) throw Error("make_fusion_model: schema not finalized");
  if (dims.embed_dim < 1 || dims.num_topics < 2)
    throw Error("make_fusion_model: bad dimensions");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw Error("make_fusion_model: dropout must be in [0, 1)");

  FusionModel model;
  model.schema = corpus.schema;
  model.vocab = corpus.vocab;
  model.max_tokens = corpus.schema.max_tokens;
  model.pooling = pooling;
  model.dropout_rate = dropout_rate;
  model.embed_dim = dims.embed_dim;
  model.num_topics = dims.num_topics;

  Rng rng(derive_seed(init_seed, "model-init"));

  model.text.mode = text_mode;
  if (text_mode == TextEncoder::Mode::trainable) {
    model.text.text_dim = dims.text_dim;
    model.text.word_embeddings = nn::Matrix(corpus.vocab.size(), dims.word_dim);
    nn::init_glorot(model.text.word_embeddings, corpus.vocab.size(), dims.word_dim, rng);
    model.text.head1 = nn::DenseLayer(dims.word_dim, dims.text_dim, nn::Activation::tanh);
    nn::init_dense(model.text.head1, rng);
    model.text.head2 = nn::DenseLayer(dims.text_dim, dims.text_dim, nn::Activation::identity);
    nn::init_dense(model.text.head2, rng);
  } else {
    if (!precomputed) throw Error("make_fusion_model: precomputed table required");
    model.text.text_dim = precomputed->dim;
    model.text.table = precomputed->vectors;
    for (const auto& doc : corpus.documents)
      if (!model.text.table.count(doc.id))
        throw Error("no precomputed embedding for document " + doc.id);
  }

  for (const auto& field : model.schema.fields) {
    MetadataEncoder enc;
    enc.input = field.encoding;
    if (field.encoding == FieldEncoding::one_hot) {
      enc.input_dim = field.value_count();
    } else {
      if (!word_vectors)
        throw Error("make_fusion_model: field " + field.name +
                    " uses word vectors but no word-vector file was given");
      enc.input_dim = word_vectors->dim;
      enc.value_inputs.resize(field.value_count(), nn::Vec(word_vectors->dim, 0.0));
      // Reserved UNK/PAD stay at zero.
      for (std::size_t v = 2; v < field.value_count(); ++v)
        enc.value_inputs[v] = average_word_vectors(*word_vectors, field.values[v]);
    }
    enc.l1 = nn::DenseLayer(enc.input_dim, field.embed_dim, nn::Activation::tanh);
    nn::init_dense(enc.l1, rng);
    enc.l2 = nn::DenseLayer(field.embed_dim, field.embed_dim, nn::Activation::tanh);
    nn::init_dense(enc.l2, rng);
    model.meta.push_back(std::move(enc));
  }

  const std::size_t concat = model.concat_dim();
  model.fusion_weight = nn::Matrix(concat, model.embed_dim);
  nn::init_glorot(model.fusion_weight, concat, model.embed_dim, rng);
  model.topic_weight = nn::Matrix(model.embed_dim, model.num_topics);
  nn::init_glorot(model.topic_weight, model.embed_dim, model.num_topics, rng);
  for (const auto& field : model.schema.fields) {
    nn::Matrix w(model.embed_dim, field.value_count());
    nn::init_glorot(w, model.embed_dim, field.value_count(), rng);
    model.meta_weight.push_back(std::move(w));
  }
  return model;
}

nn::Vec encode_text(const FusionModel& model, const Document& doc, EmbedCache* cache) {
  if (model.text.mode == TextEncoder::Mode::precomputed) {
    const auto it = model.text.table.find(doc.id);
    if (it == model.text.table.end())
      throw Error("no precomputed embedding for document " + doc.id);
    if (cache) cache->phi = it->second;
    return it->second;
  }
  nn::Vec mean(model.text.word_embeddings.cols(), 0.0);
  if (!doc.tokens.empty()) {
    for (const std::size_t t : doc.tokens) {
      const double* row = model.text.word_embeddings.row(t);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += row[i];
    }
    const double n = static_cast<double>(doc.tokens.size());
    for (double& v : mean) v /= n;
  }
  nn::LayerCache c1, c2;
  const nn::Vec h = nn::forward(model.text.head1, mean, &c1);
  nn::Vec phi = nn::forward(model.text.head2, h, &c2);
  if (cache) {
    cache->text_mean = std::move(mean);
    cache->head1 = std::move(c1);
    cache->head2 = std::move(c2);
    cache->phi = phi;
  }
  return phi;
}

namespace {

// First layer of a metadata encoder for a one-hot input: W x + b collapses
// to column v of W plus the bias.
nn::Vec one_hot_layer_forward(const nn::DenseLayer& layer, std::size_t v) {
  nn::Vec out(layer.out_dim());
  for (std::size_t r = 0; r < layer.out_dim(); ++r)
    out[r] = layer.weight(r, v) + layer.bias[r];
  for (double& x : out) x = std::tanh(x);
  return out;
}

}  // namespace

nn::Vec encode_metadata(const FusionModel& model, const Document& doc, std::size_t field,
                        FieldCache* cache) {
  const FieldSpec& spec = model.schema.fields[field];
  const MetadataEncoder& enc = model.meta[field];
  const FieldValues& fv = doc.metadata[field];

  nn::Vec sum(spec.embed_dim, 0.0);
  std::size_t active = 0;
  for (std::size_t l = 0; l < fv.mask.size(); ++l) {
    if (!fv.mask[l]) continue;
    ++active;
    const std::size_t v = fv.indices[l];
    FieldPositionCache pos;
    pos.value_id = v;
    nn::Vec a1;
    if (enc.input == FieldEncoding::one_hot) {
      a1 = one_hot_layer_forward(enc.l1, v);
      pos.l1.output = a1;
    } else {
      a1 = nn::forward(enc.l1, enc.value_inputs[v], &pos.l1);
    }
    nn::Vec psi = nn::forward(enc.l2, a1, &pos.l2);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += psi[i];
    if (cache) cache->positions.push_back(std::move(pos));
  }

  double denom = 1.0;
  if (model.pooling == PoolingMode::paper_literal) {
    denom = static_cast<double>(spec.max_len);
  } else {
    denom = static_cast<double>(std::max<std::size_t>(1, active));
  }
  for (double& v : sum) v /= denom;
  if (cache) {
    cache->pooled = sum;
    cache->denom = denom;
  }
  return sum;
}

nn::Vec embed_document(const FusionModel& model, const Document& doc, bool training,
                       Rng* dropout_rng, EmbedCache* cache) {
  nn::Vec concat;
  concat.reserve(model.concat_dim());
  {
    const nn::Vec phi = encode_text(model, doc, cache);
    concat.insert(concat.end(), phi.begin(), phi.end());
  }
  if (cache) cache->fields.resize(model.schema.fields.size());
  for (std::size_t p = 0; p < model.schema.fields.size(); ++p) {
    FieldCache* fc = cache ? &cache->fields[p] : nullptr;
    const nn::Vec psi = encode_metadata(model, doc, p, fc);
    concat.insert(concat.end(), psi.begin(), psi.end());
  }

  nn::Vec dropped = concat;
  nn::Vec mask;
  if (training && model.dropout_rate > 0.0) {
    if (!dropout_rng) throw Error("embed_document: training mode needs an rng for dropout");
    mask = nn::dropout_mask(concat.size(), model.dropout_rate, *dropout_rng);
    for (std::size_t i = 0; i < dropped.size(); ++i) dropped[i] *= mask[i];
  }

  nn::Vec z = nn::matvec_t(model.fusion_weight, dropped);
  if (cache) {
    cache->concat = std::move(concat);
    cache->mask = std::move(mask);
    cache->dropped = std::move(dropped);
  }
  return z;
}

void FusionGradients::zero() {
  word_embeddings.fill(0.0);
  head1.weight.fill(0.0);
  std::fill(head1.bias.begin(), head1.bias.end(), 0.0);
  head2.weight.fill(0.0);
  std::fill(head2.bias.begin(), head2.bias.end(), 0.0);
  for (auto& f : meta) {
    f.l1.weight.fill(0.0);
    std::fill(f.l1.bias.begin(), f.l1.bias.end(), 0.0);
    f.l2.weight.fill(0.0);
    std::fill(f.l2.bias.begin(), f.l2.bias.end(), 0.0);
  }
  fusion_weight.fill(0.0);
  topic_weight.fill(0.0);
  for (auto& m : meta_weight) m.fill(0.0);
}

FusionGradients make_gradients(const FusionModel& model) {
  FusionGradients g;
  if (model.text.mode == TextEncoder::Mode::trainable) {
    g.word_embeddings =
        nn::Matrix(model.text.word_embeddings.rows(), model.text.word_embeddings.cols());
    g.head1.weight = nn::Matrix(model.text.head1.out_dim(), model.text.head1.in_dim());
    g.head1.bias.assign(model.text.head1.out_dim(), 0.0);
    g.head2.weight = nn::Matrix(model.text.head2.out_dim(), model.text.head2.in_dim());
    g.head2.bias.assign(model.text.head2.out_dim(), 0.0);
  }
  for (const auto& enc : model.meta) {
    FusionGradients::FieldGrads f;
    f.l1.weight = nn::Matrix(enc.l1.out_dim(), enc.l1.in_dim());
    f.l1.bias.assign(enc.l1.out_dim(), 0.0);
    f.l2.weight = nn::Matrix(enc.l2.out_dim(), enc.l2.in_dim());
    f.l2.bias.assign(enc.l2.out_dim(), 0.0);
    g.meta.push_back(std::move(f));
  }
  g.fusion_weight = nn::Matrix(model.fusion_weight.rows(), model.fusion_weight.cols());
  g.topic_weight = nn::Matrix(model.topic_weight.rows(), model.topic_weight.cols());
  for (const auto& m : model.meta_weight) g.meta_weight.emplace_back(m.rows(), m.cols());
  return g;
}

void backprop_document(const FusionModel& model, const Document& doc,
                       const EmbedCache& cache, const nn::Vec& dz, FusionGradients& grads) {
  nn::add_outer(grads.fusion_weight, cache.dropped, dz);
  nn::Vec dc = nn::matvec(model.fusion_weight, dz);
  if (!cache.mask.empty())
    for (std::size_t i = 0; i < dc.size(); ++i) dc[i] *= cache.mask[i];

  // Text segment.
  std::size_t offset = model.text.text_dim;
  if (model.text.mode == TextEncoder::Mode::trainable) {
    nn::Vec dphi(dc.begin(), dc.begin() + static_cast<std::ptrdiff_t>(offset));
    const nn::Vec dh = nn::backward(model.text.head2, cache.head2, dphi, grads.head2);
    const nn::Vec dmean = nn::backward(model.text.head1, cache.head1, dh, grads.head1);
    if (!doc.tokens.empty()) {
      const double inv_n = 1.0 / static_cast<double>(doc.tokens.size());
      for (const std::size_t t : doc.tokens) {
        double* row = grads.word_embeddings.row(t);
        for (std::size_t i = 0; i < dmean.size(); ++i) row[i] += dmean[i] * inv_n;
      }
    }
  }

  // Metadata segments.
  for (std::size_t p = 0; p < model.schema.fields.size(); ++p) {
    const std::size_t dim = model.schema.fields[p].embed_dim;
    const FieldCache& fc = cache.fields[p];
    const MetadataEncoder& enc = model.meta[p];
    nn::Vec dpooled(dc.begin() + static_cast<std::ptrdiff_t>(offset),
                    dc.begin() + static_cast<std::ptrdiff_t>(offset + dim));
    offset += dim;
    if (fc.positions.empty()) continue;
    nn::Vec dpsi(dim);
    for (std::size_t i = 0; i < dim; ++i) dpsi[i] = dpooled[i] / fc.denom;
    for (const auto& pos : fc.positions) {
      const nn::Vec da1 = nn::backward(enc.l2, pos.l2, dpsi, grads.meta[p].l2);
      if (enc.input == FieldEncoding::one_hot) {
        // One-hot input: only column value_id of the first layer gets weight
        // gradient.
        for (std::size_t r = 0; r < enc.l1.out_dim(); ++r) {
          const double y = pos.l1.output[r];
          const double g = da1[r] * (1.0 - y * y);
          grads.meta[p].l1.weight(r, pos.value_id) += g;
          grads.meta[p].l1.bias[r] += g;
        }
      } else {
        nn::backward(enc.l1, pos.l1, da1, grads.meta[p].l1);
      }
    }
  }
}

namespace {

void push_dense_blocks(std::vector<nn::ParamBlock>& blocks, const std::string& prefix,
                       nn::Matrix& w, nn::Vec& b) {
  blocks.push_back({prefix + ".weight", w.data(), w.size()});
  blocks.push_back({prefix + ".bias", b.data(), b.size()});
}

}  // namespace

std::vector<nn::ParamBlock> param_blocks(FusionModel& model) {
  std::vector<nn::ParamBlock> blocks;
  if (model.text.mode == TextEncoder::Mode::trainable) {
    blocks.push_back({"text.word_embeddings", model.text.word_embeddings.data(),
                      model.text.word_embeddings.size()});
    push_dense_blocks(blocks, "text.head1", model.text.head1.weight, model.text.head1.bias);
    push_dense_blocks(blocks, "text.head2", model.text.head2.weight, model.text.head2.bias);
  }
  for (std::size_t p = 0; p < model.meta.size(); ++p) {
    const std::string& name = model.schema.fields[p].name;
    push_dense_blocks(blocks, "meta." + name + ".l1", model.meta[p].l1.weight,
                      model.meta[p].l1.bias);
    push_dense_blocks(blocks, "meta." + name + ".l2", model.meta[p].l2.weight,
                      model.meta[p].l2.bias);
  }
  blocks.push_back({"fusion.weight", model.fusion_weight.data(), model.fusion_weight.size()});
  blocks.push_back({"topic.weight", model.topic_weight.data(), model.topic_weight.size()});
  for (std::size_t p = 0; p < model.meta_weight.size(); ++p)
    blocks.push_back({"decode." + model.schema.fields[p].name + ".weight",
                      model.meta_weight[p].data(), model.meta_weight[p].size()});
  return blocks;
}

std::vector<nn::ParamBlock> grad_blocks(FusionGradients& grads, const FusionModel& model) {
  std::vector<nn::ParamBlock> blocks;
  if (grads.word_embeddings.size() > 0) {
    blocks.push_back(
        {"text.word_embeddings", grads.word_embeddings.data(), grads.word_embeddings.size()});
    push_dense_blocks(blocks, "text.head1", grads.head1.weight, grads.head1.bias);
    push_dense_blocks(blocks, "text.head2", grads.head2.weight, grads.head2.bias);
  }
  for (std::size_t p = 0; p < grads.meta.size(); ++p) {
    const std::string& name = model.schema.fields[p].name;
    push_dense_blocks(blocks, "meta." + name + ".l1", grads.meta[p].l1.weight,
                      grads.meta[p].l1.bias);
    push_dense_blocks(blocks, "meta." + name + ".l2", grads.meta[p].l2.weight,
                      grads.meta[p].l2.bias);
  }
  blocks.push_back({"fusion.weight", grads.fusion_weight.data(), grads.fusion_weight.size()});
  blocks.push_back({"topic.weight", grads.topic_weight.data(), grads.topic_weight.size()});
  for (std::size_t p = 0; p < grads.meta_weight.size(); ++p)
    blocks.push_back({"decode." + model.schema.fields[p].name + ".weight",
                      grads.meta_weight[p].data(), grads.meta_weight[p].size()});
  return blocks;
}

// ---------------------------------------------------------------------------
// Binary model file. Little-endian, fixed layout, versioned.

namespace {

constexpr char kMagic[8] = {'D', 'F', 'U', 'S', 'M', 'D', 'L', '\0'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
void get_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw Error("model file truncated");
}

template <typename T>
void put_pod(std::ostream& out, T v) {
  put_bytes(out, &v, sizeof(T));
}
template <typename T>
T get_pod(std::istream& in) {
  T v;
  get_bytes(in, &v, sizeof(T));
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_pod<std::uint64_t>(out, s.size());
  put_bytes(out, s.data(), s.size());
}
std::string get_string(std::istream& in) {
  const auto n = get_pod<std::uint64_t>(in);
  if (n > (1ull << 32)) throw Error("model file corrupt: oversized string");
  std::string s(n, '\0');
  if (n) get_bytes(in, s.data(), n);
  return s;
}

void put_vec(std::ostream& out, const nn::Vec& v) {
  put_pod<std::uint64_t>(out, v.size());
  if (!v.empty()) put_bytes(out, v.data(), v.size() * sizeof(double));
}
nn::Vec get_vec(std::istream& in) {
  const auto n = get_pod<std::uint64_t>(in);
  if (n > (1ull << 32)) throw Error("model file corrupt: oversized vector");
  nn::Vec v(n);
  if (n) get_bytes(in, v.data(), n * sizeof(double));
  return v;
}

void put_matrix(std::ostream& out, const nn::Matrix& m) {
  put_pod<std::uint64_t>(out, m.rows());
  put_pod<std::uint64_t>(out, m.cols());
  if (m.size()) put_bytes(out, m.data(), m.size() * sizeof(double));
}
nn::Matrix get_matrix(std::istream& in) {
  const auto rows = get_pod<std::uint64_t>(in);
  const auto cols = get_pod<std::uint64_t>(in);
  if (rows > (1ull << 24) || cols > (1ull << 24))
    throw Error("model file corrupt: oversized matrix");
  nn::Matrix m(rows, cols);
  if (m.size()) get_bytes(in, m.data(), m.size() * sizeof(double));
  return m;
}

void put_dense(std::ostream& out, const nn::DenseLayer& layer) {
  put_pod<std::uint8_t>(out, layer.activation == nn::Activation::tanh ? 1 : 0);
  put_matrix(out, layer.weight);
  put_vec(out, layer.bias);
}
nn::DenseLayer get_dense(std::istream& in) {
  nn::DenseLayer layer;
  layer.activation =
      get_pod<std::uint8_t>(in) ? nn::Activation::tanh : nn::Activation::identity;
  layer.weight = get_matrix(in);
  layer.bias = get_vec(in);
  if (layer.bias.size() != layer.weight.rows())
    throw Error("model file corrupt: dense layer shape mismatch");
  return layer;
}

}  // namespace

void save_model(const FusionModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write model file: " + path);
  put_bytes(out, kMagic, sizeof(kMagic));
  put_pod<std::uint32_t>(out, kVersion);
  put_pod<std::uint8_t>(out, model.pooling == PoolingMode::paper_literal ? 1 : 0);
  put_pod<std::uint8_t>(out, model.text.mode == TextEncoder::Mode::precomputed ? 1 : 0);
  put_pod<double>(out, model.dropout_rate);
  put_pod<std::uint64_t>(out, model.max_tokens);
  put_pod<std::uint64_t>(out, model.embed_dim);
  put_pod<std::uint64_t>(out, model.num_topics);

  put_pod<std::uint64_t>(out, model.vocab.size());
  for (std::size_t i = 0; i < model.vocab.size(); ++i) {
    put_string(out, model.vocab.token_of(i));
    put_pod<std::int64_t>(out, model.vocab.count_of(i));
  }

  put_pod<std::uint64_t>(out, model.schema.fields.size());
  for (const auto& f : model.schema.fields) {
    put_string(out, f.name);
    put_pod<std::uint8_t>(out, f.encoding == FieldEncoding::word_vectors ? 1 : 0);
    put_pod<std::uint64_t>(out, f.max_len);
    put_pod<std::uint64_t>(out, f.embed_dim);
    put_pod<std::uint64_t>(out, f.values.size());
    for (const auto& v : f.values) put_string(out, v);
  }

  put_pod<std::uint64_t>(out, model.text.text_dim);
  if (model.text.mode == TextEncoder::Mode::trainable) {
    put_matrix(out, model.text.word_embeddings);
    put_dense(out, model.text.head1);
    put_dense(out, model.text.head2);
  } else {
    put_pod<std::uint64_t>(out, model.text.table.size());
    for (const auto& [id, v] : model.text.table) {
      put_string(out, id);
      put_vec(out, v);
    }
  }

  for (const auto& enc : model.meta) {
    put_pod<std::uint8_t>(out, enc.input == FieldEncoding::word_vectors ? 1 : 0);
    put_pod<std::uint64_t>(out, enc.input_dim);
    put_pod<std::uint64_t>(out, enc.value_inputs.size());
    for (const auto& v : enc.value_inputs) put_vec(out, v);
    put_dense(out, enc.l1);
    put_dense(out, enc.l2);
  }

  put_matrix(out, model.fusion_weight);
  put_matrix(out, model.topic_weight);
  for (const auto& m : model.meta_weight) put_matrix(out, m);
  if (!out) throw Error("failed writing model file: " + path);
}

FusionModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open model file: " + path);
  char magic[8];
  get_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw Error("model file " + path + ": unrecognized format");
  const auto version = get_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw Error("model file " + path + ": unsupported version " + std::to_string(version));

  FusionModel model;
  model.pooling =
      get_pod<std::uint8_t>(in) ? PoolingMode::paper_literal : PoolingMode::unmasked_mean;
  model.text.mode =
      get_pod<std::uint8_t>(in) ? TextEncoder::Mode::precomputed : TextEncoder::Mode::trainable;
  model.dropout_rate = get_pod<double>(in);
  model.max_tokens = get_pod<std::uint64_t>(in);
  model.embed_dim = get_pod<std::uint64_t>(in);
  model.num_topics = get_pod<std::uint64_t>(in);

  const auto vocab_size = get_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < vocab_size; ++i) {
    const std::string token = get_string(in);
    const auto count = get_pod<std::int64_t>(in);
    if (i < 2) {
      model.vocab.add_count(i, count);  // reserved entries already exist
    } else {
      model.vocab.add(token, count);
    }
  }

  const auto nfields = get_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < nfields; ++i) {
    FieldSpec f;
    f.name = get_string(in);
    f.encoding = get_pod<std::uint8_t>(in) ? FieldEncoding::word_vectors : FieldEncoding::one_hot;
    f.max_len = get_pod<std::uint64_t>(in);
    f.embed_dim = get_pod<std::uint64_t>(in);
    const auto nvalues = get_pod<std::uint64_t>(in);
    f.values.reserve(nvalues);
    for (std::uint64_t v = 0; v < nvalues; ++v) f.values.push_back(get_string(in));
    f.rebuild_index();
    model.schema.fields.push_back(std::move(f));
  }
  model.schema.max_tokens = model.max_tokens;
  model.schema.finalized = true;
  model.schema.validate();

  model.text.text_dim = get_pod<std::uint64_t>(in);
  if (model.text.mode == TextEncoder::Mode::trainable) {
    model.text.word_embeddings = get_matrix(in);
    model.text.head1 = get_dense(in);
    model.text.head2 = get_dense(in);
    if (model.text.word_embeddings.rows() != model.vocab.size())
      throw Error("model file " + path + ": word embedding rows do not match vocabulary");
    if (model.text.head1.in_dim() != model.text.word_embeddings.cols() ||
        model.text.head1.out_dim() != model.text.text_dim ||
        model.text.head2.in_dim() != model.text.text_dim ||
        model.text.head2.out_dim() != model.text.text_dim)
      throw Error("model file " + path + ": text head shapes inconsistent");
  } else {
    const auto n = get_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string id = get_string(in);
      nn::Vec v = get_vec(in);
      if (v.size() != model.text.text_dim)
        throw Error("model file " + path + ": precomputed embedding size mismatch");
      model.text.table.emplace(std::move(id), std::move(v));
    }
  }

  for (std::uint64_t p = 0; p < nfields; ++p) {
    MetadataEncoder enc;
    enc.input = get_pod<std::uint8_t>(in) ? FieldEncoding::word_vectors : FieldEncoding::one_hot;
    enc.input_dim = get_pod<std::uint64_t>(in);
    const auto nvalues = get_pod<std::uint64_t>(in);
    enc.value_inputs.reserve(nvalues);
    for (std::uint64_t v = 0; v < nvalues; ++v) enc.value_inputs.push_back(get_vec(in));
    enc.l1 = get_dense(in);
    enc.l2 = get_dense(in);
    const FieldSpec& spec = model.schema.fields[p];
    if (enc.input != spec.encoding)
      throw Error("model file " + path + ": encoder kind mismatch for field " + spec.name);
    if (enc.input == FieldEncoding::one_hot && enc.input_dim != spec.value_count())
      throw Error("model file " + path + ": encoder input size mismatch for field " +
                  spec.name);
    if (enc.l1.in_dim() != enc.input_dim || enc.l1.out_dim() != spec.embed_dim ||
        enc.l2.in_dim() != spec.embed_dim || enc.l2.out_dim() != spec.embed_dim)
      throw Error("model file " + path + ": encoder shapes inconsistent for field " +
                  spec.name);
    model.meta.push_back(std::move(enc));
  }

  model.fusion_weight = get_matrix(in);
  model.topic_weight = get_matrix(in);
  for (std::uint64_t p = 0; p < nfields; ++p) model.meta_weight.push_back(get_matrix(in));

  if (model.fusion_weight.rows() != model.concat_dim() ||
      model.fusion_weight.cols() != model.embed_dim)
    throw Error("model file " + path + ": fusion projection shape mismatch");
  if (model.topic_weight.rows() != model.embed_dim ||
      model.topic_weight.cols() != model.num_topics)
    throw Error("model file " + path + ": topic projection shape does not match K");
  for (std::uint64_t p = 0; p < nfields; ++p) {
    if (model.meta_weight[p].rows() != model.embed_dim ||
        model.meta_weight[p].cols() != model.schema.fields[p].value_count())
      throw Error("model file " + path + ": metadata decoder shape mismatch for field " +
                  model.schema.fields[p].name);
  }
  return model;
}

}  // namespace docfuse
