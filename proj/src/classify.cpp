#include "docfuse/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "docfuse/error.hpp"

namespace docfuse {

namespace {

void write_double(std::ostream& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out << buf;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

nn::Vec EmbeddingSet::row_vec(std::size_t i) const {
  return nn::Vec(matrix.row(i), matrix.row(i) + matrix.cols());
}

void EmbeddingSet::validate() const {
  if (matrix.rows() != ids.size()) throw Error("embedding set: row/id count mismatch");
  if (!labels.empty() && labels.size() != ids.size())
    throw Error("embedding set: label count mismatch");
  for (std::size_t i = 0; i < matrix.size(); ++i)
    if (!std::isfinite(matrix.data()[i]))
      throw Error("embedding set: non-finite entry");
}

void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write embeddings: " + path);
  out << set.dim() << '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string& id = set.ids[i];
    if (id.empty() || id.find_first_of(" \t\r\n") != std::string::npos)
      throw Error("document id not representable in table files: \"" + id + "\"");
    out << id;
    const double* row = set.matrix.row(i);
    for (std::size_t c = 0; c < set.dim(); ++c) {
      out << ' ';
      write_double(out, row[c]);
    }
    out << '\n';
  }
}

EmbeddingSet load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open embeddings: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("embeddings " + path + ": empty file");
  std::size_t dim = 0;
  try {
    dim = std::stoul(line);
  } catch (const std::exception&) {
    throw Error("embeddings " + path + ": bad header");
  }
  std::vector<std::string> ids;
  std::vector<nn::Vec> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string id;
    ss >> id;
    nn::Vec v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!(ss >> v[i]))
        throw Error("embeddings " + path + " line " + std::to_string(line_no) +
                    ": expected " + std::to_string(dim) + " values");
    }
    ids.push_back(std::move(id));
    rows.push_back(std::move(v));
  }
  EmbeddingSet set;
  set.ids = std::move(ids);
  set.matrix = nn::Matrix(set.ids.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), set.matrix.row(i));
  return set;
}

Prediction knn_classify(const std::string& query_id, const nn::Vec& query,
                        const EmbeddingSet& exemplars, std::size_t k) {
  if (k < 1) throw Error("knn_classify: k must be >= 1");
  exemplars.validate();
  if (exemplars.size() == 0) throw Error("knn_classify: empty exemplar set");
  if (exemplars.labels.size() != exemplars.size())
    throw Error("knn_classify: exemplars must be fully labeled");
  if (query.size() != exemplars.dim()) throw Error("knn_classify: dimension mismatch");

  struct Candidate {
    double d2;
    std::size_t index;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(exemplars.size());
  for (std::size_t i = 0; i < exemplars.size(); ++i) {
    if (exemplars.ids[i] == query_id) continue;  // never its own neighbor
    if (!exemplars.labels[i])
      throw Error("knn_classify: exemplar " + exemplars.ids[i] + " has no label");
    candidates.push_back({squared_distance(query.data(), exemplars.matrix.row(i),
                                           exemplars.dim()),
                          i});
  }
  if (candidates.empty()) throw Error("knn_classify: no usable exemplars");

  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    return exemplars.ids[a.index] < exemplars.ids[b.index];
  });
  const std::size_t take = std::min(k, candidates.size());

  Prediction pred;
  pred.id = query_id;
  std::map<std::string, std::pair<std::size_t, double>> votes;  // label -> {count, dist sum}
  for (std::size_t i = 0; i < take; ++i) {
    const Candidate& c = candidates[i];
    const double dist = std::sqrt(c.d2);
    pred.neighbor_ids.push_back(exemplars.ids[c.index]);
    pred.neighbor_distances.push_back(dist);
    auto& v = votes[*exemplars.labels[c.index]];
    v.first += 1;
    v.second += dist;
  }
  // Mode with deterministic tie-breaking: count desc, summed distance asc,
  // label asc (map order supplies the final rule).
  std::string best;
  std::size_t best_count = 0;
  double best_sum = 0.0;
  for (const auto& [label, v] : votes) {
    if (v.first > best_count || (v.first == best_count && v.second < best_sum)) {
      best = label;
      best_count = v.first;
      best_sum = v.second;
    }
  }
  pred.label = best;
  return pred;
}

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::map<std::string, std::string>& gold) {
  if (predictions.size() != gold.size())
    throw Error("evaluate: prediction and gold id sets differ");
  std::size_t correct = 0;
  std::map<std::string, std::size_t> tp, fp, fn, support;
  for (const auto& [id, label] : gold) support[label];  // ensure every gold class exists
  for (const auto& pred : predictions) {
    const auto it = gold.find(pred.id);
    if (it == gold.end()) throw Error("evaluate: no gold label for " + pred.id);
    const std::string& truth = it->second;
    ++support[truth];
    if (pred.label == truth) {
      ++correct;
      ++tp[truth];
    } else {
      ++fp[pred.label];
      ++fn[truth];
    }
  }

  EvalReport report;
  double f1_sum = 0.0;
  for (const auto& [label, count] : support) {
    ClassMetrics m;
    m.label = label;
    m.support = count;
    const double tp_ = static_cast<double>(tp[label]);
    const double fp_ = static_cast<double>(fp[label]);
    const double fn_ = static_cast<double>(fn[label]);
    m.precision = tp_ + fp_ > 0.0 ? tp_ / (tp_ + fp_) : 0.0;
    m.recall = tp_ + fn_ > 0.0 ? tp_ / (tp_ + fn_) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    f1_sum += m.f1;
    report.per_class.push_back(std::move(m));
  }
  report.macro_f1 =
      report.per_class.empty() ? 0.0 : f1_sum / static_cast<double>(report.per_class.size());
  // Pooled counts: for single-label tasks every wrong prediction is one FP
  // and one FN, so micro-F1 equals accuracy.
  const double n = static_cast<double>(predictions.size());
  report.accuracy = n > 0.0 ? static_cast<double>(correct) / n : 0.0;
  report.micro_f1 = report.accuracy;
  return report;
}

ConfusionMatrix confusion_matrix(const std::vector<Prediction>& predictions,
                                 const std::map<std::string, std::string>& gold) {
  if (predictions.size() != gold.size())
    throw Error("confusion_matrix: prediction and gold id sets differ");
  std::set<std::string> label_set;
  for (const auto& [id, label] : gold) {
    (void)id;
    label_set.insert(label);
  }
  for (const auto& p : predictions) label_set.insert(p.label);

  ConfusionMatrix cm;
  cm.labels.assign(label_set.begin(), label_set.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < cm.labels.size(); ++i) index[cm.labels[i]] = i;
  cm.counts.assign(cm.labels.size(), std::vector<std::size_t>(cm.labels.size(), 0));
  for (const auto& pred : predictions) {
    const auto it = gold.find(pred.id);
    if (it == gold.end()) throw Error("confusion_matrix: no gold label for " + pred.id);
    ++cm.counts[index.at(it->second)][index.at(pred.label)];
  }
  return cm;
}

void save_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write confusion matrix: " + path);
  out << "gold\\predicted";
  for (const auto& l : cm.labels) out << ',' << l;
  out << '\n';
  for (std::size_t r = 0; r < cm.labels.size(); ++r) {
    out << cm.labels[r];
    for (std::size_t c = 0; c < cm.labels.size(); ++c) out << ',' << cm.counts[r][c];
    out << '\n';
  }
}

PcaResult pca_project(const EmbeddingSet& set, std::size_t dims) {
  set.validate();
  const std::size_t n = set.size();
  const std::size_t d = set.dim();
  if (dims < 1) throw Error("pca_project: dims must be >= 1");
  if (dims > d) throw Error("pca_project: dims exceeds embedding dimension");
  if (n < dims + 1) throw Error("pca_project: need at least dims+1 points");

  nn::Vec mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = set.matrix.row(i);
    for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
  }
  for (double& m : mean) m /= static_cast<double>(n);

  nn::Matrix centered(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) centered(i, c) = set.matrix(i, c) - mean[c];

  // Covariance (d x d).
  nn::Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      const double ra = row[a];
      for (std::size_t b = a; b < d; ++b) cov(a, b) += ra * row[b];
    }
  }
  const double norm = n > 1 ? 1.0 / static_cast<double>(n - 1) : 1.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) *= norm;
      cov(b, a) = cov(a, b);
    }
  double total_variance = 0.0;
  for (std::size_t a = 0; a < d; ++a) total_variance += cov(a, a);

  std::vector<nn::Vec> components;
  std::vector<double> eigenvalues;
  Rng rng(12345);  // fixed start vectors keep this a pure function
  nn::Matrix work = cov;
  for (std::size_t comp = 0; comp < dims; ++comp) {
    nn::Vec v(d);
    for (double& x : v) x = uniform_range(rng, -1.0, 1.0);
    auto orthogonalize = [&](nn::Vec& u) {
      for (const auto& c : components) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += u[i] * c[i];
        for (std::size_t i = 0; i < d; ++i) u[i] -= dot * c[i];
      }
    };
    auto normalize = [&](nn::Vec& u) {
      double norm2 = 0.0;
      for (const double x : u) norm2 += x * x;
      const double len = std::sqrt(norm2);
      if (len > 0.0)
        for (double& x : u) x /= len;
      return len;
    };
    orthogonalize(v);
    if (normalize(v) == 0.0) v[comp % d] = 1.0;

    for (std::size_t iter = 0; iter < 1000; ++iter) {
      nn::Vec next = nn::matvec(work, v);
      orthogonalize(next);
      const double len = normalize(next);
      // Degenerate direction: keep the current orthonormal v (its Rayleigh
      // quotient below will be ~0).
      if (len < 1e-300) break;
      double align = 0.0;
      for (std::size_t i = 0; i < d; ++i) align += next[i] * v[i];
      v = std::move(next);
      if (std::abs(std::abs(align) - 1.0) < 1e-14) break;
    }
    // Deterministic sign: largest-magnitude coordinate positive.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0.0)
      for (double& x : v) x = -x;

    // Rayleigh quotient on the original covariance.
    nn::Vec cv = nn::matvec(cov, v);
    double lambda = 0.0;
    for (std::size_t i = 0; i < d; ++i) lambda += v[i] * cv[i];
    if (lambda < 0.0) lambda = 0.0;
    eigenvalues.push_back(lambda);

    // Deflate.
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) work(a, b) -= lambda * v[a] * v[b];
    components.push_back(std::move(v));
  }

  PcaResult result;
  result.coordinates = nn::Matrix(n, dims);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = centered.row(i);
    for (std::size_t comp = 0; comp < dims; ++comp) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += row[c] * components[comp][c];
      result.coordinates(i, comp) = dot;
    }
  }
  result.explained_variance_ratio.resize(dims, 0.0);
  if (total_variance > 0.0)
    for (std::size_t comp = 0; comp < dims; ++comp)
      result.explained_variance_ratio[comp] = eigenvalues[comp] / total_variance;
  return result;
}

KMeansResult kmeans(const EmbeddingSet& set, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters) {
  set.validate();
  const std::size_t n = set.size();
  const std::size_t d = set.dim();
  if (k < 1) throw Error("kmeans: k must be >= 1");
  if (k > n) throw Error("kmeans: k exceeds the number of points");

  Rng rng(derive_seed(seed, "kmeans"));
  nn::Matrix centroids(k, d);

  // k-means++ seeding.
  {
    const std::size_t first = static_cast<std::size_t>(uniform_index(rng, n));
    std::copy(set.matrix.row(first), set.matrix.row(first) + d, centroids.row(0));
    nn::Vec best_d2(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      best_d2[i] = squared_distance(set.matrix.row(i), centroids.row(0), d);
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (const double x : best_d2) total += x;
      std::size_t chosen = 0;
      if (total > 0.0) {
        const double u = uniform01(rng) * total;
        double acc = 0.0;
        chosen = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          acc += best_d2[i];
          if (acc > u) {
            chosen = i;
            break;
          }
        }
      } else {
        chosen = static_cast<std::size_t>(uniform_index(rng, n));
      }
      std::copy(set.matrix.row(chosen), set.matrix.row(chosen) + d, centroids.row(c));
      for (std::size_t i = 0; i < n; ++i)
        best_d2[i] =
            std::min(best_d2[i], squared_distance(set.matrix.row(i), centroids.row(c), d));
    }
  }

  KMeansResult result;
  result.assignments.assign(n, 0);
  std::vector<std::size_t> counts(k, 0);

  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    // Assignment step (ties go to the lowest centroid index).
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d2 = squared_distance(set.matrix.row(i), centroids.row(0), d);
      for (std::size_t c = 1; c < k; ++c) {
        const double d2 = squared_distance(set.matrix.row(i), centroids.row(c), d);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = c;
        }
      }
      if (result.assignments[i] != best) {
        result.assignments[i] = best;
        changed = true;
      }
      wcss += best_d2;
    }
    result.wcss_history.push_back(wcss);
    if (!changed && iter > 0) break;

    // Update step.
    centroids.fill(0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      double* c = centroids.row(result.assignments[i]);
      const double* row = set.matrix.row(i);
      for (std::size_t x = 0; x < d; ++x) c[x] += row[x];
      ++counts[result.assignments[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      double* row = centroids.row(c);
      for (std::size_t x = 0; x < d; ++x) row[x] /= static_cast<double>(counts[c]);
    }
    // Re-seed empty clusters to the point farthest from its centroid. Since
    // no point is assigned to an empty cluster, this cannot raise the WCSS;
    // the far point is handed to the revived cluster so a second empty
    // cluster picks a different point.
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = 0;
      double far_d2 = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d2 = squared_distance(
            set.matrix.row(i), centroids.row(result.assignments[i]), d);
        if (d2 > far_d2) {
          far_d2 = d2;
          far = i;
        }
      }
      std::copy(set.matrix.row(far), set.matrix.row(far) + d, centroids.row(c));
      result.assignments[far] = c;
      counts[c] = 1;
    }
  }

  result.centroids = std::move(centroids);
  return result;
}

nn::Matrix centroid_distances(const nn::Matrix& centroids) {
  const std::size_t k = centroids.rows();
  nn::Matrix dist(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a + 1; b < k; ++b) {
      const double dd =
          std::sqrt(squared_distance(centroids.row(a), centroids.row(b), centroids.cols()));
      dist(a, b) = dd;
      dist(b, a) = dd;
    }
  return dist;
}

}  // namespace docfuse
