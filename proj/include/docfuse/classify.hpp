#pragma once

// Exemplar-based KNN classification, evaluation metrics, and the embedding
// analyses: confusion matrix, PCA 2-D export, KMeans over-clustering and
// centroid distances.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "docfuse/nn.hpp"

namespace docfuse {

struct EmbeddingSet {
  std::vector<std::string> ids;
  nn::Matrix matrix;  // |ids| x dim
  std::vector<std::optional<std::string>> labels;  // empty or one per id

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return matrix.cols(); }
  nn::Vec row_vec(std::size_t i) const;
  void validate() const;
};

// Same layout as the precomputed-embedding file: header dim, then
// "doc_id v1 ... v{dim}" per line, in set order.
void save_embeddings(const EmbeddingSet& set, const std::string& path);
EmbeddingSet load_embeddings(const std::string& path);

struct Prediction {
  std::string id;
  std::string label;
  std::vector<std::string> neighbor_ids;     // k of them (fewer when the pool is small)
  std::vector<double> neighbor_distances;    // ascending Euclidean
};

// Exact brute-force Euclidean KNN with equal-weight label mode. Distance
// ties at the k-th neighbor break by doc id; mode ties break by smallest
// summed neighbor distance, then lexicographically. An exemplar whose id
// equals `query_id` is excluded from its own neighborhood.
Prediction knn_classify(const std::string& query_id, const nn::Vec& query,
                        const EmbeddingSet& exemplars, std::size_t k);

struct ClassMetrics {
  std::string label;
  std::size_t support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
struct EvalReport {
  std::vector<ClassMetrics> per_class;  // every label present in gold
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double accuracy = 0.0;
};

EvalReport evaluate(const std::vector<Prediction>& predictions,
                    const std::map<std::string, std::string>& gold);

// Rows = gold, columns = predicted, over the union of labels seen.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> counts;
};
ConfusionMatrix confusion_matrix(const std::vector<Prediction>& predictions,
                                 const std::map<std::string, std::string>& gold);
void save_confusion_csv(const ConfusionMatrix& cm, const std::string& path);

// Mean-centered projection onto the top principal components (power
// iteration with deflation on the covariance). Ratios are non-increasing
// fractions of total variance.
struct PcaResult {
  nn::Matrix coordinates;  // |ids| x dims
  std::vector<double> explained_variance_ratio;
};
PcaResult pca_project(const EmbeddingSet& set, std::size_t dims);

// Lloyd iterations with k-means++ seeding; an emptied cluster is re-seeded
// to the point farthest from its centroid. wcss_history is recorded after
// every assignment step and is non-increasing.
struct KMeansResult {
  std::vector<std::size_t> assignments;
  nn::Matrix centroids;  // k x dim
  std::vector<double> wcss_history;
};
KMeansResult kmeans(const EmbeddingSet& set, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = 100);

// k x k symmetric Euclidean distances, zero diagonal.
nn::Matrix centroid_distances(const nn::Matrix& centroids);

}  // namespace docfuse
