#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "anticollapse/embedding.hpp"
#include "anticollapse/matrix.hpp"

namespace anticollapse {

/// Indices of every row except `query`, ordered by descending cosine
/// similarity to it; ties go to the lower row index.
std::vector<std::size_t> rank_neighbors(const Matrix& features, std::size_t query);

/// Recall@K in percent for each K. K must be smaller than the row count.
std::map<std::size_t, double> recall_at_k(const EmbeddingBatch& batch, std::span<const std::size_t> ks);

struct KMeansResult {
    std::vector<Label> assignments;
    Matrix centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
};

inline constexpr std::size_t kKMeansMaxIterations = 300;

/// Lloyd's algorithm from a seeded k-means++ start. Stops at an assignment
/// fixpoint or after kKMeansMaxIterations.
KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed);

/// Cluster id per row, as kmeans().assignments.
std::vector<Label> kmeans_cluster(const Matrix& x, std::size_t k, std::uint64_t seed);

/// Sum of squared distances from each row to the centroid of its cluster.
double clustering_inertia(const Matrix& x, std::span<const Label> assignments);

/// MI / mean(H(pred), H(truth)); 1 when both partitions are a single cluster.
double nmi(std::span<const Label> pred, std::span<const Label> truth);

/// Pairwise F1 of same-cluster pairs against same-class pairs. Two all-singleton
/// partitions are identical and score 1.
double f1_clustering(std::span<const Label> pred, std::span<const Label> truth);

/// mAP over ranked lists truncated at `cutoff`, each AP normalized by
/// min(cutoff, #relevant). Queries without relevant rows score 0.
double mean_average_precision(const EmbeddingBatch& batch, std::size_t cutoff);

/// Mean intra-class Euclidean distance over mean inter-class distance.
double embedding_density(const EmbeddingBatch& batch);

/// Proxy-to-proxy cosine similarities.
Matrix proxy_similarity_heat(const ProxySet& proxies);

/// Largest |off-diagonal| entry of a square matrix (0 for 1x1).
double max_off_diagonal(const Matrix& m);

/// Cosine-similarity histogram of positive (same class) and negative pairs
/// over [-1, 1]. Each unordered pair i < j is counted once.
struct SimilarityHistogram {
    std::vector<double> edges;  ///< bins + 1 edges
    std::vector<std::uint64_t> positive;
    std::vector<std::uint64_t> negative;
};

SimilarityHistogram similarity_histogram(const EmbeddingBatch& batch, std::size_t bins);

struct EvalOptions {
    std::vector<std::size_t> ks{1, 2};
    std::size_t map_cutoff = 1000;
    std::uint64_t seed = 0;  ///< k-means seed
};

struct EvalReport {
    std::map<std::size_t, double> recall_at;
    double nmi = 0.0;
    double f1 = 0.0;
    std::map<std::size_t, double> map_at;
    std::optional<double> density;
};

/// Full retrieval/clustering evaluation. Clustering uses k-means with
/// k = number of distinct classes.
EvalReport evaluate(const EmbeddingBatch& batch, const EvalOptions& options);

}  // namespace anticollapse
