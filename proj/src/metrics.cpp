#include "anticollapse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "anticollapse/error.hpp"
#include "anticollapse/losses.hpp"
#include "anticollapse/numerics.hpp"
#include "anticollapse/rng.hpp"

namespace anticollapse {

namespace {

void check_labels(const EmbeddingBatch& batch) {
    if (batch.labels.size() != batch.size())
        throw Error(ErrorKind::LengthMismatch, "labels length must equal number of embedding rows");
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

/// Contingency counts keyed by (pred, truth) plus both marginals.
struct Contingency {
    std::map<std::pair<Label, Label>, double> joint;
    std::map<Label, double> pred;
    std::map<Label, double> truth;
    double total = 0.0;
};

Contingency contingency(std::span<const Label> pred, std::span<const Label> truth) {
    if (pred.size() != truth.size()) throw Error(ErrorKind::LengthMismatch, "partitions differ in length");
    if (pred.empty()) throw Error(ErrorKind::EmptyInput, "empty partitions");
    Contingency c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        c.joint[{pred[i], truth[i]}] += 1.0;
        c.pred[pred[i]] += 1.0;
        c.truth[truth[i]] += 1.0;
    }
    c.total = static_cast<double>(pred.size());
    return c;
}

double entropy(const std::map<Label, double>& counts, double total) {
    double h = 0.0;
    for (const auto& [_, c] : counts) {
        const double p = c / total;
        h -= p * std::log(p);
    }
    return h;
}

double pairs(double count) { return count * (count - 1.0) / 2.0; }

}  // namespace

std::vector<std::size_t> rank_neighbors(const Matrix& features, std::size_t query) {
    if (query >= features.rows()) throw Error(ErrorKind::InvalidArgument, "query row out of range");
    std::vector<double> sims(features.rows());
    for (std::size_t j = 0; j < features.rows(); ++j) sims[j] = dot(features.row(query), features.row(j));
    std::vector<std::size_t> order;
    order.reserve(features.rows() - 1);
    for (std::size_t j = 0; j < features.rows(); ++j)
        if (j != query) order.push_back(j);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sims[a] != sims[b]) return sims[a] > sims[b];
        return a < b;
    });
    return order;
}

std::map<std::size_t, double> recall_at_k(const EmbeddingBatch& batch, std::span<const std::size_t> ks) {
    check_labels(batch);
    const std::size_t n = batch.size();
    if (n < 2) throw Error(ErrorKind::EmptyInput, "recall needs at least two rows");
    for (std::size_t k : ks) {
        if (k == 0) throw Error(ErrorKind::InvalidArgument, "K must be positive");
        if (k >= n) throw Error(ErrorKind::KTooLarge, "K must be smaller than the number of rows");
    }
    // Rank of the first same-class neighbor per query (n - 1 when none).
    std::vector<std::size_t> first_hit(n, n - 1);
    for (std::size_t q = 0; q < n; ++q) {
        const auto order = rank_neighbors(batch.features, q);
        for (std::size_t r = 0; r < order.size(); ++r) {
            if (batch.labels[order[r]] == batch.labels[q]) {
                first_hit[q] = r;
                break;
            }
        }
    }
    std::map<std::size_t, double> out;
    for (std::size_t k : ks) {
        const auto hits = std::count_if(first_hit.begin(), first_hit.end(), [k](std::size_t r) { return r < k; });
        out[k] = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
    }
    return out;
}

KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed) {
    const std::size_t n = x.rows();
    if (k == 0) throw Error(ErrorKind::InvalidArgument, "k must be positive");
    if (k > n) throw Error(ErrorKind::KTooLarge, "k exceeds the number of rows");
    require_finite(x, "k-means input");
    SeededRng rng(seed);

    // k-means++ seeding
    std::vector<std::size_t> chosen;
    std::vector<bool> taken(n, false);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    auto take = [&](std::size_t idx) {
        chosen.push_back(idx);
        taken[idx] = true;
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_distance(x.row(i), x.row(idx)));
    };
    take(static_cast<std::size_t>(rng.uniform_index(n)));
    while (chosen.size() < k) {
        const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
        std::size_t pick = n;
        if (total > 0.0) {
            const double target = rng.uniform() * total;
            double running = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                running += nearest[i];
                if (nearest[i] > 0.0 && running > target) {
                    pick = i;
                    break;
                }
            }
            if (pick == n) {  // rounding at the tail
                for (std::size_t i = n; i-- > 0;)
                    if (nearest[i] > 0.0) { pick = i; break; }
            }
        } else {
            // Every point coincides with a chosen centroid.
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < n; ++i)
                if (!taken[i]) free.push_back(i);
            pick = free[static_cast<std::size_t>(rng.uniform_index(free.size()))];
        }
        take(pick);
    }

    KMeansResult result;
    result.centroids = select_rows(x, chosen);
    result.assignments.assign(n, std::numeric_limits<Label>::max());
    std::vector<Label>& assign = result.assignments;
    const std::size_t d = x.cols();

    for (std::size_t iter = 0; iter < kKMeansMaxIterations; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < n; ++i) {
            Label best = 0;
            double best_dist = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                const double dist = squared_distance(x.row(i), result.centroids.row(c));
                if (dist < best_dist) {
                    best_dist = dist;
                    best = static_cast<Label>(c);
                }
            }
            if (assign[i] != best) {
                changed = true;
                assign[i] = best;
            }
        }
        result.iterations = iter + 1;
        if (!changed) break;

        Matrix sums(k, d);
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[assign[i]];
            auto dst = sums.row(assign[i]);
            const auto src = x.row(i);
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            auto dst = result.centroids.row(c);
            const auto src = sums.row(c);
            for (std::size_t j = 0; j < d; ++j) dst[j] = src[j] / static_cast<double>(counts[c]);
        }
    }

    result.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) result.inertia += squared_distance(x.row(i), result.centroids.row(assign[i]));
    return result;
}

std::vector<Label> kmeans_cluster(const Matrix& x, std::size_t k, std::uint64_t seed) {
    return kmeans(x, k, seed).assignments;
}

double clustering_inertia(const Matrix& x, std::span<const Label> assignments) {
    if (assignments.size() != x.rows()) throw Error(ErrorKind::LengthMismatch, "one assignment per row required");
    const auto groups = rows_by_class(assignments);
    double inertia = 0.0;
    for (const auto& rows : groups) {
        std::vector<double> centroid(x.cols(), 0.0);
        for (std::size_t r : rows)
            for (std::size_t j = 0; j < x.cols(); ++j) centroid[j] += x(r, j);
        for (double& v : centroid) v /= static_cast<double>(rows.size());
        for (std::size_t r : rows) inertia += squared_distance(x.row(r), centroid);
    }
    return inertia;
}

double nmi(std::span<const Label> pred, std::span<const Label> truth) {
    const Contingency c = contingency(pred, truth);
    const double h_pred = entropy(c.pred, c.total);
    const double h_truth = entropy(c.truth, c.total);
    if (c.pred.size() == 1 && c.truth.size() == 1) return 1.0;
    double mi = 0.0;
    for (const auto& [key, count] : c.joint) {
        const double pij = count / c.total;
        const double pi = c.pred.at(key.first) / c.total;
        const double pj = c.truth.at(key.second) / c.total;
        mi += pij * std::log(pij / (pi * pj));
    }
    const double denom = 0.5 * (h_pred + h_truth);
    return std::clamp(mi / denom, 0.0, 1.0);
}

double f1_clustering(std::span<const Label> pred, std::span<const Label> truth) {
    const Contingency c = contingency(pred, truth);
    double together = 0.0;
    for (const auto& [_, count] : c.joint) together += pairs(count);
    double pred_pairs = 0.0;
    for (const auto& [_, count] : c.pred) pred_pairs += pairs(count);
    double truth_pairs = 0.0;
    for (const auto& [_, count] : c.truth) truth_pairs += pairs(count);
    if (pred_pairs == 0.0 && truth_pairs == 0.0) return 1.0;
    const double precision = pred_pairs > 0.0 ? together / pred_pairs : 0.0;
    const double recall = truth_pairs > 0.0 ? together / truth_pairs : 0.0;
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double mean_average_precision(const EmbeddingBatch& batch, std::size_t cutoff) {
    check_labels(batch);
    const std::size_t n = batch.size();
    if (n < 2) throw Error(ErrorKind::EmptyInput, "mAP needs at least two rows");
    if (cutoff == 0) throw Error(ErrorKind::InvalidArgument, "cutoff must be positive");
    double total = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
        const auto relevant = static_cast<std::size_t>(
            std::count(batch.labels.begin(), batch.labels.end(), batch.labels[q]) - 1);
        if (relevant == 0) continue;
        const auto order = rank_neighbors(batch.features, q);
        const std::size_t depth = std::min(cutoff, order.size());
        double hits = 0.0;
        double precision_sum = 0.0;
        for (std::size_t r = 0; r < depth; ++r) {
            if (batch.labels[order[r]] != batch.labels[q]) continue;
            hits += 1.0;
            precision_sum += hits / static_cast<double>(r + 1);
        }
        total += precision_sum / static_cast<double>(std::min(cutoff, relevant));
    }
    return total / static_cast<double>(n);
}

double embedding_density(const EmbeddingBatch& batch) {
    check_labels(batch);
    double intra = 0.0;
    double inter = 0.0;
    std::size_t intra_count = 0;
    std::size_t inter_count = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = i + 1; j < batch.size(); ++j) {
            const double dist = std::sqrt(squared_distance(batch.features.row(i), batch.features.row(j)));
            if (batch.labels[i] == batch.labels[j]) {
                intra += dist;
                ++intra_count;
            } else {
                inter += dist;
                ++inter_count;
            }
        }
    }
    if (intra_count == 0) throw Error(ErrorKind::DegenerateInput, "no intra-class pairs");
    if (inter_count == 0) throw Error(ErrorKind::DegenerateInput, "no inter-class pairs");
    if (inter == 0.0) throw Error(ErrorKind::DegenerateInput, "mean inter-class distance is zero");
    return (intra / static_cast<double>(intra_count)) / (inter / static_cast<double>(inter_count));
}

Matrix proxy_similarity_heat(const ProxySet& proxies) {
    return cosine_similarity_matrix(proxies.proxies, proxies.proxies);
}

double max_off_diagonal(const Matrix& m) {
    double out = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j)
            if (i != j) out = std::max(out, std::abs(m(i, j)));
    return out;
}

SimilarityHistogram similarity_histogram(const EmbeddingBatch& batch, std::size_t bins) {
    check_labels(batch);
    if (bins == 0) throw Error(ErrorKind::InvalidArgument, "histogram needs at least one bin");
    SimilarityHistogram h;
    h.edges.resize(bins + 1);
    for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins);
    h.positive.assign(bins, 0);
    h.negative.assign(bins, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = i + 1; j < batch.size(); ++j) {
            const double s = std::clamp(dot(batch.features.row(i), batch.features.row(j)), -1.0, 1.0);
            auto bin = static_cast<std::size_t>((s + 1.0) / 2.0 * static_cast<double>(bins));
            bin = std::min(bin, bins - 1);
            ++(batch.labels[i] == batch.labels[j] ? h.positive : h.negative)[bin];
        }
    }
    return h;
}

EvalReport evaluate(const EmbeddingBatch& batch, const EvalOptions& options) {
    check_labels(batch);
    EvalReport report;
    report.recall_at = recall_at_k(batch, options.ks);
    const std::size_t classes = distinct_labels(batch.labels).size();
    const auto clusters = kmeans_cluster(batch.features, classes, options.seed);
    report.nmi = nmi(clusters, batch.labels);
    report.f1 = f1_clustering(clusters, batch.labels);
    report.map_at[options.map_cutoff] = mean_average_precision(batch, options.map_cutoff);
    try {
        report.density = embedding_density(batch);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateInput) throw;
    }
    return report;
}

}  // namespace anticollapse
