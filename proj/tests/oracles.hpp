#pragma once

// Independent reference implementations used as test oracles. They only rely on
// the Matrix container, Eigen and brute-force loops, never on the library code
// they are checking.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "anticollapse/embedding.hpp"
#include "anticollapse/matrix.hpp"

namespace oracle {

using anticollapse::EmbeddingBatch;
using anticollapse::Label;
using anticollapse::Matrix;
using anticollapse::ProxySet;

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) e(i, j) = m(i, j);
    return e;
}

inline Matrix from_eigen(const Eigen::MatrixXd& e) {
    Matrix m(e.rows(), e.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i)
        for (Eigen::Index j = 0; j < e.cols(); ++j) m(i, j) = e(i, j);
    return m;
}

inline std::vector<double> eigenvalues(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(to_eigen(a), Eigen::EigenvaluesOnly);
    std::vector<double> out(solver.eigenvalues().data(), solver.eigenvalues().data() + a.rows());
    std::sort(out.begin(), out.end());
    return out;
}

/// R(X) = 1/2 sum log(1 + alpha * sigma_i^2) from the singular values of X.
inline double coding_rate(const Matrix& x, double eps) {
    if (x.rows() == 0 || x.cols() == 0) return 0.0;
    const double alpha = static_cast<double>(x.cols()) / (static_cast<double>(x.rows()) * eps * eps);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(x));
    double r = 0.0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
        const double s = svd.singularValues()(i);
        r += std::log1p(alpha * s * s);
    }
    return 0.5 * r;
}

/// Gradient of R through an explicit inverse: alpha * X (I + alpha X^T X)^{-1}.
inline Matrix coding_rate_grad(const Matrix& x, double eps) {
    const double alpha = static_cast<double>(x.cols()) / (static_cast<double>(x.rows()) * eps * eps);
    const Eigen::MatrixXd e = to_eigen(x);
    const Eigen::MatrixXd a =
        Eigen::MatrixXd::Identity(x.cols(), x.cols()) + alpha * e.transpose() * e;
    return from_eigen(alpha * e * a.inverse());
}

inline Matrix random_gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& gen, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = normal(gen);
    return m;
}

inline Matrix random_unit_rows(std::size_t rows, std::size_t cols, std::mt19937_64& gen) {
    Matrix m = random_gaussian(rows, cols, gen);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += m(i, j) * m(i, j);
        s = std::sqrt(s);
        for (std::size_t j = 0; j < cols; ++j) m(i, j) /= s;
    }
    return m;
}

inline double cosine(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
    return s;
}

inline double distance(const Matrix& a, std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - a(j, k)) * (a(i, k) - a(j, k));
    return std::sqrt(s);
}

/// Labels in [0, classes), each class guaranteed at least `min_per_class` rows.
inline std::vector<Label> random_labels(std::size_t n, std::size_t classes, std::mt19937_64& gen,
                                        std::size_t min_per_class = 1) {
    std::vector<Label> labels;
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t k = 0; k < min_per_class; ++k) labels.push_back(static_cast<Label>(c));
    std::uniform_int_distribution<Label> pick(0, static_cast<Label>(classes - 1));
    while (labels.size() < n) labels.push_back(pick(gen));
    std::shuffle(labels.begin(), labels.end(), gen);
    return labels;
}

/// Neighbours of q sorted by similarity descending; ties by lower index.
inline std::vector<std::size_t> ranking(const Matrix& x, std::size_t q) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < x.rows(); ++j)
        if (j != q) order.push_back(j);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return cosine(x, q, x, a) > cosine(x, q, x, b); });
    return order;
}

inline double recall_at(const EmbeddingBatch& b, std::size_t k) {
    double hits = 0.0;
    for (std::size_t q = 0; q < b.labels.size(); ++q) {
        const auto order = ranking(b.features, q);
        for (std::size_t r = 0; r < std::min(k, order.size()); ++r)
            if (b.labels[order[r]] == b.labels[q]) {
                hits += 1.0;
                break;
            }
    }
    return 100.0 * hits / static_cast<double>(b.labels.size());
}

inline double entropy(const std::map<Label, double>& counts, double n) {
    double h = 0.0;
    for (const auto& [k, c] : counts)
        if (c > 0) h -= (c / n) * std::log(c / n);
    return h;
}

inline double nmi(const std::vector<Label>& pred, const std::vector<Label>& truth) {
    const double n = static_cast<double>(pred.size());
    std::map<Label, double> cp, ct;
    std::map<std::pair<Label, Label>, double> joint;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        cp[pred[i]] += 1;
        ct[truth[i]] += 1;
        joint[{pred[i], truth[i]}] += 1;
    }
    double mi = 0.0;
    for (const auto& [key, c] : joint) mi += (c / n) * std::log(n * c / (cp[key.first] * ct[key.second]));
    const double hp = entropy(cp, n);
    const double ht = entropy(ct, n);
    if (hp + ht == 0.0) return 1.0;
    return mi / (0.5 * (hp + ht));
}

inline double pair_f1(const std::vector<Label>& pred, const std::vector<Label>& truth) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        for (std::size_t j = i + 1; j < pred.size(); ++j) {
            const bool sp = pred[i] == pred[j];
            const bool st = truth[i] == truth[j];
            if (sp && st) tp += 1;
            else if (sp) fp += 1;
            else if (st) fn += 1;
        }
    if (tp == 0) return 0.0;
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    return 2 * precision * recall / (precision + recall);
}

inline double mean_ap(const EmbeddingBatch& b, std::size_t cutoff) {
    double total = 0.0;
    for (std::size_t q = 0; q < b.labels.size(); ++q) {
        const auto order = ranking(b.features, q);
        std::size_t relevant = 0;
        for (std::size_t j : order) relevant += b.labels[j] == b.labels[q];
        if (relevant == 0) continue;
        double hits = 0.0, sum = 0.0;
        for (std::size_t r = 0; r < std::min(cutoff, order.size()); ++r)
            if (b.labels[order[r]] == b.labels[q]) {
                hits += 1.0;
                sum += hits / static_cast<double>(r + 1);
            }
        total += sum / static_cast<double>(std::min(relevant, cutoff));
    }
    return total / static_cast<double>(b.labels.size());
}

inline double density(const EmbeddingBatch& b) {
    double intra = 0, inter = 0, ni = 0, ne = 0;
    for (std::size_t i = 0; i < b.labels.size(); ++i)
        for (std::size_t j = i + 1; j < b.labels.size(); ++j) {
            const double d = distance(b.features, i, j);
            if (b.labels[i] == b.labels[j]) {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                ne += 1;
            }
        }
    return (intra / ni) / (inter / ne);
}

}  // namespace oracle
