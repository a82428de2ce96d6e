#pragma once

#include <optional>
#include <span>

#include "anticollapse/embedding.hpp"
#include "anticollapse/matrix.hpp"

namespace anticollapse {

struct RateParams {
    /// Precision of the Gaussian codebook.
    double epsilon = 0.5;
};

/// Which Gram matrix the log-determinant is taken over.
enum class GramSide {
    Auto,      ///< the smaller of the two
    Features,  ///< X^T X, d x d
    Samples,   ///< X X^T, n x n (the cosine-similarity form for unit rows)
};

/// Structural snapshot of an embedding space.
struct RateReport {
    double r_global = 0.0;
    double r_intra = 0.0;
    double r_proxy = 0.0;
    /// Intra/inter mean distance ratio; empty when either pair set is empty
    /// or the inter-class mean distance is zero.
    std::optional<double> density;
};

/// Scale factor d / (n eps^2) for an n x d operand.
double rate_scale(std::size_t rows, std::size_t cols, const RateParams& params);

/// Average Gaussian coding rate: 1/2 logdet(I + d/(n eps^2) * Gram), natural log.
/// The result does not depend on `side` beyond rounding.
double coding_rate(const Matrix& x, const RateParams& params, GramSide side = GramSide::Auto);

/// Gradient of coding_rate with respect to X:
///   a X (I + a X^T X)^-1 = a (I + a X X^T)^-1 X,  a = d / (n eps^2).
Matrix coding_rate_grad(const Matrix& x, const RateParams& params, GramSide side = GramSide::Auto);

/// Total coding length (n + d) * coding_rate(X).
double total_coding_length(const Matrix& x, const RateParams& params);

/// Sample-weighted sum of per-class rates, sum_j (n_j / n) R(X_j). Each class
/// subset uses its own row count in the scale factor.
double intra_class_rate(const Matrix& x, std::span<const Label> labels, const RateParams& params);

RateReport rate_report(const EmbeddingBatch& batch, const ProxySet& proxies, const RateParams& params);

}  // namespace anticollapse
