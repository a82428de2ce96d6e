#include "anticollapse/coding_rate.hpp"

#include "anticollapse/error.hpp"
#include "anticollapse/metrics.hpp"
#include "anticollapse/numerics.hpp"

namespace anticollapse {

namespace {

void check_operand(const Matrix& x, const RateParams& params) {
    if (!(params.epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
    if (x.rows() == 0 || x.cols() == 0) throw Error(ErrorKind::EmptyInput, "coding rate of an empty matrix");
    require_finite(x, "coding rate operand");
}

bool use_feature_side(const Matrix& x, GramSide side) {
    switch (side) {
        case GramSide::Features: return true;
        case GramSide::Samples: return false;
        case GramSide::Auto: break;
    }
    return x.cols() <= x.rows();
}

/// I + scale * g, in place.
Matrix shifted(Matrix g, double scale) {
    for (double& v : g.data()) v *= scale;
    for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) += 1.0;
    return g;
}

}  // namespace

double rate_scale(std::size_t rows, std::size_t cols, const RateParams& params) {
    return static_cast<double>(cols) / (static_cast<double>(rows) * params.epsilon * params.epsilon);
}

double coding_rate(const Matrix& x, const RateParams& params, GramSide side) {
    check_operand(x, params);
    const double scale = rate_scale(x.rows(), x.cols(), params);
    const Matrix gram = use_feature_side(x, side) ? gram_features(x) : gram_samples(x);
    return 0.5 * logdet_psd(shifted(gram, scale));
}

Matrix coding_rate_grad(const Matrix& x, const RateParams& params, GramSide side) {
    check_operand(x, params);
    const double scale = rate_scale(x.rows(), x.cols(), params);
    Matrix grad;
    if (use_feature_side(x, side)) {
        // (I + a X^T X)^-1 X^T is d x n; its transpose is X (I + a X^T X)^-1.
        grad = transpose(solve_psd(shifted(gram_features(x), scale), transpose(x)));
    } else {
        grad = solve_psd(shifted(gram_samples(x), scale), x);
    }
    for (double& v : grad.data()) v *= scale;
    return grad;
}

double total_coding_length(const Matrix& x, const RateParams& params) {
    return static_cast<double>(x.rows() + x.cols()) * coding_rate(x, params);
}

double intra_class_rate(const Matrix& x, std::span<const Label> labels, const RateParams& params) {
    if (x.rows() == 0) throw Error(ErrorKind::EmptyInput, "intra-class rate of an empty matrix");
    if (labels.size() != x.rows()) throw Error(ErrorKind::LengthMismatch, "labels length must equal rows");
    const double n = static_cast<double>(x.rows());
    double total = 0.0;
    for (const auto& rows : rows_by_class(labels)) {
        const Matrix subset = select_rows(x, rows);
        total += static_cast<double>(rows.size()) / n * coding_rate(subset, params);
    }
    return total;
}

RateReport rate_report(const EmbeddingBatch& batch, const ProxySet& proxies, const RateParams& params) {
    if (proxies.dim() != batch.dim())
        throw Error(ErrorKind::ShapeMismatch, "proxies and embeddings have different dimensions");
    RateReport report;
    report.r_global = coding_rate(batch.features, params);
    report.r_intra = intra_class_rate(batch.features, batch.labels, params);
    report.r_proxy = coding_rate(proxies.proxies, params);
    try {
        report.density = embedding_density(batch);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateInput) throw;
    }
    return report;
}

}  // namespace anticollapse
