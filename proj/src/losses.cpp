#include "anticollapse/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "anticollapse/error.hpp"
#include "anticollapse/numerics.hpp"

namespace anticollapse {

namespace {

constexpr double kSimilarityNormTolerance = 1e-6;

void check_batch(const EmbeddingBatch& batch) {
    if (batch.size() == 0) throw Error(ErrorKind::EmptyBatch, "batch has no rows");
    if (batch.labels.size() != batch.size())
        throw Error(ErrorKind::LengthMismatch, "labels length must equal number of embedding rows");
    require_finite(batch.features, "embeddings");
}

void check_proxies(const EmbeddingBatch& batch, const ProxySet& proxies) {
    if (proxies.size() == 0) throw Error(ErrorKind::EmptySelection, "proxy set is empty");
    if (proxies.class_ids.size() != proxies.size())
        throw Error(ErrorKind::LengthMismatch, "class_ids length must equal number of proxy rows");
    if (proxies.dim() != batch.dim())
        throw Error(ErrorKind::ShapeMismatch, "proxies and embeddings have different dimensions");
    require_finite(proxies.proxies, "proxies");
}

/// log(1 + sum_i exp(z_i)), stabilized. Writes d/dz_i into `weights`.
double log1p_sum_exp(std::span<const double> z, std::span<double> weights) {
    double top = 0.0;
    for (double v : z) top = std::max(top, v);
    double total = std::exp(-top);
    for (std::size_t i = 0; i < z.size(); ++i) {
        weights[i] = std::exp(z[i] - top);
        total += weights[i];
    }
    for (double& w : weights) w /= total;
    return top + std::log(total);
}

/// log sum_i exp(z_i), stabilized. Writes the softmax into `weights`.
double log_sum_exp(std::span<const double> z, std::span<double> weights) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : z) top = std::max(top, v);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        weights[i] = std::exp(z[i] - top);
        total += weights[i];
    }
    for (double& w : weights) w /= total;
    return top + std::log(total);
}

/// Given dL/dS for S = X P^T, fills both operand gradients.
void backprop_similarity(const Matrix& grad_sim, const Matrix& x, const Matrix& p, LossResult& out) {
    out.grad_embeddings = multiply(grad_sim, p);
    out.grad_proxies = multiply(transpose(grad_sim), x);
}

std::vector<std::size_t> proxy_rows_for(const ProxySet& proxies, std::span<const Label> classes) {
    std::vector<std::size_t> rows;
    for (Label c : distinct_labels(classes)) {
        const auto row = proxies.row_of(c);
        if (!row) {
            std::ostringstream msg;
            msg << "no proxy for class " << c;
            throw Error(ErrorKind::MissingProxy, msg.str());
        }
        rows.push_back(*row);
    }
    std::sort(rows.begin(), rows.end());
    if (rows.empty()) throw Error(ErrorKind::EmptySelection, "class filter selects no proxies");
    return rows;
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    return rows;
}

LossResult base_loss(const EmbeddingBatch& batch, const ProxySet& proxies, const AntiCollapseConfig& config) {
    switch (config.base) {
        case BaseLoss::ProxyAnchor: return proxy_anchor(batch, proxies, config.anchor);
        case BaseLoss::ProxyNca: return proxy_nca(batch, proxies, config.nca);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown base loss");
}

void check_nu(double nu) {
    if (!(nu >= 0.0) || !std::isfinite(nu)) throw Error(ErrorKind::InvalidArgument, "nu must be finite and >= 0");
}

}  // namespace

Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b) {
    require_finite(a, "similarity operand");
    require_finite(b, "similarity operand");
    for (const Matrix* m : {&a, &b}) {
        for (std::size_t i = 0; i < m->rows(); ++i) {
            const double n = norm(m->row(i));
            if (std::abs(n - 1.0) > kSimilarityNormTolerance) {
                std::ostringstream msg;
                msg << "row " << i << " has norm " << n;
                throw Error(ErrorKind::NotNormalized, msg.str());
            }
        }
    }
    return multiply_transposed(a, b);
}

LossResult pair_anticollapse(const EmbeddingBatch& batch, const RateParams& params) {
    if (batch.size() == 0) throw Error(ErrorKind::EmptyInput, "batch has no rows");
    require_finite(batch.features, "embeddings");
    LossResult out;
    out.value = -coding_rate(batch.features, params, GramSide::Samples);
    Matrix grad = coding_rate_grad(batch.features, params, GramSide::Samples);
    for (double& v : grad.data()) v = -v;
    out.grad_embeddings = std::move(grad);
    return out;
}

LossResult proxy_nca(const EmbeddingBatch& batch, const ProxySet& proxies, const ProxyNcaParams& params) {
    check_batch(batch);
    check_proxies(batch, proxies);
    const std::size_t n = batch.size();
    const std::size_t m = proxies.size();
    if (!params.include_positive_in_denominator && m < 2)
        throw Error(ErrorKind::NoNegativeProxies, "ProxyNCA needs at least one negative proxy");

    const Matrix sim = multiply_transposed(batch.features, proxies.proxies);
    Matrix grad_sim(n, m);
    std::vector<double> logits;
    std::vector<double> weights;
    std::vector<std::size_t> columns;
    double total = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t i = 0; i < n; ++i) {
        const auto positive = proxies.row_of(batch.labels[i]);
        if (!positive) {
            std::ostringstream msg;
            msg << "no proxy for class " << batch.labels[i];
            throw Error(ErrorKind::MissingProxy, msg.str());
        }
        logits.clear();
        columns.clear();
        for (std::size_t j = 0; j < m; ++j) {
            if (j == *positive && !params.include_positive_in_denominator) continue;
            logits.push_back(sim(i, j));
            columns.push_back(j);
        }
        weights.assign(logits.size(), 0.0);
        total += log_sum_exp(logits, weights) - sim(i, *positive);
        grad_sim(i, *positive) -= inv_n;
        for (std::size_t k = 0; k < columns.size(); ++k) grad_sim(i, columns[k]) += inv_n * weights[k];
    }

    LossResult out;
    out.value = total * inv_n;
    backprop_similarity(grad_sim, batch.features, proxies.proxies, out);
    return out;
}

LossResult proxy_anchor(const EmbeddingBatch& batch, const ProxySet& proxies, const ProxyAnchorParams& params) {
    check_batch(batch);
    check_proxies(batch, proxies);
    if (!(params.alpha > 0.0)) throw Error(ErrorKind::InvalidArgument, "alpha must be positive");
    const std::size_t n = batch.size();
    const std::size_t m = proxies.size();
    const Matrix sim = multiply_transposed(batch.features, proxies.proxies);

    // Per proxy: log-sum terms and their weights over positives / negatives.
    std::vector<double> pos_terms(m, 0.0);
    std::vector<double> neg_terms(m, 0.0);
    Matrix pos_weights(n, m);
    Matrix neg_weights(n, m);
    std::size_t with_positives = 0;
    std::vector<double> z;
    std::vector<double> w;
    std::vector<std::size_t> members;

    for (std::size_t j = 0; j < m; ++j) {
        const Label cls = proxies.class_ids[j];
        for (bool positive : {true, false}) {
            z.clear();
            members.clear();
            for (std::size_t i = 0; i < n; ++i) {
                if ((batch.labels[i] == cls) != positive) continue;
                z.push_back(positive ? -params.alpha * (sim(i, j) - params.delta)
                                     : params.alpha * (sim(i, j) + params.delta));
                members.push_back(i);
            }
            if (members.empty()) continue;
            w.assign(z.size(), 0.0);
            const double term = log1p_sum_exp(z, w);
            Matrix& weights = positive ? pos_weights : neg_weights;
            for (std::size_t k = 0; k < members.size(); ++k) weights(members[k], j) = w[k];
            if (positive) {
                pos_terms[j] = term;
                ++with_positives;
            } else {
                neg_terms[j] = term;
            }
        }
    }

    LossResult out;
    const double pos_scale = with_positives > 0 ? 1.0 / static_cast<double>(with_positives) : 0.0;
    const double neg_scale = 1.0 / static_cast<double>(m);
    double pos_sum = 0.0;
    double neg_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        pos_sum += pos_terms[j];
        neg_sum += neg_terms[j];
    }
    out.value = pos_scale * pos_sum + neg_scale * neg_sum;
    if (with_positives == 0) out.notes.emplace_back("no proxy has a positive sample in the batch; positive term is 0");

    Matrix grad_sim(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            grad_sim(i, j) = -params.alpha * pos_scale * pos_weights(i, j) + params.alpha * neg_scale * neg_weights(i, j);
        }
    }
    backprop_similarity(grad_sim, batch.features, proxies.proxies, out);
    return out;
}

double proxy_rate(const ProxySet& proxies, std::optional<std::span<const Label>> class_filter,
                  const RateParams& params) {
    if (proxies.size() == 0) throw Error(ErrorKind::EmptySelection, "proxy set is empty");
    const auto rows = class_filter ? proxy_rows_for(proxies, *class_filter) : all_rows(proxies.size());
    return coding_rate(select_rows(proxies.proxies, rows), params);
}

Matrix proxy_rate_grad(const ProxySet& proxies, std::optional<std::span<const Label>> class_filter,
                       const RateParams& params) {
    if (proxies.size() == 0) throw Error(ErrorKind::EmptySelection, "proxy set is empty");
    const auto rows = class_filter ? proxy_rows_for(proxies, *class_filter) : all_rows(proxies.size());
    const Matrix sub = coding_rate_grad(select_rows(proxies.proxies, rows), params);
    Matrix grad(proxies.size(), proxies.dim());
    for (std::size_t k = 0; k < rows.size(); ++k)
        std::copy(sub.row(k).begin(), sub.row(k).end(), grad.row(rows[k]).begin());
    return grad;
}

std::vector<std::size_t> selected_proxy_rows(const EmbeddingBatch& batch, const ProxySet& proxies,
                                             ProxyVariant variant) {
    if (variant == ProxyVariant::AllClass) return all_rows(proxies.size());
    return proxy_rows_for(proxies, batch.labels);
}

LossResult proxy_anticollapse(const EmbeddingBatch& batch, const ProxySet& proxies,
                              const AntiCollapseConfig& config) {
    check_nu(config.nu);
    LossResult base = base_loss(batch, proxies, config);

    std::optional<std::span<const Label>> filter;
    if (config.variant == ProxyVariant::MiniBatch) filter = std::span<const Label>(batch.labels);
    const double rate = proxy_rate(proxies, filter, config.rate);
    Matrix rate_grad = proxy_rate_grad(proxies, filter, config.rate);

    LossResult out;
    out.value = -rate + config.nu * base.value;
    Matrix grad_proxies = std::move(*base.grad_proxies);
    for (double& v : grad_proxies.data()) v *= config.nu;
    add_scaled(grad_proxies, rate_grad, -1.0);
    out.grad_proxies = std::move(grad_proxies);
    Matrix grad_embeddings = std::move(*base.grad_embeddings);
    for (double& v : grad_embeddings.data()) v *= config.nu;
    out.grad_embeddings = std::move(grad_embeddings);
    out.notes = std::move(base.notes);
    return out;
}

LossResult pair_plus_proxy(const EmbeddingBatch& batch, const ProxySet& proxies, const AntiCollapseConfig& config) {
    check_nu(config.nu);
    LossResult base = base_loss(batch, proxies, config);
    LossResult pair = pair_anticollapse(batch, config.rate);

    LossResult out;
    out.value = pair.value + config.nu * base.value;
    Matrix grad_embeddings = std::move(*pair.grad_embeddings);
    add_scaled(grad_embeddings, *base.grad_embeddings, config.nu);
    out.grad_embeddings = std::move(grad_embeddings);
    Matrix grad_proxies = std::move(*base.grad_proxies);
    for (double& v : grad_proxies.data()) v *= config.nu;
    out.grad_proxies = std::move(grad_proxies);
    out.notes = std::move(base.notes);
    return out;
}

}  // namespace anticollapse
