#include "anticollapse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/embedding.hpp"
#include "anticollapse/error.hpp"
#include "anticollapse/losses.hpp"
#include "anticollapse/numerics.hpp"
#include "anticollapse/rng.hpp"

namespace anticollapse {

Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double step) {
    Matrix probe = x;
    Matrix grad(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe.data()[i];
        probe.data()[i] = orig + step;
        const double plus = f(probe);
        probe.data()[i] = orig - step;
        const double minus = f(probe);
        probe.data()[i] = orig;
        grad.data()[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

double gradient_relative_error(const Matrix& analytic, const Matrix& numeric) {
    return max_abs_diff(analytic, numeric) / std::max(max_abs(numeric), 1e-8);
}

std::string_view to_string(LossFamily family) noexcept {
    switch (family) {
        case LossFamily::CodingRate: return "coding_rate";
        case LossFamily::PairAntiCollapse: return "pair_anticollapse";
        case LossFamily::ProxyNca: return "proxy_nca";
        case LossFamily::ProxyAnchor: return "proxy_anchor";
        case LossFamily::ProxyAntiCollapse: return "proxy_anticollapse";
    }
    return "unknown";
}

std::optional<LossFamily> parse_loss_family(std::string_view name) noexcept {
    for (auto f : all_loss_families())
        if (to_string(f) == name) return f;
    return std::nullopt;
}

std::vector<LossFamily> all_loss_families() {
    return {LossFamily::CodingRate, LossFamily::PairAntiCollapse, LossFamily::ProxyNca, LossFamily::ProxyAnchor,
            LossFamily::ProxyAntiCollapse};
}

namespace {

std::size_t between(SeededRng& rng, std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng.uniform_index(hi - lo + 1));
}

Matrix random_unit_rows(SeededRng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = rng.normal();
    normalize_rows(m);
    return m;
}

struct Instance {
    EmbeddingBatch batch;
    ProxySet proxies;
};

Instance random_instance(SeededRng& rng) {
    const std::size_t n = between(rng, 2, 16);
    const std::size_t d = between(rng, 2, 8);
    const std::size_t m = between(rng, 2, 6);
    Instance inst;
    inst.batch.features = random_unit_rows(rng, n, d);
    for (std::size_t i = 0; i < n; ++i) inst.batch.labels.push_back(static_cast<Label>(rng.uniform_index(m)));
    inst.proxies.proxies = random_unit_rows(rng, m, d);
    for (std::size_t j = 0; j < m; ++j) inst.proxies.class_ids.push_back(static_cast<Label>(j));
    return inst;
}

/// Relative error of both operand gradients of a batch/proxy loss.
double check_batch_loss(const std::function<LossResult(const EmbeddingBatch&, const ProxySet&)>& loss,
                        const Instance& inst, const GradcheckOptions& options) {
    const LossResult analytic = loss(inst.batch, inst.proxies);
    const double sign = options.negate_analytic ? -1.0 : 1.0;
    double worst = 0.0;
    if (analytic.grad_embeddings) {
        const auto f = [&](const Matrix& x) {
            EmbeddingBatch b{x, inst.batch.labels};
            return loss(b, inst.proxies).value;
        };
        Matrix g = *analytic.grad_embeddings;
        for (double& v : g.data()) v *= sign;
        worst = std::max(worst, gradient_relative_error(g, finite_difference_gradient(f, inst.batch.features, options.step)));
    }
    if (analytic.grad_proxies) {
        const auto f = [&](const Matrix& p) {
            ProxySet ps{p, inst.proxies.class_ids};
            return loss(inst.batch, ps).value;
        };
        Matrix g = *analytic.grad_proxies;
        for (double& v : g.data()) v *= sign;
        worst = std::max(worst, gradient_relative_error(g, finite_difference_gradient(f, inst.proxies.proxies, options.step)));
    }
    return worst;
}

}  // namespace

std::vector<FamilyReport> run_gradcheck(const GradcheckOptions& options) {
    std::vector<FamilyReport> reports;
    const RateParams& rate = options.rate;
    for (LossFamily family : options.families) {
        FamilyReport report{family};
        SeededRng rng = SeededRng::derive(options.seed, static_cast<std::uint64_t>(family));
        for (std::size_t c = 0; c < options.cases; ++c) {
            ++report.cases;
            double err = 0.0;
            switch (family) {
                case LossFamily::CodingRate: {
                    const std::size_t n = between(rng, 1, 16);
                    const std::size_t d = between(rng, 1, 8);
                    Matrix x(n, d);
                    for (double& v : x.data()) v = rng.normal();
                    Matrix g = coding_rate_grad(x, rate);
                    if (options.negate_analytic)
                        for (double& v : g.data()) v = -v;
                    const auto f = [&](const Matrix& m) { return coding_rate(m, rate); };
                    err = gradient_relative_error(g, finite_difference_gradient(f, x, options.step));
                    ++report.checks;
                    break;
                }
                case LossFamily::PairAntiCollapse: {
                    const Instance inst = random_instance(rng);
                    err = check_batch_loss([&](const EmbeddingBatch& b, const ProxySet&) { return pair_anticollapse(b, rate); },
                                           inst, options);
                    ++report.checks;
                    break;
                }
                case LossFamily::ProxyNca: {
                    const Instance inst = random_instance(rng);
                    err = check_batch_loss([](const EmbeddingBatch& b, const ProxySet& p) { return proxy_nca(b, p); }, inst,
                                           options);
                    ++report.checks;
                    break;
                }
                case LossFamily::ProxyAnchor: {
                    const Instance inst = random_instance(rng);
                    err = check_batch_loss([&](const EmbeddingBatch& b, const ProxySet& p) { return proxy_anchor(b, p, options.anchor); },
                                           inst, options);
                    ++report.checks;
                    break;
                }
                case LossFamily::ProxyAntiCollapse: {
                    const Instance inst = random_instance(rng);
                    for (ProxyVariant variant : {ProxyVariant::AllClass, ProxyVariant::MiniBatch}) {
                        AntiCollapseConfig config;
                        config.variant = variant;
                        config.rate = rate;
                        config.anchor = options.anchor;
                        config.nu = options.nu;
                        config.base = c % 2 == 0 ? BaseLoss::ProxyAnchor : BaseLoss::ProxyNca;
                        err = std::max(err, check_batch_loss(
                                                [&](const EmbeddingBatch& b, const ProxySet& p) {
                                                    return proxy_anticollapse(b, p, config);
                                                },
                                                inst, options));
                        ++report.checks;
                    }
                    break;
                }
            }
            report.max_relative_error = std::max(report.max_relative_error, err);
        }
        reports.push_back(report);
    }
    return reports;
}

}  // namespace anticollapse
