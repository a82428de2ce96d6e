#include "anticollapse/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "anticollapse/error.hpp"
#include "anticollapse/metrics.hpp"
#include "anticollapse/numerics.hpp"
#include "anticollapse/rng.hpp"
#include "format.hpp"

namespace anticollapse {

namespace {

// Stream ids for SeededRng::derive.
constexpr std::uint64_t kProxyStream = 0;
constexpr std::uint64_t kSamplerStream = 1;
constexpr std::uint64_t kClusterStream = 2;

void check_config(const TrainConfig& config) {
    if (!(config.lr >= 0.0) || !std::isfinite(config.lr)) throw Error(ErrorKind::InvalidArgument, "lr must be finite and >= 0");
    if (!(config.proxy_lr_multiplier > 0.0)) throw Error(ErrorKind::InvalidArgument, "proxy_lr_multiplier must be positive");
    if (config.epochs < 1) throw Error(ErrorKind::InvalidArgument, "epochs must be >= 1");
    if (config.eval_every < 1) throw Error(ErrorKind::InvalidArgument, "eval_every must be >= 1");
}

void require_finite_gradient(const std::optional<Matrix>& grad, const char* what, const LossResult& result) {
    if (!grad || grad->all_finite()) return;
    std::ostringstream msg;
    msg << what << " gradient has non-finite entries (loss value " << result.value << ", max |g| "
        << max_abs(*grad) << ")";
    throw Error(ErrorKind::NonFiniteGradient, msg.str());
}

/// x -= step * g for each row with a nonzero gradient, then re-projects those
/// rows onto the unit sphere.
void projected_update(Matrix& params, std::span<const std::size_t> rows, const Matrix& grad, double step) {
    // Rows may repeat when sampling with replacement: accumulate first.
    std::map<std::size_t, std::vector<double>> updates;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto g = grad.row(k);
        if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;
        auto& acc = updates[rows[k]];
        acc.resize(params.cols(), 0.0);
        for (std::size_t j = 0; j < g.size(); ++j) acc[j] += g[j];
    }
    for (const auto& [r, g] : updates) {
        auto row = params.row(r);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] -= step * g[j];
        const double n = norm(row);
        if (n == 0.0) throw Error(ErrorKind::NonFiniteGradient, "update collapsed a row to zero");
        for (double& v : row) v /= n;
    }
}

std::vector<std::size_t> iota(std::size_t n) {
    std::vector<std::size_t> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
}

}  // namespace

std::string_view to_string(LossKind kind) noexcept {
    switch (kind) {
        case LossKind::ProxyAnchor: return "pa";
        case LossKind::ProxyNca: return "pnca";
        case LossKind::PairAntiCollapse: return "pair";
        case LossKind::PairPlusProxy: return "pair+proxy";
        case LossKind::AntiCollapse: return "antico";
    }
    return "unknown";
}

std::optional<LossKind> parse_loss_kind(std::string_view name) noexcept {
    for (auto kind : {LossKind::ProxyAnchor, LossKind::ProxyNca, LossKind::PairAntiCollapse, LossKind::PairPlusProxy,
                      LossKind::AntiCollapse}) {
        if (to_string(kind) == name) return kind;
    }
    return std::nullopt;
}

const TrainRecord* TrainTrace::best_recall() const noexcept {
    const TrainRecord* best = nullptr;
    for (const auto& r : records)
        if (!best || r.recall1 > best->recall1) best = &r;
    return best;
}

ProxySet init_proxies(std::span<const Label> class_ids, std::size_t dim, std::uint64_t seed) {
    if (dim < 1) throw Error(ErrorKind::InvalidArgument, "proxy dimension must be >= 1");
    SeededRng rng(seed);
    ProxySet proxies;
    proxies.class_ids.assign(class_ids.begin(), class_ids.end());
    proxies.proxies = Matrix(class_ids.size(), dim);
    for (std::size_t i = 0; i < proxies.size(); ++i) {
        auto row = proxies.proxies.row(i);
        double n = 0.0;
        while (n == 0.0) {
            for (double& v : row) v = rng.normal();
            n = norm(row);
        }
        for (double& v : row) v /= n;
    }
    return proxies;
}

ProxySet init_proxies(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
    std::vector<Label> ids(num_classes);
    for (std::size_t i = 0; i < num_classes; ++i) ids[i] = static_cast<Label>(i);
    return init_proxies(ids, dim, seed);
}

LossResult evaluate_loss(const EmbeddingBatch& batch, const ProxySet& proxies, const TrainConfig& config) {
    const auto& ac = config.anticollapse;
    switch (config.loss) {
        case LossKind::ProxyAnchor: return proxy_anchor(batch, proxies, ac.anchor);
        case LossKind::ProxyNca: return proxy_nca(batch, proxies, ac.nca);
        case LossKind::PairAntiCollapse: return pair_anticollapse(batch, ac.rate);
        case LossKind::PairPlusProxy: return pair_plus_proxy(batch, proxies, ac);
        case LossKind::AntiCollapse: return proxy_anticollapse(batch, proxies, ac);
    }
    throw Error(ErrorKind::InvalidArgument, "unknown loss kind");
}

double train_step(TrainState& state, std::span<const std::size_t> batch_rows, const TrainConfig& config) {
    check_config(config);
    if (batch_rows.empty()) throw Error(ErrorKind::EmptyBatch, "empty batch");
    EmbeddingBatch batch;
    batch.features = select_rows(state.embeddings.features, batch_rows);
    batch.labels.reserve(batch_rows.size());
    for (std::size_t r : batch_rows) batch.labels.push_back(state.embeddings.labels[r]);

    const LossResult result = evaluate_loss(batch, state.proxies, config);
    if (!std::isfinite(result.value)) throw Error(ErrorKind::NonFiniteGradient, "loss value is not finite");
    require_finite_gradient(result.grad_embeddings, "embedding", result);
    require_finite_gradient(result.grad_proxies, "proxy", result);

    if (config.lr > 0.0) {
        if (result.grad_embeddings) projected_update(state.embeddings.features, batch_rows, *result.grad_embeddings, config.lr);
        if (result.grad_proxies) {
            const auto rows = iota(state.proxies.size());
            projected_update(state.proxies.proxies, rows, *result.grad_proxies, config.lr * config.proxy_lr_multiplier);
        }
    }
    return result.value;
}

TrainRecord snapshot(const TrainState& state, const TrainConfig& config, double loss) {
    TrainRecord record;
    record.epoch = state.epoch;
    record.loss = loss;
    record.rates = rate_report(state.embeddings, state.proxies, config.anticollapse.rate);
    const std::size_t ks[] = {1};
    record.recall1 = recall_at_k(state.embeddings, ks).at(1);
    const std::size_t classes = distinct_labels(state.embeddings.labels).size();
    const auto clusters =
        kmeans_cluster(state.embeddings.features, classes, SeededRng::derive(config.seed, kClusterStream).seed());
    record.nmi = nmi(clusters, state.embeddings.labels);
    return record;
}

TrainResult train(const TrainConfig& config, const EmbeddingBatch& data) {
    check_config(config);
    validate(data);
    const auto classes = distinct_labels(data.labels);
    if (classes.size() < 2) throw Error(ErrorKind::InvalidArgument, "training needs at least two classes");

    TrainResult result;
    TrainState& state = result.state;
    state.embeddings = data;
    state.proxies = init_proxies(classes, data.dim(), SeededRng::derive(config.seed, kProxyStream).seed());
    BatchSampler sampler(data.labels, config.batch_plan, SeededRng::derive(config.seed, kSamplerStream).seed(),
                         config.sample_with_replacement);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        double loss_sum = 0.0;
        const auto batches = sampler.next_epoch();
        for (const auto& rows : batches) loss_sum += train_step(state, rows, config);
        state.epoch = epoch;
        if (epoch % config.eval_every == 0) {
            result.trace.records.push_back(snapshot(state, config, loss_sum / static_cast<double>(batches.size())));
        }
    }
    return result;
}

OrthogonalizeResult orthogonalize_proxies_demo(std::size_t m, std::size_t dim, std::size_t steps, double lr,
                                               const RateParams& params, std::uint64_t seed) {
    if (m < 1) throw Error(ErrorKind::InvalidArgument, "need at least one proxy");
    if (m > dim) throw Error(ErrorKind::InvalidArgument, "cannot orthogonalize more proxies than dimensions");
    OrthogonalizeResult out;
    out.proxies = init_proxies(m, dim, seed);
    out.initial_rate = coding_rate(out.proxies.proxies, params);
    const auto rows = iota(m);
    out.max_off_diagonal.reserve(steps);
    for (std::size_t s = 0; s < steps; ++s) {
        // ascent: step along +grad, i.e. descend with -grad
        Matrix grad = coding_rate_grad(out.proxies.proxies, params);
        for (double& v : grad.data()) v = -v;
        projected_update(out.proxies.proxies, rows, grad, lr);
        out.max_off_diagonal.push_back(max_off_diagonal(multiply_transposed(out.proxies.proxies, out.proxies.proxies)));
    }
    out.final_rate = coding_rate(out.proxies.proxies, params);
    return out;
}

void write_trace_csv(const TrainTrace& trace, std::ostream& out) {
    using detail::format_double;
    out << "epoch,loss,r_global,r_intra,r_proxy,density,recall1,nmi\n";
    for (const auto& r : trace.records) {
        out << r.epoch << ',' << format_double(r.loss) << ',' << format_double(r.rates.r_global) << ','
            << format_double(r.rates.r_intra) << ',' << format_double(r.rates.r_proxy) << ','
            << (r.rates.density ? format_double(*r.rates.density) : std::string()) << ','
            << format_double(r.recall1) << ',' << format_double(r.nmi) << '\n';
    }
}

void write_trace_jsonl(const TrainTrace& trace, std::ostream& out) {
    for (const auto& r : trace.records) {
        nlohmann::ordered_json j;
        j["epoch"] = r.epoch;
        j["loss"] = r.loss;
        j["r_global"] = r.rates.r_global;
        j["r_intra"] = r.rates.r_intra;
        j["r_proxy"] = r.rates.r_proxy;
        j["density"] = r.rates.density ? nlohmann::ordered_json(*r.rates.density) : nlohmann::ordered_json(nullptr);
        j["recall1"] = r.recall1;
        j["nmi"] = r.nmi;
        out << j.dump() << '\n';
    }
}

}  // namespace anticollapse
