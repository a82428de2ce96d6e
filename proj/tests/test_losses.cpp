#include <doctest.h>

#include <cmath>
#include <random>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/error.hpp"
#include "anticollapse/gradcheck.hpp"
#include "anticollapse/losses.hpp"
#include "anticollapse/numerics.hpp"
#include "oracles.hpp"

using namespace anticollapse;

namespace {

ErrorKind kind_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no error thrown");
    return ErrorKind::InvalidArgument;
}

double direct_nca(const EmbeddingBatch& b, const ProxySet& p, bool softmax_all) {
    double total = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        double pos = 0.0, denom = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double s = oracle::cosine(b.features, i, p.proxies, j);
            if (p.class_ids[j] == b.labels[i]) {
                pos = s;
                if (!softmax_all) continue;
            }
            denom += std::exp(s);
        }
        total += -std::log(std::exp(pos) / denom);
    }
    return total / static_cast<double>(b.size());
}

double direct_anchor(const EmbeddingBatch& b, const ProxySet& p, double alpha, double delta) {
    double pos = 0.0, neg = 0.0;
    std::size_t with_pos = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        double sp = 0.0, sn = 0.0;
        bool any = false;
        for (std::size_t i = 0; i < b.size(); ++i) {
            const double s = oracle::cosine(b.features, i, p.proxies, j);
            if (b.labels[i] == p.class_ids[j]) {
                sp += std::exp(-alpha * (s - delta));
                any = true;
            } else {
                sn += std::exp(alpha * (s + delta));
            }
        }
        if (any) {
            pos += std::log(1.0 + sp);
            ++with_pos;
        }
        neg += std::log(1.0 + sn);
    }
    return (with_pos ? pos / static_cast<double>(with_pos) : 0.0) + neg / static_cast<double>(p.size());
}

struct Instance {
    EmbeddingBatch batch;
    ProxySet proxies;
};

Instance random_instance(std::mt19937_64& gen, std::size_t n, std::size_t d, std::size_t m, std::size_t present) {
    Instance inst;
    inst.batch.features = oracle::random_unit_rows(n, d, gen);
    inst.batch.labels = oracle::random_labels(n, present, gen);
    inst.proxies.proxies = oracle::random_unit_rows(m, d, gen);
    for (std::size_t j = 0; j < m; ++j) inst.proxies.class_ids.push_back(static_cast<Label>(j));
    return inst;
}

}  // namespace

TEST_CASE("cosine_similarity_matrix") {
    CHECK(cosine_similarity_matrix(Matrix::identity(3), Matrix::identity(3)) == Matrix::identity(3));
    const Matrix r{{0.6, 0.8}, {0.6, 0.8}};
    const Matrix s = cosine_similarity_matrix(r, r);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) CHECK(std::abs(s(i, j) - 1.0) < 1e-15);
    std::mt19937_64 gen(31);
    const Matrix a = oracle::random_unit_rows(10, 6, gen);
    const Matrix b = oracle::random_unit_rows(7, 6, gen);
    CHECK(max_abs(cosine_similarity_matrix(a, b)) <= 1.0 + 1e-9);
    CHECK(kind_of([] { cosine_similarity_matrix(Matrix{{2.0, 0.0}}, Matrix{{1.0, 0.0}}); }) ==
          ErrorKind::NotNormalized);
}

TEST_CASE("pair_anticollapse closed forms") {
    const EmbeddingBatch ortho{Matrix::identity(2), {0, 1}};
    const EmbeddingBatch dup{Matrix{{1.0, 0.0}, {1.0, 0.0}}, {0, 0}};
    const double a = pair_anticollapse(ortho, {}).value;
    const double b = pair_anticollapse(dup, {}).value;
    CHECK(std::abs(a + std::log(5.0)) < 1e-12);
    CHECK(std::abs(b + std::log(3.0)) < 1e-12);
    CHECK(b > a);
}

TEST_CASE("pair_anticollapse gradient and value") {
    std::mt19937_64 gen(32);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 12;
        const std::size_t d = 2 + trial % 7;
        EmbeddingBatch b{oracle::random_unit_rows(n, d, gen), std::vector<Label>(n, 0)};
        const LossResult r = pair_anticollapse(b, {});
        CHECK(std::abs(r.value + oracle::coding_rate(b.features, 0.5)) < 1e-9);
        CHECK_FALSE(r.grad_proxies.has_value());
        const auto f = [&](const Matrix& x) { return pair_anticollapse(EmbeddingBatch{x, b.labels}, {}).value; };
        CHECK(gradient_relative_error(*r.grad_embeddings, finite_difference_gradient(f, b.features)) < 1e-5);
    }
}

TEST_CASE("proxy_nca closed forms") {
    const EmbeddingBatch one{Matrix{{1.0, 0.0}}, {0}};
    const ProxySet p{Matrix::identity(2), {0, 1}};
    CHECK(std::abs(proxy_nca(one, p).value + 1.0) < 1e-15);
    const EmbeddingBatch mid{Matrix{{0.0, 0.0, 1.0}}, {0}};
    const ProxySet q{Matrix{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}, {0, 1}};
    CHECK(std::abs(proxy_nca(mid, q).value) < 1e-15);
}

TEST_CASE("proxy_nca errors") {
    const EmbeddingBatch one{Matrix{{1.0, 0.0}}, {0}};
    CHECK(kind_of([&] { proxy_nca(one, ProxySet{Matrix{{1.0, 0.0}}, {0}}); }) == ErrorKind::NoNegativeProxies);
    CHECK(kind_of([&] { proxy_nca(one, ProxySet{Matrix::identity(2), {5, 6}}); }) == ErrorKind::MissingProxy);
}

TEST_CASE("proxy_nca matches direct evaluation and finite differences") {
    std::mt19937_64 gen(33);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 2 + trial % 5;
        const Instance inst = random_instance(gen, 2 + trial % 15, 2 + trial % 7, m, m);
        for (bool all : {false, true}) {
            const ProxyNcaParams params{all};
            const LossResult r = proxy_nca(inst.batch, inst.proxies, params);
            CHECK(std::abs(r.value - direct_nca(inst.batch, inst.proxies, all)) < 1e-12);
            const auto fx = [&](const Matrix& x) {
                return proxy_nca(EmbeddingBatch{x, inst.batch.labels}, inst.proxies, params).value;
            };
            const auto fp = [&](const Matrix& p) {
                return proxy_nca(inst.batch, ProxySet{p, inst.proxies.class_ids}, params).value;
            };
            CHECK(gradient_relative_error(*r.grad_embeddings, finite_difference_gradient(fx, inst.batch.features)) < 1e-5);
            CHECK(gradient_relative_error(*r.grad_proxies, finite_difference_gradient(fp, inst.proxies.proxies)) < 1e-5);
        }
    }
}

TEST_CASE("proxy_anchor closed forms") {
    const double d = 0.1;
    const double c = std::sqrt(1.0 - d * d);
    const EmbeddingBatch one{Matrix{{d, c}}, {0}};
    CHECK(std::abs(proxy_anchor(one, ProxySet{Matrix{{1.0, 0.0}}, {0}}).value - std::log(2.0)) < 1e-12);
    const EmbeddingBatch neg{Matrix{{-d, c}}, {0}};
    const LossResult r = proxy_anchor(neg, ProxySet{Matrix{{1.0, 0.0}}, {1}});
    CHECK(std::abs(r.value - std::log(2.0)) < 1e-12);
    CHECK_FALSE(r.notes.empty());
}

TEST_CASE("proxy_anchor stays finite for extreme similarities") {
    const EmbeddingBatch b{Matrix{{1.0, 0.0}, {-1.0, 0.0}}, {0, 1}};
    const ProxySet p{Matrix{{-1.0, 0.0}, {1.0, 0.0}}, {0, 1}};
    const LossResult r = proxy_anchor(b, p, ProxyAnchorParams{1000.0, 0.1});
    CHECK(std::isfinite(r.value));
    CHECK(r.grad_embeddings->all_finite());
    CHECK(kind_of([] { proxy_anchor(EmbeddingBatch{Matrix(0, 2), {}}, ProxySet{Matrix{{1.0, 0.0}}, {0}}); }) ==
          ErrorKind::EmptyBatch);
}

TEST_CASE("proxy_anchor matches direct evaluation and finite differences") {
    std::mt19937_64 gen(34);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 2 + trial % 5;
        const std::size_t present = 1 + trial % m;
        const Instance inst = random_instance(gen, 2 + trial % 15, 2 + trial % 7, m, present);
        const ProxyAnchorParams params{};
        const LossResult r = proxy_anchor(inst.batch, inst.proxies, params);
        CHECK(std::abs(r.value - direct_anchor(inst.batch, inst.proxies, 32.0, 0.1)) < 1e-10);
        const auto fx = [&](const Matrix& x) {
            return proxy_anchor(EmbeddingBatch{x, inst.batch.labels}, inst.proxies, params).value;
        };
        const auto fp = [&](const Matrix& p) {
            return proxy_anchor(inst.batch, ProxySet{p, inst.proxies.class_ids}, params).value;
        };
        CHECK(gradient_relative_error(*r.grad_embeddings, finite_difference_gradient(fx, inst.batch.features)) < 1e-5);
        CHECK(gradient_relative_error(*r.grad_proxies, finite_difference_gradient(fp, inst.proxies.proxies)) < 1e-5);
    }
}

TEST_CASE("proxy_rate closed forms and selection") {
    const ProxySet p{Matrix::identity(2), {0, 1}};
    CHECK(std::abs(proxy_rate(p, std::nullopt, {}) - std::log(5.0)) < 1e-12);
    const std::vector<Label> only{1};
    CHECK(std::abs(proxy_rate(p, std::span<const Label>(only), {}) - std::log(3.0)) < 1e-12);

    std::mt19937_64 gen(35);
    const ProxySet q{oracle::random_unit_rows(6, 4, gen), {10, 11, 12, 13, 14, 15}};
    const std::vector<Label> classes{14, 11, 14};
    const Matrix sub{{q.proxies(1, 0), q.proxies(1, 1), q.proxies(1, 2), q.proxies(1, 3)},
                     {q.proxies(4, 0), q.proxies(4, 1), q.proxies(4, 2), q.proxies(4, 3)}};
    CHECK(proxy_rate(q, std::span<const Label>(classes), {}) == coding_rate(sub, {}));

    const Matrix g = proxy_rate_grad(q, std::span<const Label>(classes), {});
    for (std::size_t i : {0, 2, 3, 5})
        for (std::size_t j = 0; j < 4; ++j) CHECK(g(i, j) == 0.0);
    const std::vector<Label> missing{99};
    CHECK(kind_of([&] { proxy_rate(q, std::span<const Label>(missing), {}); }) == ErrorKind::MissingProxy);
    const std::vector<Label> none;
    CHECK(kind_of([&] { proxy_rate(q, std::span<const Label>(none), {}); }) == ErrorKind::EmptySelection);
}

TEST_CASE("proxy_anticollapse composition") {
    std::mt19937_64 gen(36);
    const Instance inst = random_instance(gen, 10, 6, 5, 5);

    AntiCollapseConfig zero;
    zero.nu = 0.0;
    zero.variant = ProxyVariant::AllClass;
    const LossResult r0 = proxy_anticollapse(inst.batch, inst.proxies, zero);
    CHECK(r0.value == -proxy_rate(inst.proxies, std::nullopt, zero.rate));
    CHECK(max_abs(*r0.grad_embeddings) == 0.0);

    AntiCollapseConfig cfg;
    cfg.variant = ProxyVariant::AllClass;
    const LossResult r = proxy_anticollapse(inst.batch, inst.proxies, cfg);
    const double expected =
        -oracle::coding_rate(inst.proxies.proxies, 0.5) + 0.0035 * direct_anchor(inst.batch, inst.proxies, 32.0, 0.1);
    CHECK(std::abs(r.value - expected) < 1e-10);

    cfg.base = BaseLoss::ProxyNca;
    const LossResult rn = proxy_anticollapse(inst.batch, inst.proxies, cfg);
    CHECK(std::abs(rn.value - (-oracle::coding_rate(inst.proxies.proxies, 0.5) +
                               0.0035 * direct_nca(inst.batch, inst.proxies, false))) < 1e-10);
}

TEST_CASE("mini-batch variant selects only the batch's proxies") {
    std::mt19937_64 gen(37);
    EmbeddingBatch b{oracle::random_unit_rows(6, 8, gen), {0, 1, 0, 1, 1, 0}};
    ProxySet p{oracle::random_unit_rows(5, 8, gen), {0, 1, 2, 3, 4}};
    CHECK(selected_proxy_rows(b, p, ProxyVariant::MiniBatch) == std::vector<std::size_t>{0, 1});
    CHECK(selected_proxy_rows(b, p, ProxyVariant::AllClass).size() == 5);

    AntiCollapseConfig cfg;
    cfg.nu = 0.0;
    const LossResult r = proxy_anticollapse(b, p, cfg);
    const Matrix sub{{p.proxies(0, 0), p.proxies(0, 1), p.proxies(0, 2), p.proxies(0, 3), p.proxies(0, 4),
                      p.proxies(0, 5), p.proxies(0, 6), p.proxies(0, 7)},
                     {p.proxies(1, 0), p.proxies(1, 1), p.proxies(1, 2), p.proxies(1, 3), p.proxies(1, 4),
                      p.proxies(1, 5), p.proxies(1, 6), p.proxies(1, 7)}};
    CHECK(std::abs(r.value + oracle::coding_rate(sub, 0.5)) < 1e-12);
    for (std::size_t i = 2; i < 5; ++i)
        for (std::size_t j = 0; j < 8; ++j) CHECK((*r.grad_proxies)(i, j) == 0.0);
}

TEST_CASE("proxy_anticollapse finite differences for both variants") {
    std::mt19937_64 gen(38);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t m = 2 + trial % 5;
        const Instance inst = random_instance(gen, 2 + trial % 15, 2 + trial % 7, m, 1 + trial % m);
        for (ProxyVariant v : {ProxyVariant::AllClass, ProxyVariant::MiniBatch}) {
            AntiCollapseConfig cfg;
            cfg.variant = v;
            cfg.base = trial % 2 ? BaseLoss::ProxyAnchor : BaseLoss::ProxyNca;
            if (cfg.base == BaseLoss::ProxyNca && m < 2) continue;
            const LossResult r = proxy_anticollapse(inst.batch, inst.proxies, cfg);
            const auto fx = [&](const Matrix& x) {
                return proxy_anticollapse(EmbeddingBatch{x, inst.batch.labels}, inst.proxies, cfg).value;
            };
            const auto fp = [&](const Matrix& p) {
                return proxy_anticollapse(inst.batch, ProxySet{p, inst.proxies.class_ids}, cfg).value;
            };
            CHECK(gradient_relative_error(*r.grad_embeddings, finite_difference_gradient(fx, inst.batch.features)) < 1e-5);
            CHECK(gradient_relative_error(*r.grad_proxies, finite_difference_gradient(fp, inst.proxies.proxies)) < 1e-5);
        }
    }
}

TEST_CASE("pair_plus_proxy composition") {
    std::mt19937_64 gen(39);
    const Instance inst = random_instance(gen, 8, 5, 4, 4);
    AntiCollapseConfig cfg;
    const LossResult r = pair_plus_proxy(inst.batch, inst.proxies, cfg);
    const double expected = -oracle::coding_rate(inst.batch.features, 0.5) +
                            0.0035 * direct_anchor(inst.batch, inst.proxies, 32.0, 0.1);
    CHECK(std::abs(r.value - expected) < 1e-10);
}

TEST_CASE("gradcheck suite covers every family and the negative control fails") {
    GradcheckOptions options;
    const auto reports = run_gradcheck(options);
    CHECK(reports.size() == 5);
    for (const auto& r : reports) {
        CHECK(r.cases == 20);
        CHECK(r.max_relative_error < kGradcheckTolerance);
    }
    options.negate_analytic = true;
    options.cases = 2;
    for (const auto& r : run_gradcheck(options)) CHECK(r.max_relative_error > 1.0);
}
