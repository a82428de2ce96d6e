#include <doctest.h>

#include <cmath>
#include <random>

#include "anticollapse/error.hpp"
#include "anticollapse/numerics.hpp"
#include "anticollapse/rng.hpp"
#include "oracles.hpp"

using namespace anticollapse;

TEST_CASE("gram_features small cases") {
    CHECK(gram_features(Matrix::identity(2)) == Matrix::identity(2));
    const Matrix row{{1.0, 0.0}};
    CHECK(gram_features(row) == Matrix{{1.0, 0.0}, {0.0, 0.0}});
}

TEST_CASE("gram_features is symmetric positive semidefinite") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = oracle::random_gaussian(4, 3, gen);
        const Matrix g = gram_features(x);
        CHECK(g == transpose(g));
        for (double ev : oracle::eigenvalues(g)) CHECK(ev >= -1e-12);
    }
}

TEST_CASE("gram_samples small cases") {
    CHECK(gram_samples(Matrix{{1.0, 0.0}, {0.0, 1.0}}) == Matrix::identity(2));
    CHECK(gram_samples(Matrix{{0.6, 0.8}, {0.6, 0.8}}) == Matrix{{1.0, 1.0}, {1.0, 1.0}});
}

TEST_CASE("gram_samples and gram_features share nonzero spectrum") {
    std::mt19937_64 gen(12);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 2 + trial % 5;
        const std::size_t d = 2 + (trial * 3) % 6;
        const Matrix x = oracle::random_gaussian(n, d, gen);
        auto a = oracle::eigenvalues(gram_samples(x));
        auto b = oracle::eigenvalues(gram_features(x));
        // Compare the top min(n, d) eigenvalues.
        const std::size_t r = std::min(n, d);
        for (std::size_t k = 0; k < r; ++k) CHECK(std::abs(a[a.size() - 1 - k] - b[b.size() - 1 - k]) < 1e-10);
    }
}

TEST_CASE("logdet_psd") {
    CHECK(logdet_psd(Matrix::identity(3)) == 0.0);
    CHECK(logdet_psd(Matrix{{2.0, 0.0}, {0.0, 3.0}}) == doctest::Approx(std::log(6.0)).epsilon(1e-15));
    std::mt19937_64 gen(13);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix m = oracle::random_gaussian(6, 5, gen);
        Matrix a = gram_features(m);
        for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1.0;
        double expected = 0.0;
        for (double ev : oracle::eigenvalues(a)) expected += std::log(ev);
        CHECK(std::abs(logdet_psd(a) - expected) < 1e-9);
    }
}

TEST_CASE("logdet_psd errors") {
    CHECK_THROWS_AS(logdet_psd(Matrix{{1.0, 2.0}, {0.0, 1.0}}), Error);
    try {
        logdet_psd(Matrix{{1.0, 2.0}, {0.0, 1.0}});
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotSymmetric);
    }
    try {
        logdet_psd(Matrix{{1.0, 0.0}, {0.0, -1.0}});
        FAIL("expected NotPositiveDefinite");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::NotPositiveDefinite);
    }
    try {
        logdet_psd(Matrix{{1.0, 0.0, 0.0}});
        FAIL("expected ShapeMismatch");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ShapeMismatch);
    }
}

TEST_CASE("solve_psd") {
    const Matrix b{{1.0, 2.0}, {3.0, 4.0}};
    CHECK(solve_psd(Matrix::identity(2), b) == b);
    const Matrix x = solve_psd(Matrix{{2.0, 0.0}, {0.0, 4.0}}, Matrix::identity(2));
    CHECK(max_abs_diff(x, Matrix{{0.5, 0.0}, {0.0, 0.25}}) < 1e-15);

    std::mt19937_64 gen(14);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a = gram_features(oracle::random_gaussian(7, 4, gen));
        for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 0.5;
        const Matrix rhs = oracle::random_gaussian(4, 3, gen);
        const Matrix sol = solve_psd(a, rhs);
        CHECK(max_abs_diff(multiply(a, sol), rhs) < 1e-10 * std::max(1.0, max_abs(rhs)));
    }
}

TEST_CASE("sym_eigvals") {
    const auto id = sym_eigvals(Matrix::identity(2));
    CHECK(id == std::vector<double>{1.0, 1.0});
    const auto ones = sym_eigvals(Matrix{{1.0, 1.0}, {1.0, 1.0}});
    CHECK(std::abs(ones[0]) < 1e-15);
    CHECK(ones[1] == doctest::Approx(2.0).epsilon(1e-15));
    std::mt19937_64 gen(15);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix m = oracle::random_gaussian(5, 5, gen);
        Matrix a(5, 5);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t j = 0; j < 5; ++j) a(i, j) = m(i, j) + m(j, i);
        double s = 0.0;
        for (double v : sym_eigvals(a)) s += v;
        CHECK(std::abs(s - trace(a)) < 1e-9);
    }
}

TEST_CASE("multiply shape checks") {
    CHECK_THROWS_AS(multiply(Matrix(2, 3), Matrix(2, 3)), Error);
    CHECK_THROWS_AS(multiply_transposed(Matrix(2, 3), Matrix(2, 4)), Error);
}

TEST_CASE("SeededRng is reproducible and derive separates streams") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    auto s0 = SeededRng::derive(42, 0);
    auto s1 = SeededRng::derive(42, 1);
    CHECK(s0.next_u64() != s1.next_u64());
    SeededRng c(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = c.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(c.uniform_index(5) < 5);
    }
}

TEST_CASE("SeededRng normal has roughly standard moments") {
    SeededRng rng(3);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::abs(s / n) < 0.05);
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
}
