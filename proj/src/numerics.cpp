#include "anticollapse/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "anticollapse/error.hpp"

namespace anticollapse {

// ---------------------------------------------------------------------------
// Validation helpers
// ---------------------------------------------------------------------------

void require_finite(const Matrix& a, const char* what) {
    if (!a.all_finite()) throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
}

void require_symmetric(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) throw Error(ErrorKind::ShapeMismatch, std::string(what) + " is not square");
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = i + 1; j < a.cols(); ++j) {
            if (std::abs(a(i, j) - a(j, i)) > kSymmetryTolerance) {
                std::ostringstream msg;
                msg << what << " asymmetric at (" << i << "," << j << ")";
                throw Error(ErrorKind::NotSymmetric, msg.str());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) noexcept { return std::sqrt(dot(a, a)); }

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw Error(ErrorKind::ShapeMismatch, "multiply: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) out[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix multiply_transposed(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) throw Error(ErrorKind::ShapeMismatch, "multiply_transposed: column counts differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
    return c;
}

Matrix gram_features(const Matrix& x) {
    require_finite(x, "gram_features input");
    const std::size_t d = x.cols();
    Matrix g(d, d);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        for (std::size_t i = 0; i < d; ++i) {
            const double xi = row[i];
            if (xi == 0.0) continue;
            for (std::size_t j = i; j < d; ++j) g(i, j) += xi * row[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
    return g;
}

Matrix gram_samples(const Matrix& x) {
    require_finite(x, "gram_samples input");
    const std::size_t n = x.rows();
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = dot(x.row(i), x.row(j));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Factorizations
// ---------------------------------------------------------------------------

Matrix cholesky(const Matrix& a) {
    require_finite(a, "cholesky input");
    require_symmetric(a, "cholesky input");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double diag = a(j, j);
        for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
        if (!(diag > 0.0)) {
            std::ostringstream msg;
            msg << "non-positive pivot " << diag << " at column " << j;
            throw Error(ErrorKind::NotPositiveDefinite, msg.str());
        }
        const double ljj = std::sqrt(diag);
        l(j, j) = ljj;
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = 0.5 * (a(i, j) + a(j, i));
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / ljj;
        }
    }
    return l;
}

double logdet_psd(const Matrix& a) {
    const Matrix l = cholesky(a);
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

Matrix solve_psd(const Matrix& a, const Matrix& b) {
    if (b.rows() != a.rows()) throw Error(ErrorKind::ShapeMismatch, "solve_psd: B rows must equal dim(A)");
    require_finite(b, "solve_psd right-hand side");
    const Matrix l = cholesky(a);
    const std::size_t n = a.rows();
    Matrix x = b;
    for (std::size_t c = 0; c < b.cols(); ++c) {
        // L y = b
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        // L^T x = y
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

std::vector<double> sym_eigvals(const Matrix& a) {
    require_finite(a, "sym_eigvals input");
    require_symmetric(a, "sym_eigvals input");
    const auto n = static_cast<Eigen::Index>(a.rows());
    Eigen::MatrixXd m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = a(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::EigenvaluesOnly);
    if (solver.info() != Eigen::Success) throw Error(ErrorKind::InvalidArgument, "eigen solver did not converge");
    std::vector<double> out(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

double max_abs(const Matrix& a) noexcept {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorKind::ShapeMismatch, "max_abs_diff: shapes differ");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

double trace(const Matrix& a) {
    if (a.rows() != a.cols()) throw Error(ErrorKind::ShapeMismatch, "trace of non-square matrix");
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) s += a(i, i);
    return s;
}

Matrix select_rows(const Matrix& a, std::span<const std::size_t> rows) {
    Matrix out(rows.size(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= a.rows()) throw Error(ErrorKind::InvalidArgument, "select_rows: row index out of range");
        std::copy(a.row(rows[i]).begin(), a.row(rows[i]).end(), out.row(i).begin());
    }
    return out;
}

void add_scaled(Matrix& a, const Matrix& b, double scale) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorKind::ShapeMismatch, "add_scaled: shapes differ");
    auto dst = a.data();
    const auto src = b.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace anticollapse
