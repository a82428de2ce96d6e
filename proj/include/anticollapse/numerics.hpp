#pragma once

#include <span>
#include <vector>

#include "anticollapse/matrix.hpp"

namespace anticollapse {

/// Absolute tolerance used for symmetry checks before factorization.
inline constexpr double kSymmetryTolerance = 1e-12;

// Products. These validate finiteness and conformability.
Matrix transpose(const Matrix& a);
Matrix multiply(const Matrix& a, const Matrix& b);
/// a * b^T without forming the transpose.
Matrix multiply_transposed(const Matrix& a, const Matrix& b);

/// X^T X (d x d). Symmetric by construction.
Matrix gram_features(const Matrix& x);
/// X X^T (n x n). Symmetric by construction.
Matrix gram_samples(const Matrix& x);

/// Lower-triangular Cholesky factor L with A = L L^T.
/// A is symmetrized as (A + A^T)/2 after the symmetry check.
Matrix cholesky(const Matrix& a);

/// Natural log of det(A) for symmetric positive definite A, via Cholesky.
double logdet_psd(const Matrix& a);

/// Solves A X = B for symmetric positive definite A.
Matrix solve_psd(const Matrix& a, const Matrix& b);

/// All eigenvalues of a symmetric matrix, ascending. Test oracle only; the
/// production paths never call this.
std::vector<double> sym_eigvals(const Matrix& a);

// Small helpers shared across modules.
double max_abs(const Matrix& a) noexcept;
double max_abs_diff(const Matrix& a, const Matrix& b);
double trace(const Matrix& a);
Matrix select_rows(const Matrix& a, std::span<const std::size_t> rows);
/// a += scale * b
void add_scaled(Matrix& a, const Matrix& b, double scale);
double dot(std::span<const double> a, std::span<const double> b) noexcept;
double norm(std::span<const double> a) noexcept;

void require_finite(const Matrix& a, const char* what);
void require_symmetric(const Matrix& a, const char* what);

}  // namespace anticollapse
