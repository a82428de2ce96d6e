#include <algorithm>
#include <cmath>
#include <cstdint>

#include "anticollapse/error.hpp"
#include "anticollapse/matrix.hpp"
#include "anticollapse/rng.hpp"

namespace anticollapse {

// ---------------------------------------------------------------------------
// Error / Matrix / SeededRng basics
// ---------------------------------------------------------------------------

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::NotSymmetric: return "NotSymmetric";
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::NotNormalized: return "NotNormalized";
        case ErrorKind::EmptyBatch: return "EmptyBatch";
        case ErrorKind::EmptySelection: return "EmptySelection";
        case ErrorKind::MissingProxy: return "MissingProxy";
        case ErrorKind::NoNegativeProxies: return "NoNegativeProxies";
        case ErrorKind::KTooLarge: return "KTooLarge";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::DegenerateInput: return "DegenerateInput";
        case ErrorKind::TooManyClasses: return "TooManyClasses";
        case ErrorKind::ClassTooSmall: return "ClassTooSmall";
        case ErrorKind::BadMagic: return "BadMagic";
        case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
        case ErrorKind::TruncatedFile: return "TruncatedFile";
        case ErrorKind::NonFiniteValue: return "NonFiniteValue";
        case ErrorKind::MalformedFile: return "MalformedFile";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    }
    return "Unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw Error(ErrorKind::ShapeMismatch, "matrix data length does not equal rows*cols");
    }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw Error(ErrorKind::ShapeMismatch, "ragged matrix literal");
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
    Matrix m(values.size(), values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
    return m;
}

bool Matrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::uint64_t SeededRng::uniform_index(std::uint64_t bound) {
    if (bound == 0) throw Error(ErrorKind::InvalidArgument, "uniform_index bound must be positive");
    // Largest multiple of bound that fits; values above it are rejected.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
    std::uint64_t x = engine_();
    while (x > limit) x = engine_();
    return x % bound;
}

double SeededRng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

SeededRng SeededRng::derive(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the pair
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return SeededRng(z ^ (z >> 31));
}

}  // namespace anticollapse
