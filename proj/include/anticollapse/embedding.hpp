#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "anticollapse/matrix.hpp"

namespace anticollapse {

using Label = std::uint32_t;

/// Row norm tolerance for stored embeddings and proxies.
inline constexpr double kUnitNormTolerance = 1e-9;

/// n x d unit-norm features with one class label per row.
struct EmbeddingBatch {
    Matrix features;
    std::vector<Label> labels;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }
};

/// One unit-norm proxy row per class; class_ids are distinct.
struct ProxySet {
    Matrix proxies;
    std::vector<Label> class_ids;

    std::size_t size() const noexcept { return proxies.rows(); }
    std::size_t dim() const noexcept { return proxies.cols(); }

    /// Row holding the proxy for `label`, if any.
    std::optional<std::size_t> row_of(Label label) const noexcept;
};

/// Checks label count, finiteness and row norms (within `tolerance`).
void validate(const EmbeddingBatch& batch, double tolerance = kUnitNormTolerance);
/// Checks id count, distinct ids, finiteness and row norms.
void validate(const ProxySet& proxies, double tolerance = kUnitNormTolerance);

/// Scales every nonzero row to unit L2 norm in place.
void normalize_rows(Matrix& m);

/// Sorted distinct labels.
std::vector<Label> distinct_labels(std::span<const Label> labels);

/// Row indices of every label, grouped by the order of distinct_labels().
std::vector<std::vector<std::size_t>> rows_by_class(std::span<const Label> labels);

}  // namespace anticollapse
