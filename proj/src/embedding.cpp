#include "anticollapse/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "anticollapse/error.hpp"
#include "anticollapse/numerics.hpp"

namespace anticollapse {

std::optional<std::size_t> ProxySet::row_of(Label label) const noexcept {
    const auto it = std::find(class_ids.begin(), class_ids.end(), label);
    if (it == class_ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - class_ids.begin());
}

namespace {

void require_unit_rows(const Matrix& m, double tolerance, const char* what) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double n = norm(m.row(i));
        if (std::abs(n - 1.0) > tolerance) {
            std::ostringstream msg;
            msg << what << " row " << i << " has norm " << n;
            throw Error(ErrorKind::NotNormalized, msg.str());
        }
    }
}

}  // namespace

void validate(const EmbeddingBatch& batch, double tolerance) {
    if (batch.labels.size() != batch.features.rows())
        throw Error(ErrorKind::LengthMismatch, "labels length must equal number of embedding rows");
    require_finite(batch.features, "embeddings");
    require_unit_rows(batch.features, tolerance, "embedding");
}

void validate(const ProxySet& proxies, double tolerance) {
    if (proxies.class_ids.size() != proxies.proxies.rows())
        throw Error(ErrorKind::LengthMismatch, "class_ids length must equal number of proxy rows");
    auto ids = proxies.class_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
        throw Error(ErrorKind::InvalidArgument, "proxy class ids must be distinct");
    require_finite(proxies.proxies, "proxies");
    require_unit_rows(proxies.proxies, tolerance, "proxy");
}

void normalize_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto row = m.row(i);
        const double n = norm(row);
        if (n == 0.0) continue;
        for (double& v : row) v /= n;
    }
}

std::vector<Label> distinct_labels(std::span<const Label> labels) {
    std::vector<Label> out(labels.begin(), labels.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<std::vector<std::size_t>> rows_by_class(std::span<const Label> labels) {
    const auto classes = distinct_labels(labels);
    std::vector<std::vector<std::size_t>> groups(classes.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto pos = std::lower_bound(classes.begin(), classes.end(), labels[i]) - classes.begin();
        groups[static_cast<std::size_t>(pos)].push_back(i);
    }
    return groups;
}

}  // namespace anticollapse
