#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/embedding.hpp"
#include "anticollapse/matrix.hpp"

namespace anticollapse {

/// Loss value plus gradients with respect to whichever operands it depends on.
struct LossResult {
    double value = 0.0;
    std::optional<Matrix> grad_embeddings;
    std::optional<Matrix> grad_proxies;
    /// Conditions worth surfacing that are not errors (e.g. an empty
    /// positive-proxy set).
    std::vector<std::string> notes;
};

struct ProxyAnchorParams {
    double alpha = 32.0;  ///< scaling
    double delta = 0.1;   ///< margin
};

struct ProxyNcaParams {
    /// Off: the denominator runs over negative proxies only. On: softmax over
    /// every proxy, positive included.
    bool include_positive_in_denominator = false;
};

enum class ProxyVariant {
    AllClass,   ///< rate over every proxy
    MiniBatch,  ///< rate over the proxies of classes present in the batch
};

enum class BaseLoss { ProxyAnchor, ProxyNca };

struct AntiCollapseConfig {
    double nu = 0.0035;
    RateParams rate;
    ProxyVariant variant = ProxyVariant::MiniBatch;
    BaseLoss base = BaseLoss::ProxyAnchor;
    ProxyAnchorParams anchor;
    ProxyNcaParams nca;
};

/// Recommended range for nu.
inline constexpr double kNuMin = 0.001;
inline constexpr double kNuMax = 0.1;

/// A * B^T for unit-norm rows. Throws NotNormalized when a row norm is off by
/// more than 1e-6.
Matrix cosine_similarity_matrix(const Matrix& a, const Matrix& b);

/// Label-free pair loss: minus the coding rate of the batch, evaluated through
/// its n x n similarity matrix.
LossResult pair_anticollapse(const EmbeddingBatch& batch, const RateParams& params);

/// ProxyNCA, averaged over anchors.
LossResult proxy_nca(const EmbeddingBatch& batch, const ProxySet& proxies, const ProxyNcaParams& params = {});

/// ProxyAnchor. The positive term averages over proxies with at least one
/// positive sample in the batch; the negative term averages over all proxies.
LossResult proxy_anchor(const EmbeddingBatch& batch, const ProxySet& proxies, const ProxyAnchorParams& params = {});

/// Coding rate of the proxies selected by `class_filter` (all when empty).
double proxy_rate(const ProxySet& proxies, std::optional<std::span<const Label>> class_filter,
                  const RateParams& params);

/// Gradient of proxy_rate, shaped like the full proxy matrix; rows outside the
/// selection are zero.
Matrix proxy_rate_grad(const ProxySet& proxies, std::optional<std::span<const Label>> class_filter,
                       const RateParams& params);

/// Proxy rows the anti-collapse rate term runs over for this batch.
std::vector<std::size_t> selected_proxy_rows(const EmbeddingBatch& batch, const ProxySet& proxies,
                                             ProxyVariant variant);

/// -R_proxy(selected) + nu * base loss.
LossResult proxy_anticollapse(const EmbeddingBatch& batch, const ProxySet& proxies,
                              const AntiCollapseConfig& config);

/// Pair loss plus nu times the base proxy loss (the "pair + proxy" ablation).
LossResult pair_plus_proxy(const EmbeddingBatch& batch, const ProxySet& proxies, const AntiCollapseConfig& config);

}  // namespace anticollapse
