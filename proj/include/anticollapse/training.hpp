#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/data_io.hpp"
#include "anticollapse/embedding.hpp"
#include "anticollapse/losses.hpp"

namespace anticollapse {

enum class LossKind {
    ProxyAnchor,       ///< baseline "pa"
    ProxyNca,          ///< baseline "pnca"
    PairAntiCollapse,  ///< label-free pair loss "pair"
    PairPlusProxy,     ///< pair loss + nu * base proxy loss "pair+proxy"
    AntiCollapse,      ///< proxy anti-collapse "antico"
};

std::string_view to_string(LossKind kind) noexcept;
std::optional<LossKind> parse_loss_kind(std::string_view name) noexcept;

/// Default base learning rate at desk scale.
inline constexpr double kDefaultLearningRate = 1e-2;
/// Learning rate used with Adam on a pretrained backbone; kept as a preset only.
inline constexpr double kBackboneLearningRate = 1e-5;

struct TrainConfig {
    LossKind loss = LossKind::AntiCollapse;
    /// nu, rate precision, variant and base loss parameters. The baselines use
    /// the anchor/nca/rate fields they need.
    AntiCollapseConfig anticollapse;
    double lr = kDefaultLearningRate;
    double proxy_lr_multiplier = 100.0;
    std::size_t epochs = 100;
    BatchPlan batch_plan;
    bool sample_with_replacement = false;
    std::size_t eval_every = 1;
    std::uint64_t seed = 0;
};

/// Embeddings are the optimized parameters themselves (no backbone).
struct TrainState {
    EmbeddingBatch embeddings;
    ProxySet proxies;
    std::size_t epoch = 0;
};

struct TrainRecord {
    std::size_t epoch = 0;
    double loss = 0.0;  ///< mean pre-step batch loss over the epoch
    RateReport rates;
    double recall1 = 0.0;
    double nmi = 0.0;
};

struct TrainTrace {
    std::vector<TrainRecord> records;

    /// First record with the highest Recall@1.
    const TrainRecord* best_recall() const noexcept;
};

struct TrainResult {
    TrainState state;
    TrainTrace trace;
};

/// Standard-normal rows, L2-normalized.
ProxySet init_proxies(std::span<const Label> class_ids, std::size_t dim, std::uint64_t seed);
ProxySet init_proxies(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

/// Value and gradients of the configured loss on one batch.
LossResult evaluate_loss(const EmbeddingBatch& batch, const ProxySet& proxies, const TrainConfig& config);

/// One projected gradient step on the rows `batch_rows` of the state.
/// Returns the pre-step loss. Throws NonFiniteGradient.
double train_step(TrainState& state, std::span<const std::size_t> batch_rows, const TrainConfig& config);

/// Structural metrics of the full data set at the current state.
TrainRecord snapshot(const TrainState& state, const TrainConfig& config, double loss);

/// Runs config.epochs epochs of sampled batches starting from `data` and
/// freshly initialized proxies. A record is appended every eval_every epochs.
TrainResult train(const TrainConfig& config, const EmbeddingBatch& data);

struct OrthogonalizeResult {
    ProxySet proxies;
    /// Max |off-diagonal cosine| after each step.
    std::vector<double> max_off_diagonal;
    double initial_rate = 0.0;
    double final_rate = 0.0;
};

/// Projected gradient ascent on the coding rate of m random proxies.
OrthogonalizeResult orthogonalize_proxies_demo(std::size_t m, std::size_t dim, std::size_t steps, double lr,
                                               const RateParams& params, std::uint64_t seed);

/// Columns: epoch,loss,r_global,r_intra,r_proxy,density,recall1,nmi
void write_trace_csv(const TrainTrace& trace, std::ostream& out);
/// One JSON object per record.
void write_trace_jsonl(const TrainTrace& trace, std::ostream& out);

}  // namespace anticollapse
