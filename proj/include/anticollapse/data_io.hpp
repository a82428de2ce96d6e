#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anticollapse/embedding.hpp"
#include "anticollapse/rng.hpp"

namespace anticollapse {

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct MixtureConfig {
    std::size_t num_classes = 16;
    std::size_t samples_per_class = 20;
    std::size_t dim = 32;
    double noise_sigma = 0.1;
    std::uint64_t seed = 0;
    /// Gram-Schmidt the class means; requires num_classes <= dim.
    bool orthonormal_means = true;
};

/// Gaussian mixture on the unit sphere. Rows are grouped by class
/// (class 0 first), labels are 0..num_classes-1.
EmbeddingBatch generate_mixture(const MixtureConfig& config);

// ---------------------------------------------------------------------------
// Persistence
//
// Binary layout, little-endian:
//   "ACEM" | u8 version (=1) | u32 n | u32 d | n x u32 label | n*d x f64 row-major
// Files ending in ".csv" are read as text with header label,f0,...,f{d-1}.
// ---------------------------------------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'A', 'C', 'E', 'M'};
inline constexpr std::uint8_t kEmbeddingFormatVersion = 1;

struct LoadOptions {
    /// Rescale rows whose norm is off by more than the tolerance instead of
    /// rejecting the file; a warning is recorded per rescaled file.
    bool renormalize = false;
    double norm_tolerance = kUnitNormTolerance;
};

void save_embeddings(const EmbeddingBatch& batch, const std::filesystem::path& path);
/// Text variant with header label,f0,...; values written with round-trip precision.
void save_embeddings_csv(const EmbeddingBatch& batch, const std::filesystem::path& path);

EmbeddingBatch load_embeddings(const std::filesystem::path& path, const LoadOptions& options = {},
                               std::vector<std::string>* warnings = nullptr);

/// Proxies share the embedding file format; labels hold the class ids.
void save_proxies(const ProxySet& proxies, const std::filesystem::path& path);
ProxySet load_proxies(const std::filesystem::path& path, const LoadOptions& options = {},
                      std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Class-balanced sampling
// ---------------------------------------------------------------------------

struct BatchPlan {
    std::size_t classes_per_batch = 30;  ///< P
    std::size_t samples_per_class = 3;   ///< K

    std::size_t batch_size() const noexcept { return classes_per_batch * samples_per_class; }
};

/// P x K sampler.
///
/// Classes are visited in a shuffled cyclic order and rows within a class are
/// drawn from a shuffled queue, so an epoch touches every class and spreads
/// draws evenly over rows. An epoch has max(ceil(C / P), floor(N / (P K)))
/// batches. Within a batch no row appears twice unless sampling with
/// replacement.
class BatchSampler {
public:
    BatchSampler(std::vector<Label> labels, BatchPlan plan, std::uint64_t seed, bool with_replacement = false);

    std::vector<std::vector<std::size_t>> next_epoch();

    std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }

private:
    std::vector<std::size_t> draw_classes();
    void draw_rows(std::size_t cls, std::vector<std::size_t>& out);

    BatchPlan plan_;
    bool with_replacement_;
    SeededRng rng_;
    std::vector<std::vector<std::size_t>> class_rows_;
    std::vector<std::vector<std::size_t>> row_queues_;
    std::vector<std::size_t> row_cursor_;
    std::vector<std::size_t> class_order_;
    std::size_t class_cursor_ = 0;
    std::size_t batches_per_epoch_ = 0;
};

/// Convenience: the batches of `epochs` consecutive epochs.
std::vector<std::vector<std::size_t>> batch_sampler(std::span<const Label> labels, const BatchPlan& plan,
                                                    std::uint64_t seed, std::size_t epochs = 1,
                                                    bool with_replacement = false);

}  // namespace anticollapse
