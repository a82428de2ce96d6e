#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "anticollapse/coding_rate.hpp"
#include "anticollapse/losses.hpp"
#include "anticollapse/matrix.hpp"

namespace anticollapse {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-5;

/// Central differences (f(x + h e_ij) - f(x - h e_ij)) / 2h for every entry.
Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x,
                                  double step = kGradcheckStep);

/// max |analytic - numeric| / max(max |numeric|, 1e-8).
double gradient_relative_error(const Matrix& analytic, const Matrix& numeric);

enum class LossFamily { CodingRate, PairAntiCollapse, ProxyNca, ProxyAnchor, ProxyAntiCollapse };

std::string_view to_string(LossFamily family) noexcept;
std::optional<LossFamily> parse_loss_family(std::string_view name) noexcept;
std::vector<LossFamily> all_loss_families();

struct GradcheckOptions {
    std::vector<LossFamily> families = all_loss_families();
    std::size_t cases = 20;
    std::uint64_t seed = 0;
    double step = kGradcheckStep;
    RateParams rate;
    ProxyAnchorParams anchor;
    double nu = 0.0035;
    /// Negative control: flips the sign of every analytic gradient.
    bool negate_analytic = false;
};

struct FamilyReport {
    LossFamily family;
    std::size_t cases = 0;
    std::size_t checks = 0;
    double max_relative_error = 0.0;
};

/// Seeded random instances (n <= 16, d <= 8, m <= 6) per family. For the
/// anti-collapse family each case is checked under both proxy variants, with
/// the base loss alternating between ProxyAnchor and ProxyNCA.
std::vector<FamilyReport> run_gradcheck(const GradcheckOptions& options);

}  // namespace anticollapse
