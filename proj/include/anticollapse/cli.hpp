#pragma once

#include <ostream>

namespace anticollapse::cli {

inline constexpr const char* kToolVersion = "1.0.0";

/// Entry point for `anticollapse <gradcheck|train|analyze|eval> [flags]`.
/// Returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace anticollapse::cli
