#pragma once

#include <charconv>
#include <string>

namespace anticollapse::detail {

/// Shortest decimal form that round-trips.
inline std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

}  // namespace anticollapse::detail
