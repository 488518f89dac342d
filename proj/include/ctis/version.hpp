#pragma once

#include <string_view>

namespace ctis {

inline constexpr std::string_view kToolName = "ctis";
inline constexpr std::string_view kToolVersion = "0.1.0";

} // namespace ctis
