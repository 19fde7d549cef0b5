#pragma once

namespace statexp {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace statexp
