#pragma once

namespace gpreg {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gpreg
