#pragma once

namespace tonel {

inline constexpr const char* kVersion = "tonel/0.1.0";

}  // namespace tonel
