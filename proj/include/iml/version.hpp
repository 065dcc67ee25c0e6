#pragma once

namespace iml {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace iml
