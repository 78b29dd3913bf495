#pragma once

namespace clipgrad {

inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace clipgrad
