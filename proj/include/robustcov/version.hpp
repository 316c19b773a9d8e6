#pragma once

namespace robustcov {
inline constexpr const char* kVersion = "0.1.0";
}
