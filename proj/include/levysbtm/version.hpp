#pragma once

namespace levysbtm {
inline constexpr const char* kVersion = "0.1.0";
}
