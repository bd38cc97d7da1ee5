#pragma once

namespace meshcal {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace meshcal
