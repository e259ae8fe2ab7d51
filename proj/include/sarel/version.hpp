#pragma once

namespace sarel {

inline constexpr const char* kVersion = "0.1.0";

} // namespace sarel
