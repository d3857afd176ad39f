#pragma once

namespace mbcbf {

inline constexpr const char* kLibraryVersion = "0.1.0";

} // namespace mbcbf
