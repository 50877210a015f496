#pragma once

namespace ringrc {

inline constexpr const char* code_version = "ringrc 1.0.0";

} // namespace ringrc
