#pragma once

#include <string>

#define TTADRIFT_VERSION "0.1.0"

// Builds from a git checkout pass the revision in through the compiler.
#ifndef TTADRIFT_GIT_REVISION
#define TTADRIFT_GIT_REVISION "unknown"
#endif

namespace ttadrift {

inline constexpr const char* kVersion = TTADRIFT_VERSION;

inline std::string code_version() { return std::string(TTADRIFT_VERSION) + "+" + TTADRIFT_GIT_REVISION; }

} // namespace ttadrift
