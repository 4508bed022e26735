#pragma once

#include <string_view>

namespace ssem {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes one line to stderr when `level` is enabled. Thread-safe.
void log(LogLevel level, std::string_view message);

inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }
inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_debug(std::string_view m) { log(LogLevel::debug, m); }

}  // namespace ssem
