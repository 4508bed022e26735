#include "ssem/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ssem {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::warn)};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log(LogLevel level, std::string_view message) {
  if (static_cast<int>(level) > g_level.load() || level == LogLevel::quiet) return;
  std::lock_guard lock(g_mutex);
  std::cerr << message << '\n';
}

}  // namespace ssem
