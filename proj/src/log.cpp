#include "ghd/log.hpp"

#include <atomic>
#include <iostream>

namespace ghd {
namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::warn)};
}

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_message(LogLevel level, const std::string& message) {
  const char* tag = level == LogLevel::warn ? "warning" : level == LogLevel::info ? "info" : "debug";
  std::cerr << "[ghd " << tag << "] " << message << '\n';
}

}  // namespace ghd
