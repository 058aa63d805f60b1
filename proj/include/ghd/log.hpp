#pragma once

#include <sstream>
#include <string>

namespace ghd {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_message(LogLevel level, const std::string& message);

template <typename... Args>
void log_warn(const Args&... args) {
  if (log_level() < LogLevel::warn) return;
  std::ostringstream os;
  (os << ... << args);
  log_message(LogLevel::warn, os.str());
}

template <typename... Args>
void log_info(const Args&... args) {
  if (log_level() < LogLevel::info) return;
  std::ostringstream os;
  (os << ... << args);
  log_message(LogLevel::info, os.str());
}

template <typename... Args>
void log_debug(const Args&... args) {
  if (log_level() < LogLevel::debug) return;
  std::ostringstream os;
  (os << ... << args);
  log_message(LogLevel::debug, os.str());
}

}  // namespace ghd
