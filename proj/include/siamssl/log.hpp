#pragma once

#include <atomic>
#include <iostream>
#include <mutex>
#include <string_view>

namespace siamssl::log {

enum class Level { debug = 0, info = 1, warn = 2, quiet = 3 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::info};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline void write(Level level, std::string_view tag, std::string_view msg) {
  if (level < threshold().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

inline void debug(std::string_view msg) { write(Level::debug, "debug", msg); }
inline void info(std::string_view msg) { write(Level::info, "info", msg); }
inline void warn(std::string_view msg) { write(Level::warn, "warn", msg); }

}  // namespace siamssl::log
