#include "dloo/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace dloo {

LogLevel log_threshold() {
  static const LogLevel level = [] {
    const char* env = std::getenv("DEBATE_LOO_LOG");
    const std::string v = env ? env : "";
    if (v == "error") return LogLevel::Error;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return level;
}

void log_message(LogLevel level, std::string_view message) {
  if (level > log_threshold()) return;
  static std::mutex mutex;
  static constexpr const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard lock(mutex);
  std::cerr << "[debate-loo " << names[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace dloo
