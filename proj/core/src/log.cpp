#include <chrnn/errors.hpp>
#include <chrnn/log.hpp>

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace chrnn {

namespace {

LogLevel initial_level() {
  const char* env = std::getenv("HRNN_LOG");
  if (!env || !*env) return LogLevel::Info;
  try {
    return parse_log_level(env);
  } catch (const ConfigError&) {
    std::cerr << "[warn] ignoring HRNN_LOG='" << env << "'\n";
    return LogLevel::Info;
  }
}

std::atomic<int>& level_slot() {
  static std::atomic<int> level{static_cast<int>(initial_level())};
  return level;
}

const char* tag(LogLevel level) {
  switch (level) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
  }
  return "?";
}

}  // namespace

LogLevel parse_log_level(const std::string& text) {
  if (text == "error") return LogLevel::Error;
  if (text == "warn") return LogLevel::Warn;
  if (text == "info") return LogLevel::Info;
  if (text == "debug") return LogLevel::Debug;
  throw ConfigError("unknown log level '" + text + "' (expected error, warn, info or debug)");
}

LogLevel log_level() { return static_cast<LogLevel>(level_slot().load()); }

void set_log_level(LogLevel level) { level_slot().store(static_cast<int>(level)); }

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > level_slot().load()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::cerr << '[' << tag(level) << "] " << message << '\n';
}

}  // namespace chrnn
