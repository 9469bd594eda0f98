#pragma once

// Leveled diagnostics on standard error. The HRNN_LOG environment variable
// (error, warn, info, debug; default info) sets the verbosity.

#include <string>

namespace chrnn {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel parse_log_level(const std::string& text);
LogLevel log_level();
void set_log_level(LogLevel level);

void log(LogLevel level, const std::string& message);
inline void log_error(const std::string& m) { log(LogLevel::Error, m); }
inline void log_warn(const std::string& m) { log(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log(LogLevel::Info, m); }
inline void log_debug(const std::string& m) { log(LogLevel::Debug, m); }

}  // namespace chrnn
