#pragma once

#include <sstream>
#include <string>

namespace pwashield {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from the PWA_SHIELD_LOG environment variable
// (error|warn|info|debug), default warn.
LogLevel log_level();
void set_log_level(LogLevel level);
void log_message(LogLevel level, const std::string& message);

template <typename... Args>
void log(LogLevel level, Args&&... args) {
    if (level > log_level()) return;
    std::ostringstream os;
    (os << ... << args);
    log_message(level, os.str());
}

}  // namespace pwashield
