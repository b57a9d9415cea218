#include "pwashield/log.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>

namespace pwashield {

namespace {

LogLevel parse_env() {
    const char* env = std::getenv("PWA_SHIELD_LOG");
    if (!env) return LogLevel::Warn;
    const std::string v(env);
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "info") return LogLevel::Info;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
}

LogLevel g_level = parse_env();
std::mutex g_mutex;

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

LogLevel log_level() { return g_level; }

void set_log_level(LogLevel level) { g_level = level; }

void log_message(LogLevel level, const std::string& message) {
    std::lock_guard<std::mutex> lock(g_mutex);
    std::cerr << "[pwa-shield " << tag(level) << "] " << message << "\n";
}

}  // namespace pwashield
