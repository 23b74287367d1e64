#pragma once
// Minimal stderr logger controlled by the COVARCAST_LOG environment
// variable: off|error|warn|info|debug (default warn).

#include <cstdlib>
#include <iostream>
#include <string>

namespace covarcast {

enum class LogLevel { off = 0, error = 1, warn = 2, info = 3, debug = 4 };

inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("COVARCAST_LOG");
        if (!env) return LogLevel::warn;
        const std::string s(env);
        if (s == "off" || s == "quiet" || s == "none") return LogLevel::off;
        if (s == "error") return LogLevel::error;
        if (s == "warn" || s == "warning") return LogLevel::warn;
        if (s == "info") return LogLevel::info;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

inline void log_at(LogLevel lvl, const std::string& tag, const std::string& msg) {
    if (static_cast<int>(lvl) <= static_cast<int>(log_level()))
        std::cerr << "[covarcast " << tag << "] " << msg << "\n";
}

inline void log_error(const std::string& msg) { log_at(LogLevel::error, "error", msg); }
inline void log_warn(const std::string& msg) { log_at(LogLevel::warn, "warn", msg); }
inline void log_info(const std::string& msg) { log_at(LogLevel::info, "info", msg); }
inline void log_debug(const std::string& msg) { log_at(LogLevel::debug, "debug", msg); }

}  // namespace covarcast
