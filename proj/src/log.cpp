#include "geoscene/log.hpp"

#include <cstdlib>
#include <iostream>

namespace geoscene {

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("GEOSCENE_LOG");
        if (!env) return LogLevel::info;
        const std::string s(env);
        if (s == "error") return LogLevel::error;
        if (s == "debug") return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

void log_line(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    const char* tag = level == LogLevel::error ? "error"
                    : level == LogLevel::info  ? "info"
                                               : "debug";
    std::cerr << "[" << tag << "] " << msg << "\n";
}

} // namespace geoscene
