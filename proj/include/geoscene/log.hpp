#pragma once

#include <sstream>
#include <string>

namespace geoscene {

enum class LogLevel { error = 0, info = 1, debug = 2 };

/// resolved once from GEOSCENE_LOG (error|info|debug), default info
LogLevel log_level();

void log_line(LogLevel level, const std::string& msg);

template <typename... Args>
void log_error(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    log_line(LogLevel::error, os.str());
}

template <typename... Args>
void log_info(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    log_line(LogLevel::info, os.str());
}

template <typename... Args>
void log_debug(const Args&... args) {
    std::ostringstream os;
    (os << ... << args);
    log_line(LogLevel::debug, os.str());
}

} // namespace geoscene
