#pragma once

#include <functional>
#include <iostream>
#include <string_view>

namespace ppfnn {

enum class LogLevel { Info, Warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

namespace detail {
inline LogSink& log_sink() {
    static LogSink sink = [](LogLevel level, std::string_view msg) {
        std::cerr << (level == LogLevel::Warning ? "warning: " : "info: ") << msg << '\n';
    };
    return sink;
}
} // namespace detail

/// Replace the global log sink. Pass an empty function to silence logging.
inline void set_log_sink(LogSink sink) { detail::log_sink() = std::move(sink); }

inline void log(LogLevel level, std::string_view msg) {
    if (auto& sink = detail::log_sink()) sink(level, msg);
}

inline void log_warning(std::string_view msg) { log(LogLevel::Warning, msg); }
inline void log_info(std::string_view msg) { log(LogLevel::Info, msg); }

} // namespace ppfnn
