#pragma once

#include <string_view>

namespace procua {

enum class LogLevel { debug, info, warning, error, off };

/// Messages below this level are dropped. Defaults to warning.
void set_log_level(LogLevel level);
LogLevel log_level();

/// Thread-safe single-line write to stderr.
void log(LogLevel level, std::string_view message);

inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_warning(std::string_view m) { log(LogLevel::warning, m); }

}  // namespace procua
