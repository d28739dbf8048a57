#pragma once

#include <spdlog/spdlog.h>

namespace faithdec::log {

/// The library logger. Its level comes from the FD_LOG environment variable
/// (trace, debug, info, warn, error, off); the default is warn.
spdlog::logger& logger();

template <typename... Args>
void debug(fmt::format_string<Args...> fmt, Args&&... args) {
  logger().debug(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void info(fmt::format_string<Args...> fmt, Args&&... args) {
  logger().info(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(fmt::format_string<Args...> fmt, Args&&... args) {
  logger().warn(fmt, std::forward<Args>(args)...);
}

}  // namespace faithdec::log
