#pragma once

#include <cstdlib>
#include <string_view>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

namespace falcon::log {

// Logger writing to stderr, level taken from FALCON_LOG={error,info,debug}
// (default: warn).
inline spdlog::logger& get() {
  static const std::shared_ptr<spdlog::logger> logger = [] {
    auto l = spdlog::stderr_color_mt("falcon");
    l->set_pattern("[%l] %v");
    l->set_level(spdlog::level::warn);
    if (const char* env = std::getenv("FALCON_LOG")) {
      const std::string_view v(env);
      if (v == "error") l->set_level(spdlog::level::err);
      else if (v == "info") l->set_level(spdlog::level::info);
      else if (v == "debug") l->set_level(spdlog::level::debug);
    }
    return l;
  }();
  return *logger;
}

template <typename... Args>
void debug(fmt::format_string<Args...> fmt, Args&&... args) {
  get().debug(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void info(fmt::format_string<Args...> fmt, Args&&... args) {
  get().info(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(fmt::format_string<Args...> fmt, Args&&... args) {
  get().warn(fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void error(fmt::format_string<Args...> fmt, Args&&... args) {
  get().error(fmt, std::forward<Args>(args)...);
}

}  // namespace falcon::log
