#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>

namespace fairlens::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

// Verbosity comes from the FAIRLENS_LOG environment variable
// (error|warn|info|debug); default is warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("FAIRLENS_LOG");
    if (env == nullptr) return Level::warn;
    const std::string v(env);
    if (v == "error") return Level::error;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

inline void emit(Level level, const char* tag, const std::string& message) {
  if (level <= threshold()) {
    std::fprintf(stderr, "[fairlens %s] %s\n", tag, message.c_str());
  }
}

inline void error(const std::string& m) { emit(Level::error, "error", m); }
inline void warn(const std::string& m) { emit(Level::warn, "warn", m); }
inline void info(const std::string& m) { emit(Level::info, "info", m); }
inline void debug(const std::string& m) { emit(Level::debug, "debug", m); }

}  // namespace fairlens::log
