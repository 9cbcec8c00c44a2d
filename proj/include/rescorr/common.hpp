#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rescorr {

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (CLI exit code 4).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// LLM backend failure: unreachable endpoint, exhausted transcript (CLI exit code 3).
class ProviderError : public Error {
 public:
  using Error::Error;
};

enum class LogLevel { debug, info, warn, error };

using LogSink = std::function<void(LogLevel, std::string_view)>;

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view m) { log(LogLevel::info, m); }
inline void log_warn(std::string_view m) { log(LogLevel::warn, m); }

/// Replaces the process-wide sink and returns the previous one.
LogSink set_log_sink(LogSink sink);
void set_log_level(LogLevel level);

/// Collects log lines for the lifetime of the object (used by tests).
class ScopedLogCapture {
 public:
  ScopedLogCapture();
  ~ScopedLogCapture();
  ScopedLogCapture(const ScopedLogCapture&) = delete;
  ScopedLogCapture& operator=(const ScopedLogCapture&) = delete;

  const std::vector<std::string>& lines() const { return lines_; }
  bool contains(std::string_view needle) const;

 private:
  std::vector<std::string> lines_;
  LogSink previous_;
};

}  // namespace rescorr
