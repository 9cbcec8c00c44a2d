#include "rescorr/common.hpp"

#include <iostream>
#include <mutex>

namespace rescorr {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogLevel& threshold() {
  static LogLevel level = LogLevel::warn;
  return level;
}

const char* level_name(LogLevel level) {
  switch (level) {
    case LogLevel::debug: return "debug";
    case LogLevel::info: return "info";
    case LogLevel::warn: return "warn";
    case LogLevel::error: return "error";
  }
  return "?";
}

LogSink& sink() {
  static LogSink s = [](LogLevel level, std::string_view message) {
    if (level < threshold()) return;
    std::clog << "[" << level_name(level) << "] " << message << '\n';
  };
  return s;
}

}  // namespace

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(level, message);
}

LogSink set_log_sink(LogSink s) {
  std::lock_guard lock(sink_mutex());
  std::swap(sink(), s);
  return s;
}

void set_log_level(LogLevel level) {
  std::lock_guard lock(sink_mutex());
  threshold() = level;
}

ScopedLogCapture::ScopedLogCapture() {
  previous_ = set_log_sink([this](LogLevel, std::string_view message) { lines_.emplace_back(message); });
}

ScopedLogCapture::~ScopedLogCapture() { set_log_sink(std::move(previous_)); }

bool ScopedLogCapture::contains(std::string_view needle) const {
  for (const auto& line : lines_)
    if (line.find(needle) != std::string::npos) return true;
  return false;
}

}  // namespace rescorr
