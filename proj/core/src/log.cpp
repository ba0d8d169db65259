#include "dann/log.hpp"

#include <iostream>
#include <mutex>
#include <string>

namespace dann::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

void default_sink(Level level, std::string_view message) {
  if (level == Level::Debug) return;
  std::cerr << (level == Level::Warn ? "warning: " : "") << message << '\n';
}

Sink& current_sink() {
  static Sink sink = default_sink;
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = sink ? std::move(sink) : Sink(default_sink);
  return previous;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  current_sink()(level, message);
}

}  // namespace dann::log
