#pragma once

#include <functional>
#include <string_view>

namespace dann::log {

enum class Level { Debug, Info, Warn };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes Warn and Info lines to stderr.
Sink set_sink(Sink sink);

void write(Level level, std::string_view message);

inline void info(std::string_view message) { write(Level::Info, message); }
inline void warn(std::string_view message) { write(Level::Warn, message); }

// Captures warnings for the lifetime of the guard; used by tests.
class ScopedSink {
 public:
  explicit ScopedSink(Sink sink) : previous_(set_sink(std::move(sink))) {}
  ~ScopedSink() { set_sink(std::move(previous_)); }
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace dann::log
