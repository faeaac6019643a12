#pragma once

#include <functional>
#include <string>

namespace bhdetect::log {

using Sink = std::function<void(const std::string&)>;

/// Emits a warning through the installed sink (stderr by default).
void warn(const std::string& message);

/// Replaces the warning sink for the lifetime of the guard.
class ScopedSink {
public:
    explicit ScopedSink(Sink sink);
    ~ScopedSink();
    ScopedSink(const ScopedSink&) = delete;
    ScopedSink& operator=(const ScopedSink&) = delete;

private:
    Sink previous_;
};

}  // namespace bhdetect::log
