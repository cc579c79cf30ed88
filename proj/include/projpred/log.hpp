#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace projpred {

// Warnings are non-fatal diagnostics (skipped candidates, high k-hat, ...).
// The sink can be swapped, e.g. to silence output in tests.
using WarningSink = std::function<void(const std::string&)>;

namespace detail {
inline std::mutex& warning_mutex()
{
    static std::mutex m;
    return m;
}
inline WarningSink& warning_sink()
{
    static WarningSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}
}  // namespace detail

inline WarningSink set_warning_sink(WarningSink sink)
{
    std::lock_guard<std::mutex> lock(detail::warning_mutex());
    return std::exchange(detail::warning_sink(), std::move(sink));
}

inline void warn(const std::string& msg)
{
    std::lock_guard<std::mutex> lock(detail::warning_mutex());
    if (detail::warning_sink()) detail::warning_sink()(msg);
}

/// RAII guard that mutes warnings for its lifetime.
class ScopedSilence {
public:
    ScopedSilence() : previous_(set_warning_sink(nullptr)) {}
    ~ScopedSilence() { set_warning_sink(std::move(previous_)); }
    ScopedSilence(const ScopedSilence&) = delete;
    ScopedSilence& operator=(const ScopedSilence&) = delete;

private:
    WarningSink previous_;
};

}  // namespace projpred
