#pragma once

#include <fmt/core.h>

#include <cstdio>
#include <utility>

namespace fftrain::log {

// Set by the CLI; tests leave it quiet.
inline bool& verbose()
{
    static bool flag = false;
    return flag;
}

template <typename... Args>
void info(fmt::format_string<Args...> format, Args&&... args)
{
    if (verbose()) {
        fmt::print(stderr, format, std::forward<Args>(args)...);
        std::fputc('\n', stderr);
    }
}

template <typename... Args>
void warn(fmt::format_string<Args...> format, Args&&... args)
{
    std::fputs("warning: ", stderr);
    fmt::print(stderr, format, std::forward<Args>(args)...);
    std::fputc('\n', stderr);
}

} // namespace fftrain::log
