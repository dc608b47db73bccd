#pragma once

#include <cstdio>
#include <string>

namespace diffq::harness {

/// Shortest-safe round-trip text for a double ("%.17g").
inline std::string fmt_real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace diffq::harness
