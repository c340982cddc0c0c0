#pragma once

#include <cstdio>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ltcl::csv {

/// Fixed-precision, locale-free number formatting so reruns are byte-identical.
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v == 0.0 ? 0.0 : v);
    return buf;
}

inline std::string flag(bool v) { return v ? "true" : "false"; }

inline void row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i != 0) {
            out << ',';
        }
        out << cells[i];
    }
    out << '\n';
}

/// Splits one CSV line on commas (no quoting support; our files never quote).
inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        cells.emplace_back(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return cells;
}

}  // namespace ltcl::csv
