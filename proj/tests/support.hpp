#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "evrank/event.hpp"

namespace testing_support {

inline double relative_error(double a, double b, double floor = 1e-7) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f with respect to values[i].
inline double central_difference(std::span<double> values, std::size_t i, const std::function<double()>& f,
                                 double h = 1e-5) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    return (up - down) / (2.0 * h);
}

inline evrank::Vocabulary letters(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back(std::string(1, static_cast<char>('a' + i)));
    return evrank::Vocabulary(evrank::Schema::categorical, names);
}

}  // namespace testing_support
