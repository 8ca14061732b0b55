#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace dsp {

using Vec = std::vector<double>;

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline void clamp_inplace(std::span<double> v, double lo, double hi) {
    for (double& x : v) x = std::clamp(x, lo, hi);
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace dsp
