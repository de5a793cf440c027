#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "transit/rng.hpp"

namespace testutil {

// Central finite differences, h = 1e-5 unless stated otherwise.
inline std::vector<double> numeric_grad(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline bool close_rel(double a, double n, double rel = 1e-4, double abs_floor = 1e-7) {
    const double d = std::fabs(a - n);
    return d <= rel * std::max(std::fabs(a), std::fabs(n)) || d <= abs_floor;
}

inline bool grads_close(const std::vector<double>& analytic, const std::vector<double>& numeric,
                        double rel = 1e-4, double abs_floor = 1e-7) {
    if (analytic.size() != numeric.size()) return false;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        if (!close_rel(analytic[i], numeric[i], rel, abs_floor)) return false;
    return true;
}

inline std::vector<double> random_vec(std::size_t n, transit::Rng& rng, double lo = -2.0,
                                      double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

}  // namespace testutil
