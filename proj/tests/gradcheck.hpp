#pragma once

// Test-side finite-difference oracle, independent of the autodiff backward
// path it checks. Central differences with h = 1e-3, accumulated in double.

#include <cmath>
#include <functional>
#include <vector>

#include "vqseg/rng.hpp"
#include "vqseg/tensor.hpp"

namespace gradcheck {

using vqseg::Tensor;

// loss_fn must rebuild the graph from the leaf values it is given.
using LossFn = std::function<double(const std::vector<float>&)>;

inline std::vector<double> finite_difference(const LossFn& loss_fn, std::vector<float> x,
                                             double h = 1e-3) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const float orig = x[i];
        x[i] = static_cast<float>(orig + h);
        const double up = loss_fn(x);
        x[i] = static_cast<float>(orig - h);
        const double dn = loss_fn(x);
        x[i] = orig;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

struct GradErr {
    double max_rel = 0.0;
    double max_abs = 0.0;
};

inline GradErr compare(const std::vector<float>& analytic, const std::vector<double>& numeric) {
    GradErr e;
    for (size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic[i], n = numeric[i];
        const double abs = std::fabs(a - n);
        const double scale = std::max(std::fabs(a), std::fabs(n));
        e.max_abs = std::max(e.max_abs, abs);
        // below this magnitude float32 central differences are noise-bound
        // and the absolute criterion governs
        if (scale > 1e-2) e.max_rel = std::max(e.max_rel, abs / scale);
    }
    return e;
}

inline std::vector<float> random_values(vqseg::Rng& rng, size_t n, double lo = -1.0,
                                        double hi = 1.0) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

}  // namespace gradcheck
