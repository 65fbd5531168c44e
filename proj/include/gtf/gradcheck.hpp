#pragma once

// Finite-difference gradient oracle. Perturbs one leaf element at a time and
// recomputes the scalar objective, central differences at step h. Run it in
// f64 mode: f32 rounding swamps the h² truncation error.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gtf/rng.hpp"
#include "gtf/tensor.hpp"

namespace gtf {

inline std::vector<double> finite_diff_grad(Tensor leaf,
                                            const std::function<double()>& f,
                                            double h = 1e-4) {
    const i64 n = leaf.numel();
    std::vector<double> fd(static_cast<size_t>(n));
    for (i64 i = 0; i < n; ++i) {
        const double v = leaf.at(i);
        leaf.set(i, v + h);
        const double lp = f();
        leaf.set(i, v - h);
        const double lm = f();
        leaf.set(i, v);
        fd[static_cast<size_t>(i)] = (lp - lm) / (2.0 * h);
    }
    return fd;
}

// Same check restricted to k sampled coordinates of the leaf — for graphs
// (e.g. a whole encoder stage) where full element-wise differencing would
// dominate the test budget. Expects leaf.backward-produced grads already in
// place; returns max sampled |fd - an| / max(1, max sampled |an|).
inline double sampled_grad_err(Tensor leaf, const std::function<double()>& f,
                               i64 k, RngState& rng, double h = 1e-4) {
    const i64 n = leaf.numel();
    const std::vector<double> an = leaf.grad_to_double();
    double num = 0.0, den = 1.0;
    for (i64 s = 0; s < std::min(k, n); ++s) {
        const i64 i = k >= n ? s : static_cast<i64>(rng.randint(static_cast<std::uint64_t>(n)));
        const double v = leaf.at(i);
        leaf.set(i, v + h);
        const double lp = f();
        leaf.set(i, v - h);
        const double lm = f();
        leaf.set(i, v);
        const double fd = (lp - lm) / (2.0 * h);
        num = std::max(num, std::abs(fd - an[static_cast<size_t>(i)]));
        den = std::max(den, std::abs(an[static_cast<size_t>(i)]));
    }
    return num / den;
}

// max_i |fd - an| / max(1, max_i |an|)
inline double grad_rel_err(const std::vector<double>& fd,
                           const std::vector<double>& an) {
    double num = 0.0, den = 1.0;
    for (size_t i = 0; i < fd.size(); ++i) {
        const double d = std::abs(fd[i] - an[i]);
        if (d > num) num = d;
        const double a = std::abs(an[i]);
        if (a > den) den = a;
    }
    return num / den;
}

} // namespace gtf
