#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "emd/rng.hpp"
#include "emd/tape.hpp"
#include "emd/tensor.hpp"

// Shared helpers for the numeric test suites: random tensor filling, a
// finite-difference gradient checker, and a smooth scalar reduction that
// turns any tensor-valued computation into a differentiable scalar without
// introducing kinks.

namespace emd::test {

inline double rel_err(double a, double b) {
    const double scale = std::max(std::max(std::abs(a), std::abs(b)), 1e-6);
    return std::abs(a - b) / scale;
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
    for (T& v : t.data) v = T(rng.uniform(lo, hi));
}

/// Values with magnitude in [0.05, 1.05] and random sign: keeps evaluation
/// points away from the kinks of relu, leaky_relu and |x|.
template <typename T>
void fill_away_from_zero(Tensor<T>& t, Rng& rng) {
    for (T& v : t.data) {
        const double mag = 0.05 + rng.uniform();
        v = T(rng.next_u64() & 1 ? mag : -mag);
    }
}

/// Fixed random coefficients for smooth scalarization.
inline std::vector<double> random_coeffs(std::size_t n, Rng& rng) {
    std::vector<double> c(n);
    for (double& v : c) v = rng.uniform(-1.0, 1.0);
    return c;
}

/// Scalar sum of x[i]*coeffs[i], registered on x's tape when x is tracked.
/// Lives in test code: it is only needed to reduce op outputs to a scalar
/// for gradient checks.
inline Tensor<double> tracked_inner_sum(const Tensor<double>& x,
                                        const std::vector<double>& coeffs) {
    Tensor<double> out({1});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data[i] * coeffs[i];
    out.data[0] = acc;
    if (x.tape && x.node >= 0) {
        out.tape = x.tape;
        out.node = x.tape->add_node(
            out.shape, [xn = x.node, coeffs](Tape<double>& tp, const std::vector<double>& go) {
                std::vector<double>& gx = tp.grad_ref(xn);
                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[0] * coeffs[i];
            });
    }
    return out;
}

struct FdReport {
    double max_rel_err = 0.0;
    std::size_t coords_checked = 0;
};

/// Central finite differences on one parameter tensor. `loss` must recompute
/// the full forward pass from the tensor's current contents. `analytic` is
/// the tape gradient for the same tensor. Checks every stride-th coordinate.
inline FdReport fd_check(const std::function<double()>& loss, Tensor<double>& param,
                         const Tensor<double>& analytic, double h = 1e-5,
                         std::size_t stride = 1) {
    FdReport report;
    for (std::size_t i = 0; i < param.numel(); i += stride) {
        const double saved = param.data[i];
        param.data[i] = saved + h;
        const double up = loss();
        param.data[i] = saved - h;
        const double down = loss();
        param.data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double err = rel_err(fd, analytic.data[i]);
        if (err > report.max_rel_err) report.max_rel_err = err;
        ++report.coords_checked;
    }
    return report;
}

} // namespace emd::test
