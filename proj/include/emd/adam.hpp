#pragma once

#include <cmath>
#include <vector>

#include "emd/errors.hpp"
#include "emd/tensor.hpp"

namespace emd {

/// First and second moment estimates for one group of parameters, in the
/// same order the parameters are passed to adam_step. `step` counts completed
/// updates and drives bias correction.
template <typename T>
struct AdamState {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;
};

/// One Adam update over a parameter group. Moment buffers are allocated on
/// first use. Throws NumericError if a gradient has already gone non-finite,
/// since stepping would silently poison every parameter it touches.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
               T eps = T(1e-8)) {
    if (params.size() != grads.size())
        throw std::invalid_argument(
            msg("adam_step: ", params.size(), " parameters but ", grads.size(), " gradients"));
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i]->numel(), T(0));
            state.v[i].assign(params[i]->numel(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument(msg("adam_step: state tracks ", state.m.size(),
                                        " parameters, got ", params.size()));

    state.step += 1;
    const T bc1 = T(1) - T(std::pow(double(beta1), double(state.step)));
    const T bc2 = T(1) - T(std::pow(double(beta2), double(state.step)));

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& p = *params[i];
        const Tensor<T>& g = grads[i];
        if (!p.same_shape(g))
            throw std::invalid_argument(msg("adam_step: parameter ", i, " has shape ",
                                            p.shape_str(), " but gradient has ", g.shape_str()));
        if (state.m[i].size() != p.numel())
            throw std::invalid_argument(msg("adam_step: state buffer for parameter ", i,
                                            " holds ", state.m[i].size(), " values, expected ",
                                            p.numel()));
        if (!g.all_finite())
            throw NumericError(msg("adam_step: non-finite gradient for parameter ", i,
                                   " at update ", state.step));
        std::vector<T>& mi = state.m[i];
        std::vector<T>& vi = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const T gj = g.data[j];
            mi[j] = beta1 * mi[j] + (T(1) - beta1) * gj;
            vi[j] = beta2 * vi[j] + (T(1) - beta2) * gj * gj;
            const T mhat = mi[j] / bc1;
            const T vhat = vi[j] / bc2;
            p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

} // namespace emd
