#pragma once

#include <cmath>
#include <vector>

#include "emd/errors.hpp"
#include "emd/ops.hpp"
#include "emd/tensor.hpp"

// The training objective and the evaluation metrics. Images use intensity 0
// for ink and 1 for background; a pixel counts as "black" when its value is
// at or below the threshold (0.5 everywhere in this project).

namespace emd {

template <typename T>
struct BlackPixelStats {
    std::size_t count = 0;
    T mean = T(0);
};

/// Counts pixels at or below the threshold and their mean intensity.
/// A blank image (no such pixel) cannot be weighted by 1/count and is
/// rejected.
template <typename T>
BlackPixelStats<T> black_pixel_stats(const Tensor<T>& img, T threshold) {
    if (img.numel() == 0) throw std::invalid_argument("black_pixel_stats: empty image");
    BlackPixelStats<T> stats;
    double sum = 0.0;
    for (const T& v : img.data) {
        if (v <= threshold) {
            ++stats.count;
            sum += double(v);
        }
    }
    if (stats.count == 0)
        throw DataError(msg("blank image: no pixel at or below threshold ", threshold,
                            ", cannot weight it for training"));
    stats.mean = T(sum / double(stats.count));
    return stats;
}

/// Per-example loss weights for one minibatch of target images.
template <typename T>
struct BatchWeights {
    std::vector<T> w_st; // 1 / black pixel count, per image
    std::vector<T> w_b;  // softmax over the batch of black pixel means
};

/// Computes both weight families from a stack of targets [N,1,H,W] (or
/// [N,H,W]). The softmax subtracts the max mean first, which keeps it exactly
/// shift-invariant.
template <typename T>
BatchWeights<T> batch_weights(const Tensor<T>& targets, T threshold) {
    if (targets.rank() < 2 || targets.shape[0] == 0)
        throw std::invalid_argument(
            msg("batch_weights: expected a stack of images, got ", targets.shape_str()));
    const std::size_t n = targets.shape[0];
    const std::size_t per = targets.numel() / n;

    BatchWeights<T> w;
    std::vector<double> means(n);
    for (std::size_t i = 0; i < n; ++i) {
        Tensor<T> img;
        img.shape = {per};
        img.data.assign(targets.data.begin() + std::ptrdiff_t(i * per),
                        targets.data.begin() + std::ptrdiff_t((i + 1) * per));
        const BlackPixelStats<T> stats = black_pixel_stats(img, threshold);
        w.w_st.push_back(T(1) / T(stats.count));
        means[i] = double(stats.mean);
    }
    double max_mean = means[0];
    for (double m : means) max_mean = std::max(max_mean, m);
    double denom = 0.0;
    std::vector<double> e(n);
    for (std::size_t i = 0; i < n; ++i) {
        e[i] = std::exp(means[i] - max_mean);
        denom += e[i];
    }
    for (std::size_t i = 0; i < n; ++i) w.w_b.push_back(T(e[i] / denom));
    return w;
}

/// Weighted L1 objective: sum_i w_st[i] * w_b[i] * sum_pixels |pred - target|.
/// The weights are fixed numbers derived from the targets, so the result is
/// differentiable with respect to pred only.
template <typename T>
Tensor<T> weighted_l1(const Tensor<T>& pred, const Tensor<T>& target,
                      const BatchWeights<T>& w) {
    if (!pred.same_shape(target))
        throw std::invalid_argument(msg("weighted_l1: shape mismatch ", pred.shape_str(),
                                        " vs ", target.shape_str()));
    if (w.w_st.size() != pred.shape[0] || w.w_b.size() != pred.shape[0])
        throw std::invalid_argument(msg("weighted_l1: ", w.w_st.size(), " weights for ",
                                        pred.shape[0], " images"));
    std::vector<T> slice_weights(pred.shape[0]);
    for (std::size_t i = 0; i < slice_weights.size(); ++i)
        slice_weights[i] = w.w_st[i] * w.w_b[i];
    // The target enters as a constant even if the caller tracked it.
    Tensor<T> target_const;
    target_const.shape = target.shape;
    target_const.data = target.data;
    return weighted_l1_sum(pred, target_const, slice_weights);
}

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(
            msg(what, ": shape mismatch ", a.shape_str(), " vs ", b.shape_str()));
    if (a.numel() == 0) throw std::invalid_argument(msg(what, ": empty input"));
}

} // namespace detail

/// Mean absolute difference per pixel.
template <typename T>
double l1_metric(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "l1_metric");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(double(a.data[i]) - double(b.data[i]));
    return acc / double(a.numel());
}

/// Root mean squared difference per pixel.
template <typename T>
double rmse_metric(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a, b, "rmse_metric");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return std::sqrt(acc / double(a.numel()));
}

/// Pixel disagreement ratio: binarize both images at the threshold and return
/// the fraction of pixels whose binary values differ.
template <typename T>
double pdar_metric(const Tensor<T>& a, const Tensor<T>& b, double threshold) {
    detail::require_same_shape(a, b, "pdar_metric");
    std::size_t disagree = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const bool ink_a = double(a.data[i]) <= threshold;
        const bool ink_b = double(b.data[i]) <= threshold;
        if (ink_a != ink_b) ++disagree;
    }
    return double(disagree) / double(a.numel());
}

} // namespace emd
