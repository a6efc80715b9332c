#pragma once

#include <cmath>
#include <limits>

#include "emd/tape.hpp"
#include "emd/tensor.hpp"

// Differentiable tensor operations. Every op computes its result eagerly;
// when at least one operand is tracked on a tape, the result is appended to
// that tape with a closure that propagates gradients back to the tracked
// operands. Untracked operands are treated as constants.

namespace emd {

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> operands) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : operands) {
        if (t->tape == nullptr) continue;
        if (tape == nullptr)
            tape = t->tape;
        else if (tape != t->tape)
            throw std::invalid_argument("operands are tracked on different tapes");
    }
    return tape;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
    if (t.rank() != rank)
        throw std::invalid_argument(
            msg(what, ": expected rank ", rank, " tensor, got shape ", t.shape_str()));
}

} // namespace detail

/// 2D convolution. x is [N,Cin,H,W], w is [Cout,Cin,kh,kw], b is [Cout].
/// Output spatial extent is floor((in + 2*pad - k) / stride) + 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::size_t stride, std::size_t pad) {
    detail::require_rank(x, 4, "conv2d input");
    detail::require_rank(w, 4, "conv2d weight");
    detail::require_rank(b, 1, "conv2d bias");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t n_img = x.shape[0], cin = x.shape[1], in_h = x.shape[2], in_w = x.shape[3];
    const std::size_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[1] != cin)
        throw std::invalid_argument(msg("conv2d: weight expects ", w.shape[1],
                                        " input channels, input has ", cin));
    if (b.shape[0] != cout)
        throw std::invalid_argument(
            msg("conv2d: bias has ", b.shape[0], " channels, weight produces ", cout));
    if (in_h + 2 * pad < kh || in_w + 2 * pad < kw)
        throw std::invalid_argument(msg("conv2d: kernel ", kh, "x", kw,
                                        " does not fit padded input ", x.shape_str()));
    const std::size_t out_h = (in_h + 2 * pad - kh) / stride + 1;
    const std::size_t out_w = (in_w + 2 * pad - kw) / stride + 1;

    Tensor<T> y({n_img, cout, out_h, out_w});
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t oh = 0; oh < out_h; ++oh)
                for (std::size_t ow = 0; ow < out_w; ++ow) {
                    T acc = b.data[co];
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const std::ptrdiff_t ih =
                                std::ptrdiff_t(oh * stride + r) - std::ptrdiff_t(pad);
                            if (ih < 0 || ih >= std::ptrdiff_t(in_h)) continue;
                            for (std::size_t c = 0; c < kw; ++c) {
                                const std::ptrdiff_t iw =
                                    std::ptrdiff_t(ow * stride + c) - std::ptrdiff_t(pad);
                                if (iw < 0 || iw >= std::ptrdiff_t(in_w)) continue;
                                acc += x.at4(n, ci, std::size_t(ih), std::size_t(iw)) *
                                       w.at4(co, ci, r, c);
                            }
                        }
                    y.at4(n, co, oh, ow) = acc;
                }

    Tape<T>* tape = detail::common_tape<T>({&x, &w, &b});
    if (tape) {
        const int xn = (x.tape == tape) ? x.node : -1;
        const int wn = (w.tape == tape) ? w.node : -1;
        const int bn = (b.tape == tape) ? b.node : -1;
        y.tape = tape;
        y.node = tape->add_node(
            y.shape,
            [xd = x.data, wd = w.data, xn, wn, bn, n_img, cin, cout, in_h, in_w, kh, kw,
             out_h, out_w, stride, pad](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* gx = xn >= 0 ? &tp.grad_ref(xn) : nullptr;
                std::vector<T>* gw = wn >= 0 ? &tp.grad_ref(wn) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_ref(bn) : nullptr;
                auto xat = [&](std::size_t n, std::size_t c, std::size_t h, std::size_t w2) {
                    return ((n * cin + c) * in_h + h) * in_w + w2;
                };
                auto wat = [&](std::size_t co, std::size_t ci, std::size_t r, std::size_t c) {
                    return ((co * cin + ci) * kh + r) * kw + c;
                };
                for (std::size_t n = 0; n < n_img; ++n)
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t oh = 0; oh < out_h; ++oh)
                            for (std::size_t ow = 0; ow < out_w; ++ow) {
                                const T g = go[((n * cout + co) * out_h + oh) * out_w + ow];
                                if (gb) (*gb)[co] += g;
                                if (!gx && !gw) continue;
                                for (std::size_t ci = 0; ci < cin; ++ci)
                                    for (std::size_t r = 0; r < kh; ++r) {
                                        const std::ptrdiff_t ih =
                                            std::ptrdiff_t(oh * stride + r) - std::ptrdiff_t(pad);
                                        if (ih < 0 || ih >= std::ptrdiff_t(in_h)) continue;
                                        for (std::size_t c = 0; c < kw; ++c) {
                                            const std::ptrdiff_t iw =
                                                std::ptrdiff_t(ow * stride + c) -
                                                std::ptrdiff_t(pad);
                                            if (iw < 0 || iw >= std::ptrdiff_t(in_w)) continue;
                                            const std::size_t xi =
                                                xat(n, ci, std::size_t(ih), std::size_t(iw));
                                            const std::size_t wi = wat(co, ci, r, c);
                                            if (gx) (*gx)[xi] += g * wd[wi];
                                            if (gw) (*gw)[wi] += g * xd[xi];
                                        }
                                    }
                            }
            });
    }
    return y;
}

/// Transposed 2D convolution (the adjoint of conv2d in its spatial map).
/// x is [N,Cin,H,W], w is [Cin,Cout,kh,kw], b is [Cout]. Output extent is
/// (in - 1)*stride - 2*pad + k + output_padding.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           std::size_t stride, std::size_t pad, std::size_t output_padding) {
    detail::require_rank(x, 4, "conv_transpose2d input");
    detail::require_rank(w, 4, "conv_transpose2d weight");
    detail::require_rank(b, 1, "conv_transpose2d bias");
    if (stride == 0) throw std::invalid_argument("conv_transpose2d: stride must be positive");
    if (output_padding >= stride)
        throw std::invalid_argument(msg("conv_transpose2d: output_padding ", output_padding,
                                        " must be smaller than stride ", stride));
    const std::size_t n_img = x.shape[0], cin = x.shape[1], in_h = x.shape[2], in_w = x.shape[3];
    const std::size_t cout = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    if (w.shape[0] != cin)
        throw std::invalid_argument(msg("conv_transpose2d: weight expects ", w.shape[0],
                                        " input channels, input has ", cin));
    if (b.shape[0] != cout)
        throw std::invalid_argument(msg("conv_transpose2d: bias has ", b.shape[0],
                                        " channels, weight produces ", cout));
    const std::ptrdiff_t oh_total =
        std::ptrdiff_t((in_h - 1) * stride + kh + output_padding) - 2 * std::ptrdiff_t(pad);
    const std::ptrdiff_t ow_total =
        std::ptrdiff_t((in_w - 1) * stride + kw + output_padding) - 2 * std::ptrdiff_t(pad);
    if (oh_total < 1 || ow_total < 1)
        throw std::invalid_argument(
            msg("conv_transpose2d: computed output extent ", oh_total, "x", ow_total,
                " is empty for input ", x.shape_str()));
    const std::size_t out_h = std::size_t(oh_total), out_w = std::size_t(ow_total);

    Tensor<T> y({n_img, cout, out_h, out_w});
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t i = 0; i < out_h * out_w; ++i)
                y.data[((n * cout + co) * out_h * out_w) + i] = b.data[co];
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ih = 0; ih < in_h; ++ih)
                for (std::size_t iw = 0; iw < in_w; ++iw) {
                    const T xv = x.at4(n, ci, ih, iw);
                    for (std::size_t co = 0; co < cout; ++co)
                        for (std::size_t r = 0; r < kh; ++r) {
                            const std::ptrdiff_t oh =
                                std::ptrdiff_t(ih * stride + r) - std::ptrdiff_t(pad);
                            if (oh < 0 || oh >= std::ptrdiff_t(out_h)) continue;
                            for (std::size_t c = 0; c < kw; ++c) {
                                const std::ptrdiff_t ow =
                                    std::ptrdiff_t(iw * stride + c) - std::ptrdiff_t(pad);
                                if (ow < 0 || ow >= std::ptrdiff_t(out_w)) continue;
                                y.at4(n, co, std::size_t(oh), std::size_t(ow)) +=
                                    xv * w.at4(ci, co, r, c);
                            }
                        }
                }

    Tape<T>* tape = detail::common_tape<T>({&x, &w, &b});
    if (tape) {
        const int xn = (x.tape == tape) ? x.node : -1;
        const int wn = (w.tape == tape) ? w.node : -1;
        const int bn = (b.tape == tape) ? b.node : -1;
        y.tape = tape;
        y.node = tape->add_node(
            y.shape,
            [xd = x.data, wd = w.data, xn, wn, bn, n_img, cin, cout, in_h, in_w, kh, kw,
             out_h, out_w, stride, pad](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* gx = xn >= 0 ? &tp.grad_ref(xn) : nullptr;
                std::vector<T>* gw = wn >= 0 ? &tp.grad_ref(wn) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_ref(bn) : nullptr;
                if (gb) {
                    for (std::size_t n = 0; n < n_img; ++n)
                        for (std::size_t co = 0; co < cout; ++co)
                            for (std::size_t i = 0; i < out_h * out_w; ++i)
                                (*gb)[co] += go[(n * cout + co) * out_h * out_w + i];
                }
                if (!gx && !gw) return;
                for (std::size_t n = 0; n < n_img; ++n)
                    for (std::size_t ci = 0; ci < cin; ++ci)
                        for (std::size_t ih = 0; ih < in_h; ++ih)
                            for (std::size_t iw = 0; iw < in_w; ++iw) {
                                const std::size_t xi = ((n * cin + ci) * in_h + ih) * in_w + iw;
                                for (std::size_t co = 0; co < cout; ++co)
                                    for (std::size_t r = 0; r < kh; ++r) {
                                        const std::ptrdiff_t oh =
                                            std::ptrdiff_t(ih * stride + r) - std::ptrdiff_t(pad);
                                        if (oh < 0 || oh >= std::ptrdiff_t(out_h)) continue;
                                        for (std::size_t c = 0; c < kw; ++c) {
                                            const std::ptrdiff_t ow =
                                                std::ptrdiff_t(iw * stride + c) -
                                                std::ptrdiff_t(pad);
                                            if (ow < 0 || ow >= std::ptrdiff_t(out_w)) continue;
                                            const T g = go[((n * cout + co) * out_h +
                                                            std::size_t(oh)) *
                                                               out_w +
                                                           std::size_t(ow)];
                                            const std::size_t wi =
                                                ((ci * cout + co) * kh + r) * kw + c;
                                            if (gx) (*gx)[xi] += g * wd[wi];
                                            if (gw) (*gw)[wi] += g * xd[xi];
                                        }
                                    }
                            }
            });
    }
    return y;
}

/// Running statistics for one batch normalization layer.
template <typename T>
struct BatchNormState {
    std::vector<T> running_mean;
    std::vector<T> running_var;

    explicit BatchNormState(std::size_t channels = 0)
        : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Batch normalization over [N,C,H,W] with per-channel affine transform.
/// Training mode normalizes with the biased batch statistics and folds them
/// into the running estimates; eval mode normalizes with the running
/// estimates. Gradients flow to x, gamma and beta.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, bool training, T eps = T(1e-5),
                      T momentum = T(0.1)) {
    detail::require_rank(x, 4, "batchnorm2d input");
    detail::require_rank(gamma, 1, "batchnorm2d gamma");
    detail::require_rank(beta, 1, "batchnorm2d beta");
    const std::size_t n_img = x.shape[0], ch = x.shape[1], hh = x.shape[2], ww = x.shape[3];
    if (gamma.shape[0] != ch || beta.shape[0] != ch || state.running_mean.size() != ch ||
        state.running_var.size() != ch)
        throw std::invalid_argument(msg("batchnorm2d: channel mismatch, input ", x.shape_str(),
                                        ", gamma ", gamma.shape[0], ", beta ", beta.shape[0],
                                        ", state ", state.running_mean.size()));
    const std::size_t plane = hh * ww;
    const std::size_t m = n_img * plane;
    if (m == 0) throw std::invalid_argument("batchnorm2d: empty input");
    if (training && m < 2)
        throw std::invalid_argument(msg("batchnorm2d: training mode needs at least 2 values "
                                        "per channel, got ",
                                        m, " for input ", x.shape_str()));

    std::vector<T> mean(ch, T(0)), var(ch, T(0));
    if (training) {
        for (std::size_t n = 0; n < n_img; ++n)
            for (std::size_t c = 0; c < ch; ++c) {
                const T* p = x.data.data() + (n * ch + c) * plane;
                T s = T(0);
                for (std::size_t i = 0; i < plane; ++i) s += p[i];
                mean[c] += s;
            }
        for (std::size_t c = 0; c < ch; ++c) mean[c] /= T(m);
        for (std::size_t n = 0; n < n_img; ++n)
            for (std::size_t c = 0; c < ch; ++c) {
                const T* p = x.data.data() + (n * ch + c) * plane;
                T s = T(0);
                for (std::size_t i = 0; i < plane; ++i) {
                    const T d = p[i] - mean[c];
                    s += d * d;
                }
                var[c] += s;
            }
        for (std::size_t c = 0; c < ch; ++c) var[c] /= T(m);
        for (std::size_t c = 0; c < ch; ++c) {
            state.running_mean[c] = (T(1) - momentum) * state.running_mean[c] + momentum * mean[c];
            state.running_var[c] = (T(1) - momentum) * state.running_var[c] + momentum * var[c];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    std::vector<T> inv_std(ch);
    for (std::size_t c = 0; c < ch; ++c) inv_std[c] = T(1) / std::sqrt(var[c] + eps);

    Tensor<T> y(x.shape);
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t c = 0; c < ch; ++c) {
            const T* p = x.data.data() + (n * ch + c) * plane;
            T* q = y.data.data() + (n * ch + c) * plane;
            const T g = gamma.data[c], bshift = beta.data[c], mu = mean[c], is = inv_std[c];
            for (std::size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mu) * is + bshift;
        }

    Tape<T>* tape = detail::common_tape<T>({&x, &gamma, &beta});
    if (tape) {
        const int xn = (x.tape == tape) ? x.node : -1;
        const int gn = (gamma.tape == tape) ? gamma.node : -1;
        const int bn = (beta.tape == tape) ? beta.node : -1;
        y.tape = tape;
        y.node = tape->add_node(
            y.shape,
            [xd = x.data, gd = gamma.data, mean, inv_std, xn, gn, bn, n_img, ch, plane,
             training](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* gx = xn >= 0 ? &tp.grad_ref(xn) : nullptr;
                std::vector<T>* gg = gn >= 0 ? &tp.grad_ref(gn) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_ref(bn) : nullptr;
                const std::size_t m = n_img * plane;
                for (std::size_t c = 0; c < ch; ++c) {
                    const T mu = mean[c], is = inv_std[c], gam = gd[c];
                    // Channel-wise reductions of the incoming gradient.
                    T sum_go = T(0), sum_go_xhat = T(0);
                    for (std::size_t n = 0; n < n_img; ++n) {
                        const std::size_t base = (n * ch + c) * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            const T g = go[base + i];
                            sum_go += g;
                            sum_go_xhat += g * (xd[base + i] - mu) * is;
                        }
                    }
                    if (gb) (*gb)[c] += sum_go;
                    if (gg) (*gg)[c] += sum_go_xhat;
                    if (!gx) continue;
                    if (training) {
                        // Batch statistics depend on x, so the chain rule
                        // couples every element of the channel.
                        for (std::size_t n = 0; n < n_img; ++n) {
                            const std::size_t base = (n * ch + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i) {
                                const T xhat = (xd[base + i] - mu) * is;
                                (*gx)[base + i] +=
                                    gam * is *
                                    (go[base + i] - sum_go / T(m) - xhat * sum_go_xhat / T(m));
                            }
                        }
                    } else {
                        for (std::size_t n = 0; n < n_img; ++n) {
                            const std::size_t base = (n * ch + c) * plane;
                            for (std::size_t i = 0; i < plane; ++i)
                                (*gx)[base + i] += gam * is * go[base + i];
                        }
                    }
                }
            });
    }
    return y;
}

namespace detail {

/// Shared scaffolding for elementwise unary ops: `fwd` maps input value to
/// output value, `dfd` maps (input, output) to the local derivative.
template <typename T, typename Fwd, typename Dfd>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfd dfd) {
    Tensor<T> y;
    y.shape = x.shape;
    y.data.resize(x.data.size());
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = fwd(x.data[i]);
    if (x.tape && x.node >= 0) {
        y.tape = x.tape;
        y.node = x.tape->add_node(
            y.shape, [xd = x.data, yd = y.data, xn = x.node, dfd](Tape<T>& tp,
                                                                  const std::vector<T>& go) {
                std::vector<T>& gx = tp.grad_ref(xn);
                for (std::size_t i = 0; i < go.size(); ++i)
                    gx[i] += go[i] * dfd(xd[i], yd[i]);
            });
    }
    return y;
}

} // namespace detail

/// max(x, 0); the derivative at exactly 0 is taken as 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// x for x >= 0, slope*x otherwise; the derivative at exactly 0 is the slope.
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
    return detail::unary_op(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

/// Logistic sigmoid, clamped so the result stays strictly inside (0,1) even
/// where floating point saturation would round it to an endpoint.
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    const T lo = std::numeric_limits<T>::min();
    const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    return detail::unary_op(
        x,
        [lo, hi](T v) {
            const T y = T(1) / (T(1) + std::exp(-v));
            return y < lo ? lo : (y > hi ? hi : y);
        },
        [](T, T y) { return y * (T(1) - y); });
}

/// Concatenates two [N,C,H,W] tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a, 4, "concat_channels lhs");
    detail::require_rank(b, 4, "concat_channels rhs");
    if (a.shape[0] != b.shape[0] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw std::invalid_argument(msg("concat_channels: incompatible shapes ", a.shape_str(),
                                        " and ", b.shape_str()));
    const std::size_t n_img = a.shape[0], ca = a.shape[1], cb = b.shape[1];
    const std::size_t plane = a.shape[2] * a.shape[3];
    Tensor<T> y({n_img, ca + cb, a.shape[2], a.shape[3]});
    for (std::size_t n = 0; n < n_img; ++n) {
        std::copy(a.data.begin() + std::ptrdiff_t(n * ca * plane),
                  a.data.begin() + std::ptrdiff_t((n + 1) * ca * plane),
                  y.data.begin() + std::ptrdiff_t(n * (ca + cb) * plane));
        std::copy(b.data.begin() + std::ptrdiff_t(n * cb * plane),
                  b.data.begin() + std::ptrdiff_t((n + 1) * cb * plane),
                  y.data.begin() + std::ptrdiff_t((n * (ca + cb) + ca) * plane));
    }
    Tape<T>* tape = detail::common_tape<T>({&a, &b});
    if (tape) {
        const int an = (a.tape == tape) ? a.node : -1;
        const int bn = (b.tape == tape) ? b.node : -1;
        y.tape = tape;
        y.node = tape->add_node(
            y.shape, [an, bn, n_img, ca, cb, plane](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* ga = an >= 0 ? &tp.grad_ref(an) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_ref(bn) : nullptr;
                for (std::size_t n = 0; n < n_img; ++n) {
                    const std::size_t base = n * (ca + cb) * plane;
                    if (ga)
                        for (std::size_t i = 0; i < ca * plane; ++i)
                            (*ga)[n * ca * plane + i] += go[base + i];
                    if (gb)
                        for (std::size_t i = 0; i < cb * plane; ++i)
                            (*gb)[n * cb * plane + i] += go[base + ca * plane + i];
                }
            });
    }
    return y;
}

/// Concatenates any number of [N,Ci,H,W] tensors along the channel axis;
/// a single part passes through as an identity (still tracked).
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no parts given");
    Tensor<T> acc = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_channels(acc, parts[i]);
    return acc;
}

/// Reinterprets x with a new shape holding the same number of elements.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<std::size_t> new_shape) {
    if (Tensor<T>::count(new_shape) != x.numel())
        throw std::invalid_argument(msg("reshape: cannot view ", x.shape_str(), " (", x.numel(),
                                        " elements) as requested shape with ",
                                        Tensor<T>::count(new_shape), " elements"));
    Tensor<T> y;
    y.shape = std::move(new_shape);
    y.data = x.data;
    if (x.tape && x.node >= 0) {
        y.tape = x.tape;
        y.node = x.tape->add_node(y.shape,
                                  [xn = x.node](Tape<T>& tp, const std::vector<T>& go) {
                                      std::vector<T>& gx = tp.grad_ref(xn);
                                      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                                  });
    }
    return y;
}

/// Bilinear mixing: style codes [N,R], interaction tensor [R,K,B], content
/// codes [N,B] combine into [N,K] with out[n,k] = sum_{r,b} s[n,r] w[r,k,b] c[n,b].
template <typename T>
Tensor<T> bilinear_mix(const Tensor<T>& s, const Tensor<T>& w, const Tensor<T>& c) {
    detail::require_rank(s, 2, "bilinear_mix style");
    detail::require_rank(w, 3, "bilinear_mix interaction");
    detail::require_rank(c, 2, "bilinear_mix content");
    const std::size_t n_img = s.shape[0], rr = s.shape[1];
    const std::size_t kk = w.shape[1], bb = w.shape[2];
    if (w.shape[0] != rr)
        throw std::invalid_argument(msg("bilinear_mix: style width ", rr,
                                        " does not match interaction tensor ", w.shape_str()));
    if (c.shape[0] != n_img || c.shape[1] != bb)
        throw std::invalid_argument(msg("bilinear_mix: content ", c.shape_str(),
                                        " does not match style ", s.shape_str(),
                                        " and interaction ", w.shape_str()));

    Tensor<T> y({n_img, kk});
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t r = 0; r < rr; ++r) {
            const T sv = s.data[n * rr + r];
            if (sv == T(0)) continue;
            for (std::size_t k = 0; k < kk; ++k) {
                const T* wp = w.data.data() + (r * kk + k) * bb;
                const T* cp = c.data.data() + n * bb;
                T acc = T(0);
                for (std::size_t b2 = 0; b2 < bb; ++b2) acc += wp[b2] * cp[b2];
                y.data[n * kk + k] += sv * acc;
            }
        }

    Tape<T>* tape = detail::common_tape<T>({&s, &w, &c});
    if (tape) {
        const int sn = (s.tape == tape) ? s.node : -1;
        const int wn = (w.tape == tape) ? w.node : -1;
        const int cn = (c.tape == tape) ? c.node : -1;
        y.tape = tape;
        y.node = tape->add_node(
            y.shape, [sd = s.data, wd = w.data, cd = c.data, sn, wn, cn, n_img, rr, kk,
                      bb](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* gs = sn >= 0 ? &tp.grad_ref(sn) : nullptr;
                std::vector<T>* gw = wn >= 0 ? &tp.grad_ref(wn) : nullptr;
                std::vector<T>* gc = cn >= 0 ? &tp.grad_ref(cn) : nullptr;
                for (std::size_t n = 0; n < n_img; ++n)
                    for (std::size_t r = 0; r < rr; ++r) {
                        const T sv = sd[n * rr + r];
                        for (std::size_t k = 0; k < kk; ++k) {
                            const T g = go[n * kk + k];
                            if (g == T(0)) continue;
                            const T* wp = wd.data() + (r * kk + k) * bb;
                            const T* cp = cd.data() + n * bb;
                            if (gs) {
                                T acc = T(0);
                                for (std::size_t b2 = 0; b2 < bb; ++b2) acc += wp[b2] * cp[b2];
                                (*gs)[n * rr + r] += g * acc;
                            }
                            if (gw) {
                                T* gwp = gw->data() + (r * kk + k) * bb;
                                for (std::size_t b2 = 0; b2 < bb; ++b2)
                                    gwp[b2] += g * sv * cp[b2];
                            }
                            if (gc) {
                                T* gcp = gc->data() + n * bb;
                                for (std::size_t b2 = 0; b2 < bb; ++b2)
                                    gcp[b2] += g * sv * wp[b2];
                            }
                        }
                    }
            });
    }
    return y;
}

/// Sum of absolute differences over the whole tensor, optionally scaling the
/// contribution of each leading-axis slice by a fixed per-slice weight. The
/// weights are plain numbers, not tracked values, so gradients flow only
/// through pred (and target when tracked).
template <typename T>
Tensor<T> weighted_l1_sum(const Tensor<T>& pred, const Tensor<T>& target,
                          const std::vector<T>& slice_weights) {
    if (!pred.same_shape(target))
        throw std::invalid_argument(msg("weighted_l1_sum: shape mismatch ", pred.shape_str(),
                                        " vs ", target.shape_str()));
    if (pred.rank() == 0 || pred.numel() == 0)
        throw std::invalid_argument("weighted_l1_sum: empty input");
    const std::size_t slices = pred.shape[0];
    if (slice_weights.size() != slices)
        throw std::invalid_argument(msg("weighted_l1_sum: ", slice_weights.size(),
                                        " weights for ", slices, " slices"));
    const std::size_t per = pred.numel() / slices;

    Tensor<T> loss({1});
    T acc = T(0);
    for (std::size_t n = 0; n < slices; ++n) {
        T s = T(0);
        for (std::size_t i = 0; i < per; ++i) {
            const T d = pred.data[n * per + i] - target.data[n * per + i];
            s += d < T(0) ? -d : d;
        }
        acc += slice_weights[n] * s;
    }
    loss.data[0] = acc;

    Tape<T>* tape = detail::common_tape<T>({&pred, &target});
    if (tape) {
        const int pn = (pred.tape == tape) ? pred.node : -1;
        const int tn = (target.tape == tape) ? target.node : -1;
        loss.tape = tape;
        loss.node = tape->add_node(
            loss.shape, [pd = pred.data, td = target.data, slice_weights, pn, tn, slices,
                         per](Tape<T>& tp, const std::vector<T>& go) {
                std::vector<T>* gp = pn >= 0 ? &tp.grad_ref(pn) : nullptr;
                std::vector<T>* gt = tn >= 0 ? &tp.grad_ref(tn) : nullptr;
                const T g = go[0];
                for (std::size_t n = 0; n < slices; ++n) {
                    const T wg = g * slice_weights[n];
                    for (std::size_t i = 0; i < per; ++i) {
                        const std::size_t idx = n * per + i;
                        const T d = pd[idx] - td[idx];
                        // Subgradient 0 where pred == target.
                        const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                        if (gp) (*gp)[idx] += wg * sgn;
                        if (gt) (*gt)[idx] -= wg * sgn;
                    }
                }
            });
    }
    return loss;
}

/// Unweighted sum of absolute differences.
template <typename T>
Tensor<T> l1_sum(const Tensor<T>& pred, const Tensor<T>& target) {
    if (!pred.same_shape(target))
        throw std::invalid_argument(
            msg("l1_sum: shape mismatch ", pred.shape_str(), " vs ", target.shape_str()));
    if (pred.rank() == 0 || pred.numel() == 0)
        throw std::invalid_argument("l1_sum: empty input");
    return weighted_l1_sum(pred, target, std::vector<T>(pred.shape[0], T(1)));
}

} // namespace emd
