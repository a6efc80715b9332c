#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emd/ops.hpp"
#include "emd/rng.hpp"

// The style-transfer network: two convolutional encoders collapse reference
// image stacks to 1x1 latents, a bilinear mixer combines the two latent
// vectors, and a deconvolutional decoder (fed skip maps from the content
// encoder) expands the mixed code back to an image.

namespace emd {

struct ArchConfig {
    std::size_t image_size = 80;
    std::size_t base_channels = 64; // C; channel widths are multiples of this
    std::size_t r = 10;             // reference images per set = encoder input channels
    bool use_skips = true;
};

/// Everything derivable from an ArchConfig: stage counts, channel widths,
/// the spatial extent at each stage, and the deconv output paddings needed
/// to mirror odd extents exactly.
struct ArchPlan {
    std::size_t depth = 0;                  // number of encoder conv stages
    std::vector<std::size_t> multipliers;   // 1, 2, 4, 8, 8, ... per stage
    std::vector<std::size_t> enc_channels;  // base_channels * multiplier
    std::vector<std::size_t> sizes;         // spatial extent after each stage; last is 1
    std::size_t latent_dim = 0;             // 8 * base_channels
    std::vector<std::size_t> dec_channels;  // out channels of the depth-1 up blocks
    std::vector<std::size_t> dec_out_pad;   // per up block, 0 or 1
};

inline ArchPlan plan_architecture(const ArchConfig& arch) {
    if (arch.base_channels == 0)
        throw std::invalid_argument("plan_architecture: base_channels must be positive");
    if (arch.r == 0) throw std::invalid_argument("plan_architecture: r must be positive");
    ArchPlan plan;
    std::size_t s = arch.image_size;
    plan.sizes.push_back(s);
    while (s > 1) {
        s = (s + 1) / 2;
        plan.sizes.push_back(s);
    }
    plan.depth = plan.sizes.size();
    for (std::size_t k = 0; k < plan.depth; ++k) {
        const std::size_t mult = k >= 3 ? 8 : (std::size_t(1) << k);
        plan.multipliers.push_back(mult);
        plan.enc_channels.push_back(arch.base_channels * mult);
    }
    // The deepest stage must reach the full x8 width so the latent has its
    // designed dimension; sizes below 5 collapse to 1x1 too quickly.
    if (plan.multipliers.back() != 8)
        throw std::invalid_argument(
            msg("plan_architecture: image_size ", arch.image_size,
                " reaches 1x1 after only ", plan.depth - 1,
                " halvings; at least 3 are needed (image_size >= 5)"));
    plan.latent_dim = arch.base_channels * 8;
    for (std::size_t k = 0; k + 1 < plan.depth; ++k) {
        const std::size_t target = plan.sizes[plan.depth - 2 - k];
        const std::size_t in = plan.sizes[plan.depth - 1 - k];
        plan.dec_channels.push_back(plan.enc_channels[plan.depth - 2 - k]);
        plan.dec_out_pad.push_back(target - (2 * in - 1));
    }
    return plan;
}

/// One Conv/Deconv stage with its normalization parameters. Blocks without
/// normalization (the output layer) leave gamma/beta empty.
template <typename T>
struct ConvBlock {
    Tensor<T> w, b, gamma, beta;
    BatchNormState<T> bn;
    std::size_t stride = 1, pad = 0, out_pad = 0;
};

template <typename T>
struct Model {
    ArchConfig arch;
    ArchPlan plan;
    std::vector<ConvBlock<T>> style_enc;
    std::vector<ConvBlock<T>> content_enc;
    Tensor<T> mixer; // [R,K,B], all equal to latent_dim
    std::vector<ConvBlock<T>> decoder; // depth-1 up blocks plus the output block

    struct Encoded {
        Tensor<T> latent;             // [N, latent_dim]
        std::vector<Tensor<T>> skips; // deepest-first feature maps, one per stage
    };

    /// Parameter tensors in a stable, named order (checkpoint and optimizer
    /// order both derive from this).
    std::vector<std::pair<std::string, Tensor<T>*>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        auto add_stack = [&out](const char* prefix, std::vector<ConvBlock<T>>& blocks) {
            for (std::size_t k = 0; k < blocks.size(); ++k) {
                const std::string base = msg(prefix, ".", k, ".");
                out.emplace_back(base + "w", &blocks[k].w);
                out.emplace_back(base + "b", &blocks[k].b);
                if (blocks[k].gamma.numel() > 0) {
                    out.emplace_back(base + "gamma", &blocks[k].gamma);
                    out.emplace_back(base + "beta", &blocks[k].beta);
                }
            }
        };
        add_stack("style_enc", style_enc);
        add_stack("content_enc", content_enc);
        out.emplace_back("mixer", &mixer);
        add_stack("decoder", decoder);
        return out;
    }

    std::vector<std::pair<std::string, BatchNormState<T>*>> bn_states() {
        std::vector<std::pair<std::string, BatchNormState<T>*>> out;
        auto add_stack = [&out](const char* prefix, std::vector<ConvBlock<T>>& blocks) {
            for (std::size_t k = 0; k < blocks.size(); ++k)
                if (blocks[k].gamma.numel() > 0)
                    out.emplace_back(msg(prefix, ".", k), &blocks[k].bn);
        };
        add_stack("style_enc", style_enc);
        add_stack("content_enc", content_enc);
        add_stack("decoder", decoder);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& [name, t] : parameters()) n += t->numel();
        return n;
    }

    void attach(Tape<T>& tape) {
        for (auto& [name, t] : parameters()) tape.leaf(*t, true);
    }

    void detach_params() {
        for (auto& [name, t] : parameters()) detach(*t);
    }

    Tensor<T> encode_style(const Tensor<T>& refs, bool training) {
        validate_refs(refs, "encode_style");
        Tensor<T> h = run_encoder(style_enc, refs, training, nullptr);
        return reshape(h, {refs.shape[0], plan.latent_dim});
    }

    Encoded encode_content(const Tensor<T>& refs, bool training) {
        validate_refs(refs, "encode_content");
        Encoded enc;
        std::vector<Tensor<T>> maps;
        Tensor<T> h = run_encoder(content_enc, refs, training, &maps);
        enc.latent = reshape(h, {refs.shape[0], plan.latent_dim});
        enc.skips.assign(maps.rbegin(), maps.rend());
        return enc;
    }

    Tensor<T> mix(const Tensor<T>& s, const Tensor<T>& c) { return bilinear_mix(s, mixer, c); }

    Tensor<T> decode(const Tensor<T>& f, const std::vector<Tensor<T>>& skips, bool training) {
        if (f.rank() != 2 || f.shape[1] != plan.latent_dim)
            throw std::invalid_argument(msg("decode: expected mixed code [N,", plan.latent_dim,
                                            "], got ", f.shape_str()));
        const std::size_t n = f.shape[0];
        if (arch.use_skips) {
            if (skips.size() != plan.depth)
                throw std::invalid_argument(msg("decode: expected ", plan.depth,
                                                " skip maps, got ", skips.size()));
            for (std::size_t k = 0; k < plan.depth; ++k) {
                const std::size_t want_c = plan.enc_channels[plan.depth - 1 - k];
                const std::size_t want_s = plan.sizes[plan.depth - 1 - k];
                if (skips[k].rank() != 4 || skips[k].shape[0] != n ||
                    skips[k].shape[1] != want_c || skips[k].shape[2] != want_s ||
                    skips[k].shape[3] != want_s)
                    throw std::invalid_argument(
                        msg("decode: skip ", k, " has shape ", skips[k].shape_str(),
                            ", expected [", n, "x", want_c, "x", want_s, "x", want_s, "]"));
            }
        }
        Tensor<T> h = reshape(f, {n, plan.latent_dim, 1, 1});
        for (std::size_t k = 0; k + 1 < plan.depth; ++k) {
            if (arch.use_skips) h = concat_channels(h, skips[k]);
            ConvBlock<T>& blk = decoder[k];
            h = conv_transpose2d(h, blk.w, blk.b, blk.stride, blk.pad, blk.out_pad);
            h = batchnorm2d(h, blk.gamma, blk.beta, blk.bn, training);
            h = relu(h);
        }
        if (arch.use_skips) h = concat_channels(h, skips[plan.depth - 1]);
        ConvBlock<T>& out_blk = decoder[plan.depth - 1];
        h = conv_transpose2d(h, out_blk.w, out_blk.b, out_blk.stride, out_blk.pad,
                             out_blk.out_pad);
        return sigmoid(h);
    }

    Tensor<T> forward(const Tensor<T>& style_refs, const Tensor<T>& content_refs,
                      bool training) {
        Tensor<T> s = encode_style(style_refs, training);
        Encoded c = encode_content(content_refs, training);
        Tensor<T> f = mix(s, c.latent);
        return decode(f, c.skips, training);
    }

  private:
    void validate_refs(const Tensor<T>& refs, const char* what) const {
        if (refs.rank() != 4)
            throw std::invalid_argument(
                msg(what, ": expected [N,r,H,W] references, got ", refs.shape_str()));
        if (refs.shape[1] != arch.r)
            throw std::invalid_argument(msg(what, ": model was built for r=", arch.r,
                                            " reference images, got ", refs.shape[1]));
        if (refs.shape[2] != arch.image_size || refs.shape[3] != arch.image_size)
            throw std::invalid_argument(msg(what, ": expected ", arch.image_size, "x",
                                            arch.image_size, " images, got ",
                                            refs.shape_str()));
        for (const T& v : refs.data)
            if (!(v >= T(0) && v <= T(1)))
                throw std::invalid_argument(
                    msg(what, ": reference pixel values must lie in [0,1], found ", v));
    }

    Tensor<T> run_encoder(std::vector<ConvBlock<T>>& blocks, const Tensor<T>& x0,
                          bool training, std::vector<Tensor<T>>* record) {
        Tensor<T> h = x0;
        for (ConvBlock<T>& blk : blocks) {
            h = conv2d(h, blk.w, blk.b, blk.stride, blk.pad);
            h = batchnorm2d(h, blk.gamma, blk.beta, blk.bn, training);
            h = leaky_relu(h, T(0.2));
            if (record) record->push_back(h);
        }
        return h;
    }
};

namespace detail {

template <typename T>
void init_weight(Tensor<T>& w, Rng& rng, T std_dev) {
    for (T& v : w.data) v = T(rng.normal(0.0, double(std_dev)));
}

template <typename T>
ConvBlock<T> make_block(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                        std::size_t stride, std::size_t pad, std::size_t out_pad,
                        bool transposed, bool with_norm, Rng& rng) {
    ConvBlock<T> blk;
    blk.stride = stride;
    blk.pad = pad;
    blk.out_pad = out_pad;
    blk.w = transposed ? Tensor<T>({in_ch, out_ch, kernel, kernel})
                       : Tensor<T>({out_ch, in_ch, kernel, kernel});
    init_weight(blk.w, rng, T(0.02));
    blk.b = Tensor<T>({out_ch}, T(0));
    if (with_norm) {
        blk.gamma = Tensor<T>({out_ch}, T(1));
        blk.beta = Tensor<T>({out_ch}, T(0));
        blk.bn = BatchNormState<T>(out_ch);
    }
    return blk;
}

} // namespace detail

/// Builds a model with freshly initialized parameters: conv weights and the
/// mixer from N(0, 0.02), biases and beta zero, gamma one. Only the weight
/// draws consume the generator, so the layout of zero-initialized tensors
/// cannot perturb the stream.
template <typename T>
Model<T> build_model(const ArchConfig& arch, std::uint64_t seed) {
    Model<T> m;
    m.arch = arch;
    m.plan = plan_architecture(arch);
    Rng rng(seed);
    const std::size_t depth = m.plan.depth;

    auto build_encoder = [&]() {
        std::vector<ConvBlock<T>> blocks;
        for (std::size_t k = 0; k < depth; ++k) {
            const std::size_t in_ch = k == 0 ? arch.r : m.plan.enc_channels[k - 1];
            const std::size_t kernel = k == 0 ? 5 : 3;
            const std::size_t stride = k == 0 ? 1 : 2;
            const std::size_t pad = k == 0 ? 2 : 1;
            blocks.push_back(detail::make_block<T>(in_ch, m.plan.enc_channels[k], kernel,
                                                   stride, pad, 0, false, true, rng));
        }
        return blocks;
    };
    m.style_enc = build_encoder();
    m.content_enc = build_encoder();

    const std::size_t d = m.plan.latent_dim;
    m.mixer = Tensor<T>({d, d, d});
    detail::init_weight(m.mixer, rng, T(0.02));

    std::size_t carry = d;
    for (std::size_t k = 0; k + 1 < depth; ++k) {
        const std::size_t skip_ch = arch.use_skips ? m.plan.enc_channels[depth - 1 - k] : 0;
        m.decoder.push_back(detail::make_block<T>(carry + skip_ch, m.plan.dec_channels[k], 3,
                                                  2, 1, m.plan.dec_out_pad[k], true, true,
                                                  rng));
        carry = m.plan.dec_channels[k];
    }
    const std::size_t skip_ch = arch.use_skips ? m.plan.enc_channels[0] : 0;
    m.decoder.push_back(
        detail::make_block<T>(carry + skip_ch, 1, 5, 1, 2, 0, true, false, rng));
    return m;
}

} // namespace emd
