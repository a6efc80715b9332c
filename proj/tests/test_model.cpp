#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>

#include "emd/model.hpp"
#include "emd/rng.hpp"
#include "support.hpp"

using emd::ArchConfig;
using emd::Tensor;
using namespace emd::test;

namespace {

Tensor<double> random_refs(std::size_t n, std::size_t r, std::size_t size, std::uint64_t seed) {
    emd::Rng rng(seed);
    Tensor<double> t({n, r, size, size});
    fill_uniform(t, rng, 0.0, 1.0);
    return t;
}

} // namespace

TEST_CASE("the 80-pixel plan reproduces the reference schedule") {
    auto plan = emd::plan_architecture({80, 64, 10, true});
    CHECK(plan.depth == 8);
    CHECK(plan.sizes == std::vector<std::size_t>{80, 40, 20, 10, 5, 3, 2, 1});
    CHECK(plan.enc_channels ==
          std::vector<std::size_t>{64, 128, 256, 512, 512, 512, 512, 512});
    CHECK(plan.dec_channels == std::vector<std::size_t>{512, 512, 512, 512, 256, 128, 64});
    CHECK(plan.latent_dim == 512);
    // Odd extents force output padding only where the doubled size falls short.
    // 1->2: pad 1; 2->3: pad 0; 3->5: pad 0; 5->10: pad 1; 10->20: pad 1; ...
    CHECK(plan.dec_out_pad == std::vector<std::size_t>{1, 0, 0, 1, 1, 1, 1});
}

TEST_CASE("the 32-pixel plan matches the schedule arithmetic") {
    auto plan = emd::plan_architecture({32, 8, 4, true});
    CHECK(plan.depth == 6);
    CHECK(plan.latent_dim == 64);
    CHECK(plan.enc_channels == std::vector<std::size_t>{8, 16, 32, 64, 64, 64});
    auto model = emd::build_model<float>({32, 8, 4, true}, 5);
    CHECK(model.mixer.shape == std::vector<std::size_t>{64, 64, 64});
    CHECK(model.style_enc.size() == 6);
    CHECK(model.decoder.size() == 6); // 5 up blocks plus the output block
}

TEST_CASE("plans reject unusable configurations") {
    CHECK_THROWS_AS((void)emd::plan_architecture({4, 8, 4, true}), std::invalid_argument);
    CHECK_THROWS_AS((void)emd::plan_architecture({32, 0, 4, true}), std::invalid_argument);
    CHECK_THROWS_AS((void)emd::plan_architecture({32, 8, 0, true}), std::invalid_argument);
    CHECK_NOTHROW((void)emd::plan_architecture({5, 2, 1, true}));
}

TEST_CASE("same seed builds byte-identical parameters") {
    auto a = emd::build_model<float>({8, 2, 2, true}, 99);
    auto b = emd::build_model<float>({8, 2, 2, true}, 99);
    auto pa = a.parameters();
    auto pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second->numel() == pb[i].second->numel());
        CHECK(std::memcmp(pa[i].second->data.data(), pb[i].second->data.data(),
                          pa[i].second->numel() * sizeof(float)) == 0);
    }
    auto c = emd::build_model<float>({8, 2, 2, true}, 100);
    CHECK(std::memcmp(c.style_enc[0].w.data.data(), a.style_enc[0].w.data.data(),
                      a.style_enc[0].w.numel() * sizeof(float)) != 0);
}

TEST_CASE("parameter count matches independent arithmetic for the micro model") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 1);
    // Encoder: 5x5 conv from r=2 to 2, then 3x3 convs 2->4->8->16, each with
    // bias, gamma, beta.
    const std::size_t enc = (2 * 2 * 25 + 2 + 2 + 2) + (4 * 2 * 9 + 4 + 4 + 4) +
                            (8 * 4 * 9 + 8 + 8 + 8) + (16 * 8 * 9 + 16 + 16 + 16);
    const std::size_t mixer = 16 * 16 * 16;
    // Decoder: up blocks (32->8, 16->4, 8->2) with bias+norm, output block
    // (4->1, 5x5) with bias only.
    const std::size_t dec = (32 * 8 * 9 + 8 + 8 + 8) + (16 * 4 * 9 + 4 + 4 + 4) +
                            (8 * 2 * 9 + 2 + 2 + 2) + (4 * 1 * 25 + 1);
    CHECK(m.parameter_count() == 2 * enc + mixer + dec);
    CHECK(m.mixer.numel() == mixer);
}

TEST_CASE("encoders produce flat latents and ordered skip maps") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 7);
    auto refs = random_refs(2, 2, 8, 21);
    auto s = m.encode_style(refs, false);
    CHECK(s.shape == std::vector<std::size_t>{2, 16});

    auto enc = m.encode_content(refs, false);
    CHECK(enc.latent.shape == std::vector<std::size_t>{2, 16});
    REQUIRE(enc.skips.size() == 4);
    // Deepest first: 1x1 with 16 channels up to 8x8 with 2 channels.
    CHECK(enc.skips[0].shape == std::vector<std::size_t>{2, 16, 1, 1});
    CHECK(enc.skips[1].shape == std::vector<std::size_t>{2, 8, 2, 2});
    CHECK(enc.skips[2].shape == std::vector<std::size_t>{2, 4, 4, 4});
    CHECK(enc.skips[3].shape == std::vector<std::size_t>{2, 2, 8, 8});

    // Reference order matters: swapping the two reference channels changes
    // the latent.
    Tensor<double> swapped = refs;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 64; ++i)
            std::swap(swapped.data[(n * 2 + 0) * 64 + i], swapped.data[(n * 2 + 1) * 64 + i]);
    auto s2 = m.encode_style(swapped, false);
    bool differs = false;
    for (std::size_t i = 0; i < s.numel(); ++i)
        if (s.data[i] != s2.data[i]) differs = true;
    CHECK(differs);

    // All-zero references stay numerically finite.
    Tensor<double> zeros({1, 2, 8, 8}, 0.0);
    auto sz = m.encode_style(zeros, false);
    CHECK(sz.all_finite());
}

TEST_CASE("reference validation names the problem") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 7);
    Tensor<double> wrong_r({1, 3, 8, 8}, 0.5);
    CHECK_THROWS_WITH_AS((void)m.encode_style(wrong_r, false), doctest::Contains("r=2"),
                         std::invalid_argument);
    Tensor<double> wrong_size({1, 2, 9, 9}, 0.5);
    CHECK_THROWS_AS((void)m.encode_style(wrong_size, false), std::invalid_argument);
    Tensor<double> out_of_range({1, 2, 8, 8}, 1.5);
    CHECK_THROWS_WITH_AS((void)m.encode_content(out_of_range, false),
                         doctest::Contains("[0,1]"), std::invalid_argument);
}

TEST_CASE("forward yields an image in (0,1) of the configured size") {
    for (std::size_t size : {std::size_t(8), std::size_t(5), std::size_t(13)}) {
        CAPTURE(size);
        auto m = emd::build_model<double>({size, 2, 2, true}, 3);
        auto srefs = random_refs(2, 2, size, 31);
        auto crefs = random_refs(2, 2, size, 32);
        auto img = m.forward(srefs, crefs, false);
        REQUIRE(img.shape == std::vector<std::size_t>{2, 1, size, size});
        for (double v : img.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("eval-mode forward is pure and repeatable") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 11);
    auto srefs = random_refs(1, 2, 8, 41);
    auto crefs = random_refs(1, 2, 8, 42);
    const auto stats_before = m.style_enc[0].bn.running_mean;
    auto a = m.forward(srefs, crefs, false);
    auto b = m.forward(srefs, crefs, false);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.numel() * sizeof(double)) == 0);
    CHECK(m.style_enc[0].bn.running_mean == stats_before);

    // Training mode does update normalization statistics.
    auto srefs2 = random_refs(2, 2, 8, 43);
    auto crefs2 = random_refs(2, 2, 8, 44);
    (void)m.forward(srefs2, crefs2, true);
    CHECK(m.style_enc[0].bn.running_mean != stats_before);
}

TEST_CASE("skips are wired into the decode graph") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 13);
    auto srefs = random_refs(1, 2, 8, 51);
    auto crefs = random_refs(1, 2, 8, 52);
    auto s = m.encode_style(srefs, false);
    auto enc = m.encode_content(crefs, false);
    auto f = m.mix(s, enc.latent);

    auto with_skips = m.decode(f, enc.skips, false);
    std::vector<Tensor<double>> zeroed = enc.skips;
    for (auto& t : zeroed) std::fill(t.data.begin(), t.data.end(), 0.0);
    auto without = m.decode(f, zeroed, false);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < with_skips.numel(); ++i)
        max_diff = std::max(max_diff, std::abs(with_skips.data[i] - without.data[i]));
    CHECK(max_diff > 0.0);
}

TEST_CASE("decode validates the skip stack") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 13);
    auto crefs = random_refs(1, 2, 8, 53);
    auto enc = m.encode_content(crefs, false);
    Tensor<double> f({1, 16}, 0.1);

    auto too_few = enc.skips;
    too_few.pop_back();
    CHECK_THROWS_AS((void)m.decode(f, too_few, false), std::invalid_argument);

    auto bad_shape = enc.skips;
    bad_shape[2] = Tensor<double>({1, 4, 2, 2}, 0.0);
    CHECK_THROWS_WITH_AS((void)m.decode(f, bad_shape, false), doctest::Contains("skip 2"),
                         std::invalid_argument);

    Tensor<double> bad_code({1, 15}, 0.0);
    CHECK_THROWS_AS((void)m.decode(bad_code, enc.skips, false), std::invalid_argument);
}

TEST_CASE("disabling skips changes decoder widths but not the output shape") {
    auto with = emd::build_model<double>({8, 2, 2, true}, 17);
    auto without = emd::build_model<double>({8, 2, 2, false}, 17);
    CHECK(with.decoder[0].w.shape[0] == 32);
    CHECK(without.decoder[0].w.shape[0] == 16);
    auto srefs = random_refs(1, 2, 8, 61);
    auto crefs = random_refs(1, 2, 8, 62);
    auto img = without.forward(srefs, crefs, false);
    CHECK(img.shape == std::vector<std::size_t>{1, 1, 8, 8});
}

TEST_CASE("gradient reaches the mixer through decode") {
    auto m = emd::build_model<double>({8, 2, 2, true}, 19);
    auto srefs = random_refs(2, 2, 8, 71);
    auto crefs = random_refs(2, 2, 8, 72);
    emd::Rng rng(73);
    const auto coeffs = random_coeffs(2 * 64, rng);

    auto loss_value = [&]() {
        auto img = m.forward(srefs, crefs, true);
        double acc = 0.0;
        for (std::size_t i = 0; i < img.numel(); ++i) acc += img.data[i] * coeffs[i];
        return acc;
    };

    emd::Tape<double> tape;
    m.attach(tape);
    auto img = m.forward(srefs, crefs, true);
    auto loss = tracked_inner_sum(img, coeffs);
    tape.backward(loss);
    auto gm = tape.grad(m.mixer);
    m.detach_params();

    double norm = 0.0;
    for (double v : gm.data) norm += v * v;
    CHECK(norm > 0.0);

    // Spot-check a few mixer coordinates against finite differences.
    auto report = fd_check(loss_value, m.mixer, gm, 1e-5, m.mixer.numel() / 7);
    CHECK(report.coords_checked >= 7);
    CHECK(report.max_rel_err < 1e-4);
}
