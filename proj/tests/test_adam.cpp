#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "emd/adam.hpp"
#include "emd/errors.hpp"
#include "emd/rng.hpp"
#include "support.hpp"

using emd::AdamState;
using emd::Tensor;

namespace {

// Scalar reference implementation of Adam with bias correction, written
// independently of the library version.
struct ScalarAdam {
    double m = 0.0, v = 0.0;
    std::uint64_t t = 0;
    double lr, b1, b2, eps;

    ScalarAdam(double lr_, double b1_ = 0.9, double b2_ = 0.999, double eps_ = 1e-8)
        : lr(lr_), b1(b1_), b2(b2_), eps(eps_) {}

    double step(double x, double g) {
        ++t;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        const double mhat = m / (1.0 - std::pow(b1, double(t)));
        const double vhat = v / (1.0 - std::pow(b2, double(t)));
        return x - lr * mhat / (std::sqrt(vhat) + eps);
    }
};

} // namespace

TEST_CASE("zero gradient leaves parameters unchanged but advances the step") {
    Tensor<double> p({3});
    p.data = {1.0, -2.0, 0.5};
    const auto before = p.data;
    AdamState<double> st;
    emd::adam_step<double>({&p}, {Tensor<double>({3}, 0.0)}, st, 0.01);
    CHECK(p.data == before);
    CHECK(st.step == 1);
    emd::adam_step<double>({&p}, {Tensor<double>({3}, 0.0)}, st, 0.01);
    CHECK(p.data == before);
    CHECK(st.step == 2);
}

TEST_CASE("first step moves by about lr against the gradient sign") {
    Tensor<double> p({2});
    p.data = {1.0, 1.0};
    Tensor<double> g({2});
    g.data = {3.0, -0.25};
    AdamState<double> st;
    emd::adam_step<double>({&p}, {g}, st, 0.002);
    // Bias-corrected first step: mhat = g, vhat = g^2, so the update is
    // lr * g / (|g| + eps), essentially lr * sign(g).
    CHECK(p.data[0] == doctest::Approx(1.0 - 0.002).epsilon(1e-6));
    CHECK(p.data[1] == doctest::Approx(1.0 + 0.002).epsilon(1e-6));
}

TEST_CASE("trajectory matches the scalar oracle step for step") {
    Tensor<double> p({1}, 1.0);
    AdamState<double> st;
    ScalarAdam oracle(0.1);
    double x = 1.0;
    for (int i = 0; i < 25; ++i) {
        // Gradient of x^2 is 2x.
        Tensor<double> g({1}, 2.0 * p.data[0]);
        emd::adam_step<double>({&p}, {g}, st, 0.1);
        x = oracle.step(x, 2.0 * x);
        REQUIRE(p.data[0] == doctest::Approx(x).epsilon(1e-14));
    }
}

TEST_CASE("100 steps on a quadratic from x=1 converge toward zero") {
    Tensor<double> p({4}, 1.0);
    AdamState<double> st;
    for (int i = 0; i < 100; ++i) {
        Tensor<double> g({4});
        for (std::size_t j = 0; j < 4; ++j) g.data[j] = 2.0 * p.data[j];
        emd::adam_step<double>({&p}, {g}, st, 0.1);
    }
    for (double v : p.data) CHECK(std::abs(v) < 0.1);
    CHECK(st.step == 100);
}

TEST_CASE("multiple parameter groups keep independent moments") {
    Tensor<double> a({2}, 1.0), b({3}, -1.0);
    AdamState<double> st;
    Tensor<double> ga({2}, 1.0), gb({3}, 0.0);
    emd::adam_step<double>({&a, &b}, {ga, gb}, st, 0.05);
    CHECK(a.data[0] < 1.0);
    for (double v : b.data) CHECK(v == -1.0);
    CHECK(st.m.size() == 2);
    CHECK(st.v[0].size() == 2);
    CHECK(st.v[1].size() == 3);
}

TEST_CASE("mismatches and non-finite gradients are rejected") {
    Tensor<double> p({2}, 0.0);
    AdamState<double> st;
    CHECK_THROWS_AS(emd::adam_step<double>({&p}, {}, st, 0.1), std::invalid_argument);
    Tensor<double> wrong({3}, 0.0);
    CHECK_THROWS_AS(emd::adam_step<double>({&p}, {wrong}, st, 0.1), std::invalid_argument);

    Tensor<double> bad({2}, 0.0);
    bad.data[1] = std::nan("");
    CHECK_THROWS_AS(emd::adam_step<double>({&p}, {bad}, st, 0.1), emd::NumericError);

    // Growing the parameter list after the state exists is a bug.
    Tensor<double> ok({2}, 0.0);
    emd::adam_step<double>({&p}, {ok}, st, 0.1);
    Tensor<double> q({2}, 0.0);
    CHECK_THROWS_AS(emd::adam_step<double>({&p, &q}, {ok, ok}, st, 0.1),
                    std::invalid_argument);
}
