#include <cmath>

#include <gtest/gtest.h>

#include "diffq/quant.hpp"
#include "diffq/rng.hpp"

using namespace diffq;
using namespace diffq::quant;

TEST(Delta, Values)
{
    EXPECT_DOUBLE_EQ(delta(1.0), 1.0);
    EXPECT_NEAR(delta(4.0), 0.0666667, 1e-7);
    EXPECT_DOUBLE_EQ(delta(4.0), 1.0 / 15.0);
    EXPECT_THROW(delta(0.0), std::invalid_argument);
    EXPECT_THROW(delta(-1.0), std::invalid_argument);
}

TEST(Delta, CompositeGradient)
{
    ad::Tape tape;
    auto b = tape.leaf(Tensor::scalar(4.0));
    auto d = delta(tape, b);
    EXPECT_NEAR(tape.value(d).item(), 1.0 / 15.0, 1e-15);
    tape.backward(d);
    const double analytic = tape.grad(b).item();
    EXPECT_NEAR(analytic, -0.0492905, 1e-6);
    EXPECT_NEAR(analytic, -std::log(2.0) * 16.0 / 225.0, 1e-15);
    const double h = 1e-6;
    const double numeric = (delta(4.0 + h) - delta(4.0 - h)) / (2 * h);
    EXPECT_NEAR(analytic, numeric, 1e-8);
}

TEST(MinMaxScale, Examples)
{
    auto [n1, s1] = min_max_scale(Tensor::vector({-1.0, 0.0, 1.0}));
    EXPECT_EQ(n1.values(), (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(s1, (ScaleParams{-1.0, 1.0}));

    auto [n2, s2] = min_max_scale(Tensor::vector({2.5, 2.5, 2.5}));
    EXPECT_EQ(n2.values(), (std::vector<double>{0.0, 0.0, 0.0}));
    EXPECT_EQ(s2, (ScaleParams{2.5, 2.5}));
    EXPECT_EQ(unscale(n2, s2).values(), (std::vector<double>{2.5, 2.5, 2.5}));

    auto [n3, s3] = min_max_scale(Tensor::vector({0.0, 1.0}));
    EXPECT_EQ(n3.values(), (std::vector<double>{0.0, 1.0}));
}

TEST(MinMaxScale, InverseRecoversWeights)
{
    Rng rng(11);
    Tensor w = sample_gaussian(rng, {50});
    auto [n, s] = min_max_scale(w);
    const Tensor back = unscale(n, s);
    for (std::size_t i = 0; i < w.size(); ++i) {
        EXPECT_NEAR(back[i], w[i], 1e-14);
    }
}

TEST(UniformQuantize, Examples)
{
    const auto q = uniform_quantize(Tensor::scalar(0.11), 4);
    EXPECT_EQ(q.indices[0], 2u);
    EXPECT_NEAR(reconstruct(q)[0], 2.0 / 15.0, 1e-15);
    EXPECT_NEAR(reconstruct(q)[0], 0.13333, 1e-5);
    for (int b = 1; b <= 32; ++b) {
        const auto e = uniform_quantize(Tensor::vector({0.0, 1.0}), b);
        EXPECT_EQ(reconstruct(e).values(), (std::vector<double>{0.0, 1.0})) << b;
    }
    EXPECT_EQ(uniform_quantize(Tensor::scalar(0.5), 1).indices[0], 1u);
}

TEST(UniformQuantize, HalfAwayFromZero)
{
    EXPECT_EQ(round_half_away(2.5), 3.0);
    EXPECT_EQ(round_half_away(1.5), 2.0);
    EXPECT_EQ(round_half_away(-2.5), -3.0);
    // 0.5 * 3 = 1.5 exactly
    EXPECT_EQ(uniform_quantize(Tensor::scalar(0.5), 2).indices[0], 2u);
}

TEST(UniformQuantize, Rejections)
{
    EXPECT_THROW(uniform_quantize(Tensor::scalar(1.1), 4), std::domain_error);
    EXPECT_THROW(uniform_quantize(Tensor::scalar(-1e-9), 4), std::domain_error);
    EXPECT_NO_THROW(uniform_quantize(Tensor::scalar(1.0 + 1e-13), 4));
    EXPECT_THROW(uniform_quantize(Tensor::scalar(0.5), 0), std::invalid_argument);
}

TEST(UniformQuantize, IdempotentMonotoneBounded)
{
    Rng rng(5);
    for (int bits = 1; bits <= 16; ++bits) {
        Tensor w({200});
        for (auto& v : w.data()) {
            v = rng.next_unit();
        }
        w[0] = 0.0;
        w[1] = 1.0;
        const auto q = uniform_quantize(w, bits);
        const Tensor r = reconstruct(q);
        EXPECT_EQ(uniform_quantize(r, bits), q) << bits;
        for (std::size_t i = 0; i < w.size(); ++i) {
            EXPECT_LE(std::abs(r[i] - w[i]), delta(bits) / 2.0 + 1e-12);
            EXPECT_LE(q.indices[i], (1u << bits) - 1u);
            for (std::size_t j = 0; j < w.size(); ++j) {
                if (w[i] <= w[j]) {
                    ASSERT_LE(r[i], r[j]);
                }
            }
        }
    }
}

TEST(UniformQuantize, PerGroupBits)
{
    const Tensor w = Tensor::vector({0.11, 0.5, 0.9, 0.3, 0.7});
    const std::vector<int> bits{4, 2};
    const auto q = uniform_quantize(w, bits, 3);
    EXPECT_EQ(q.indices, (std::vector<std::uint32_t>{2, 8, 14, 1, 2}));
    EXPECT_EQ(q.bits_of(4), 2);
    EXPECT_THROW(uniform_quantize(w, std::vector<int>{4}, 3), std::invalid_argument);
}

TEST(SteQat, ForwardAndIdentityBackward)
{
    ad::Tape tape;
    auto w = tape.leaf(Tensor::scalar(0.11));
    auto y = ste_qat_forward(tape, w, 4, ScaleParams{0.0, 1.0});
    EXPECT_NEAR(tape.value(y).item(), 2.0 / 15.0, 1e-15);
    tape.backward(ad::scale(tape, y, 3.7));
    EXPECT_EQ(tape.grad(w).item(), 3.7);
    EXPECT_THROW(ste_qat_forward(tape, w, 0), std::invalid_argument);
}

TEST(SteQat, ThirtyTwoBitsIsNearIdentity)
{
    Rng rng(2);
    ad::Tape tape;
    Tensor v({100});
    for (auto& x : v.data()) {
        x = rng.next_unit();
    }
    auto w = tape.leaf(v);
    auto y = ste_qat_forward(tape, w, 32, ScaleParams{0.0, 1.0});
    for (std::size_t i = 0; i < v.size(); ++i) {
        EXPECT_LE(std::abs(tape.value(y)[i] - v[i]), std::ldexp(1.0, -31));
    }
}

TEST(SteQat, BackwardEqualsUnquantizedBackward)
{
    Rng rng(9);
    const Tensor wv = sample_gaussian(rng, {3, 4});
    const Tensor xv = sample_gaussian(rng, {5, 3});
    auto grad_with = [&](bool quantize) {
        ad::Tape tape;
        auto w = tape.leaf(wv);
        auto read = quantize ? ste_qat_forward(tape, w, 3) : w;
        auto y = ad::matmul(tape, tape.constant(xv), read);
        tape.backward(ad::sum(tape, y));
        return tape.grad(w);
    };
    EXPECT_EQ(grad_with(true), grad_with(false));
}

TEST(SteQat, RecomputesScaleFromWeights)
{
    ad::Tape tape;
    auto w = tape.leaf(Tensor::vector({-1.0, 0.1, 1.0}));
    auto y = ste_qat_forward(tape, w, 2);
    // normalized 0.55 -> round(1.65) = 2 -> 2/3 -> -1 + 2 * 2/3
    EXPECT_NEAR(tape.value(y)[1], 1.0 / 3.0, 1e-15);
    EXPECT_EQ(tape.value(y)[0], -1.0);
    EXPECT_EQ(tape.value(y)[2], 1.0);
}
