#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <numeric>

#include "arrayssl/adam.hpp"
#include "arrayssl/gradcheck.hpp"
#include "arrayssl/nn.hpp"
#include "test_util.hpp"

using namespace arrayssl;

// ---------------------------------------------------------------------------
// Plumbing: RNG, parallel_for
// ---------------------------------------------------------------------------

TEST(Rng, FixedSeedReproduces) {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) {
        EXPECT_EQ(a.uniform(), b.uniform());
        EXPECT_EQ(a.normal(), b.normal());
        EXPECT_EQ(a.uniform_int(0, 41), b.uniform_int(0, 41));
    }
}

TEST(Rng, UniformIntCoversInclusiveRange) {
    Rng rng(7);
    bool saw_lo = false, saw_hi = false;
    for (int i = 0; i < 1000; ++i) {
        int64_t v = rng.uniform_int(0, 3);
        ASSERT_GE(v, 0);
        ASSERT_LE(v, 3);
        saw_lo |= (v == 0);
        saw_hi |= (v == 3);
    }
    EXPECT_TRUE(saw_lo);
    EXPECT_TRUE(saw_hi);
    EXPECT_THROW(rng.uniform_int(5, 4), ValueError);
}

TEST(Rng, MixSeedSeparatesStreams) {
    Rng a(mix_seed(42, 0)), b(mix_seed(42, 1));
    EXPECT_NE(a.uniform(), b.uniform());
}

TEST(ParallelFor, CoversRangeExactlyOnce) {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(1000, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) hits[static_cast<size_t>(i)]++;
    });
    for (auto& h : hits) EXPECT_EQ(h.load(), 1);
}

// ---------------------------------------------------------------------------
// Tensor basics and elementwise ops
// ---------------------------------------------------------------------------

TEST(Tensor, ConstructionValidatesShape) {
    EXPECT_THROW(Tensor::from_data({2, 3}, {1.0f, 2.0f}), ShapeError);
    Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(t.numel(), 4);
    EXPECT_THROW(t.item(), ShapeError);
    EXPECT_FLOAT_EQ(Tensor::scalar(2.5f).item(), 2.5f);
}

TEST(Tensor, ElementwiseForward) {
    Tensor a = Tensor::from_data({3}, {1, -2, 3});
    Tensor b = Tensor::from_data({3}, {4, 5, -6});
    auto add_v = add(a, b).values();
    auto sub_v = sub(a, b).values();
    auto mul_v = mul(a, b).values();
    EXPECT_EQ(add_v, (std::vector<float>{5, 3, -3}));
    EXPECT_EQ(sub_v, (std::vector<float>{-3, -7, 9}));
    EXPECT_EQ(mul_v, (std::vector<float>{4, -10, -18}));
    EXPECT_THROW(add(a, Tensor::zeros({4})), ShapeError);
}

TEST(Tensor, ActivationClosedForms) {
    Tensor x = Tensor::from_data({3}, {-1.0f, 0.0f, 2.0f});
    auto r = relu(x).values();
    EXPECT_EQ(r, (std::vector<float>{0, 0, 2}));
    EXPECT_NEAR(sigmoid(Tensor::scalar(0.0f)).item(), 0.5f, 1e-7);
    EXPECT_NEAR(softplus(Tensor::scalar(0.0f)).item(), std::log(2.0f), 1e-6);
    // linear regime guard: softplus(30) == 30 to float precision
    EXPECT_NEAR(softplus(Tensor::scalar(30.0f)).item(), 30.0f, 1e-5);
}

TEST(Tensor, MseClosedForms) {
    Tensor x = Tensor::from_data({4}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(mse(x, x).item_hi(), 0.0);
    Tensor a = Tensor::from_data({2}, {0, 0});
    Tensor b = Tensor::from_data({2}, {1, 3});
    EXPECT_DOUBLE_EQ(mse(a, b).item_hi(), 5.0);
}

TEST(Tensor, SumMeanUseHighPrecisionAccumulation) {
    // 1 + 1e-8 repeated: f32 running sum would lose the small terms entirely.
    std::vector<float> v(1 << 16, 1e-4f);
    Tensor t = Tensor::from_data({static_cast<int64_t>(v.size())}, v);
    EXPECT_NEAR(sum(t).item_hi(), 65536 * 1e-4, 1e-6);
    EXPECT_NEAR(mean(t).item_hi(), 1e-4, 1e-10);
}

TEST(Backward, HandComputedChain) {
    // f = sum(a*b) -> df/da = b, df/db = a
    Tensor a = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad();
    Tensor b = Tensor::from_data({3}, {-4, 5, 0.5f}).set_requires_grad();
    sum(mul(a, b)).backward();
    EXPECT_EQ(a.grad(), b.values());
    EXPECT_EQ(b.grad(), a.values());
}

TEST(Backward, FanOutAccumulates) {
    // f = sum(a*a + a) -> df/da = 2a + 1, with `a` feeding two consumers
    Tensor a = Tensor::from_data({3}, {1, -2, 0.5f}).set_requires_grad();
    sum(add(mul(a, a), a)).backward();
    std::vector<float> want{3, -3, 2};
    EXPECT_EQ(a.grad(), want);
}

TEST(Backward, RepeatedRunsAreIdentical) {
    Rng rng(99);
    Tensor a = Tensor::randn({4, 5}, rng).set_requires_grad();
    Tensor b = Tensor::randn({4, 5}, rng).set_requires_grad();
    auto run = [&] {
        mse(sigmoid(mul(a, b)), b).backward();
        return a.grad();
    };
    auto g1 = run();
    auto g2 = run();
    EXPECT_TRUE(testutil::bitwise_equal(g1, g2));
}

TEST(Backward, NoGradGuardSuppressesTape) {
    Tensor a = Tensor::from_data({2}, {1, 2}).set_requires_grad();
    NoGradGuard guard;
    Tensor loss = mean(mul(a, a));
    loss.backward();  // root-only graph; nothing propagates to `a`
    EXPECT_FALSE(a.has_grad());
}

TEST(ShapeOps, ReshapeSqueezeConcat) {
    Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = reshape(a, {3, 2});
    EXPECT_EQ(r.shape(), (Shape{3, 2}));
    EXPECT_EQ(r.values(), a.values());
    EXPECT_THROW(reshape(a, {4, 2}), ShapeError);

    Tensor s = squeeze(reshape(a, {2, 1, 3}), 1);
    EXPECT_EQ(s.shape(), (Shape{2, 3}));
    EXPECT_THROW(squeeze(a, 0), ShapeError);  // axis size 2, not 1

    Tensor b = Tensor::from_data({2, 2}, {7, 8, 9, 10});
    Tensor c = concat(a, b, 1);
    EXPECT_EQ(c.shape(), (Shape{2, 5}));
    EXPECT_EQ(c.values(), (std::vector<float>{1, 2, 3, 7, 8, 4, 5, 6, 9, 10}));
    EXPECT_THROW(concat(a, b, 0), ShapeError);
}

// ---------------------------------------------------------------------------
// Finite-difference oracle across every differentiable op, many seeds
// ---------------------------------------------------------------------------

TEST(GradCheck, ClosedFormSelfTest) {
    // f(x) = sum(x^2) at [1,2] -> grad [2,4]
    Tensor x = Tensor::from_data({2}, {1, 2});
    std::vector<Tensor> inputs{x};
    auto f = [](std::vector<Tensor>& in) { return sum(mul(in[0], in[0])); };
    auto report = grad_check(f, inputs, 1e-2);
    EXPECT_TRUE(report.passed) << "max rel " << report.max_rel_error;
    sum(mul(x, x)).backward();
    EXPECT_NEAR(x.grad()[0], 2.0f, 1e-5);
    EXPECT_NEAR(x.grad()[1], 4.0f, 1e-5);
}

TEST(GradCheck, ElementwiseOpsManySeeds) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(1000, seed));
        int64_t n = rng.uniform_int(2, 9);
        Tensor a = testutil::random_away_from_kinks({n, 3}, rng);
        Tensor b = testutil::random_away_from_kinks({n, 3}, rng);
        std::vector<Tensor> inputs{a, b};

        auto f_mix = [](std::vector<Tensor>& in) {
            Tensor t = add(mul(in[0], in[1]), sub(in[0], in[1]));
            return mean(mul(t, t));
        };
        EXPECT_TRUE(grad_check(f_mix, inputs, 1e-2).passed) << "seed " << seed;

        auto f_act = [](std::vector<Tensor>& in) {
            Tensor t = add(sigmoid(in[0]), softplus(in[1]));
            return mse(relu(t), in[1]);
        };
        EXPECT_TRUE(grad_check(f_act, inputs, 1e-2).passed) << "seed " << seed;

        auto f_shape = [](std::vector<Tensor>& in) {
            Tensor c = concat(in[0], in[1], 1);
            return mean(mul(c, c));
        };
        EXPECT_TRUE(grad_check(f_shape, inputs, 1e-2).passed) << "seed " << seed;

        auto f_log = [](std::vector<Tensor>& in) {
            // keep arguments strictly positive
            return mean(log(add_scalar(sigmoid(in[0]), 0.5f)));
        };
        EXPECT_TRUE(grad_check(f_log, inputs, 1e-2).passed) << "seed " << seed;
    }
}

// ---------------------------------------------------------------------------
// conv2d: brute-force oracle + gradients + adjoint identity
// ---------------------------------------------------------------------------

namespace {

// Deliberately naive direct convolution, independent of the library kernels.
std::vector<float> conv2d_reference(const std::vector<float>& x, const std::vector<float>& w,
                                    const std::vector<float>& b, int64_t N, int64_t Ci,
                                    int64_t H, int64_t W, int64_t Co, int64_t kh, int64_t kw,
                                    int64_t sh, int64_t sw, int64_t ph, int64_t pw) {
    const int64_t Ho = (H + 2 * ph - kh) / sh + 1;
    const int64_t Wo = (W + 2 * pw - kw) / sw + 1;
    std::vector<float> y(static_cast<size_t>(N * Co * Ho * Wo));
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    double acc = b[static_cast<size_t>(co)];
                    for (int64_t ci = 0; ci < Ci; ++ci)
                        for (int64_t i = 0; i < kh; ++i)
                            for (int64_t j = 0; j < kw; ++j) {
                                int64_t ih = oh * sh - ph + i;
                                int64_t iw = ow * sw - pw + j;
                                if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                                acc += static_cast<double>(
                                           x[static_cast<size_t>(((n * Ci + ci) * H + ih) * W +
                                                                 iw)]) *
                                       w[static_cast<size_t>(((co * Ci + ci) * kh + i) * kw +
                                                             j)];
                            }
                    y[static_cast<size_t>(((n * Co + co) * Ho + oh) * Wo + ow)] =
                        static_cast<float>(acc);
                }
    return y;
}

}  // namespace

TEST(Conv2d, MatchesBruteForceReference) {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(mix_seed(2000, seed));
        const int64_t N = rng.uniform_int(1, 3), Ci = rng.uniform_int(1, 4);
        const int64_t H = rng.uniform_int(3, 8), W = rng.uniform_int(3, 8);
        const int64_t Co = rng.uniform_int(1, 5);
        const int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
        const int64_t sh = rng.uniform_int(1, 2), sw = rng.uniform_int(1, 2);
        const int64_t ph = rng.uniform_int(0, 2), pw = rng.uniform_int(0, 2);
        if (H + 2 * ph < kh || W + 2 * pw < kw) continue;
        Tensor x = Tensor::randn({N, Ci, H, W}, rng);
        Tensor w = Tensor::randn({Co, Ci, kh, kw}, rng);
        Tensor b = Tensor::randn({Co}, rng);
        Tensor y = conv2d(x, w, b, {sh, sw}, {ph, pw});
        auto ref = conv2d_reference(x.values(), w.values(), b.values(), N, Ci, H, W, Co, kh,
                                    kw, sh, sw, ph, pw);
        ASSERT_EQ(y.values().size(), ref.size()) << "seed " << seed;
        EXPECT_LT(testutil::max_abs_diff(y.values(), ref), 2e-4) << "seed " << seed;
    }
}

TEST(Conv2d, ShapeExamples) {
    Rng rng(1);
    Tensor x = Tensor::randn({2, 8, 32, 2048}, rng);
    Tensor w = Tensor::randn({32, 8, 5, 5}, rng);
    Tensor b = Tensor::zeros({32});
    Tensor y = conv2d(x, w, b, {1, 1}, {2, 2});
    EXPECT_EQ(y.shape(), (Shape{2, 32, 32, 2048}));

    Tensor w2 = Tensor::randn({32, 32, 3, 3}, rng);
    Tensor y2 = conv2d(y, w2, Tensor::zeros({32}), {2, 1}, {1, 1});
    EXPECT_EQ(y2.shape(), (Shape{2, 32, 16, 2048}));
}

TEST(Conv2d, ValidatesGeometry) {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    Tensor w = Tensor::zeros({3, 2, 3, 3});
    Tensor b = Tensor::zeros({3});
    EXPECT_THROW(conv2d(x, Tensor::zeros({3, 5, 3, 3}), b, {1, 1}, {0, 0}), ShapeError);
    EXPECT_THROW(conv2d(x, w, Tensor::zeros({4}), {1, 1}, {0, 0}), ShapeError);
    EXPECT_THROW(conv2d(x, w, b, {0, 1}, {0, 0}), ValueError);
    EXPECT_THROW(conv2d(x, w, b, {1, 1}, {-1, 0}), ValueError);
    // padded input smaller than the kernel
    EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 2, 2}), w, b, {1, 1}, {0, 0}), ShapeError);
}

TEST(Conv2d, GradientsManySeeds) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(mix_seed(3000, seed));
        const int64_t sh = rng.uniform_int(1, 2), sw = rng.uniform_int(1, 2);
        const int64_t ph = rng.uniform_int(0, 1), pw = rng.uniform_int(0, 1);
        Tensor x = Tensor::randn({2, 2, 5, 6}, rng);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
        Tensor b = Tensor::randn({3}, rng);
        std::vector<Tensor> inputs{x, w, b};
        auto f = [&](std::vector<Tensor>& in) {
            return mean(mul(conv2d(in[0], in[1], in[2], {sh, sw}, {ph, pw}),
                            conv2d(in[0], in[1], in[2], {sh, sw}, {ph, pw})));
        };
        auto report = grad_check(f, inputs, 1e-2);
        EXPECT_TRUE(report.passed) << "seed " << seed << " max rel " << report.max_rel_error
                                   << " (input " << report.worst_input << ")";
    }
}

TEST(ConvTranspose2d, InvertsConvShape) {
    Rng rng(5);
    Tensor x = Tensor::randn({2, 4, 8, 10}, rng);
    Tensor w = Tensor::randn({4, 3, 3, 3}, rng);  // [Ci,Co,kh,kw]
    Tensor y = conv_transpose2d(x, w, Tensor::zeros({3}), {2, 1}, {1, 1}, {1, 0});
    // (8-1)*2 - 2 + 3 + 1 = 16, (10-1)*1 - 2 + 3 + 0 = 10
    EXPECT_EQ(y.shape(), (Shape{2, 3, 16, 10}));
    EXPECT_THROW(conv_transpose2d(x, w, Tensor::zeros({3}), {2, 1}, {1, 1}, {2, 0}),
                 ValueError);
}

TEST(ConvTranspose2d, AdjointIdentity) {
    // <conv(x), y> == <x, conv_transpose(y)> when both share weights/geometry
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(mix_seed(4000, seed));
        const int64_t N = 2, Ci = 3, Co = 4, H = 8, W = 9;
        const int64_t kh = 3, kw = 3, sh = 2, sw = 1, ph = 1, pw = 1;
        Tensor x = Tensor::randn({N, Ci, H, W}, rng);
        Tensor w = Tensor::randn({Co, Ci, kh, kw}, rng);
        Tensor cx = conv2d(x, w, Tensor::zeros({Co}), {sh, sw}, {ph, pw});
        Tensor y = Tensor::randn(cx.shape(), rng);

        // the conv weight [Co,Ci,kh,kw] is already in transpose-conv layout
        // (input channels Co, output channels Ci), so it is shared verbatim
        const int64_t oph = H - ((cx.dim(2) - 1) * sh - 2 * ph + kh);
        const int64_t opw = W - ((cx.dim(3) - 1) * sw - 2 * pw + kw);
        Tensor ty = conv_transpose2d(y, w, Tensor::zeros({Ci}), {sh, sw}, {ph, pw},
                                     {oph, opw});
        ASSERT_EQ(ty.shape(), x.shape());

        double lhs = 0.0, rhs = 0.0;
        for (int64_t i = 0; i < cx.numel(); ++i)
            lhs += static_cast<double>(cx.data()[i]) * y.data()[i];
        for (int64_t i = 0; i < x.numel(); ++i)
            rhs += static_cast<double>(x.data()[i]) * ty.data()[i];
        EXPECT_NEAR(lhs, rhs, 1e-4 * std::max(1.0, std::abs(lhs))) << "seed " << seed;
    }
}

TEST(ConvTranspose2d, GradientsManySeeds) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_seed(5000, seed));
        Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
        Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
        Tensor b = Tensor::randn({2}, rng);
        std::vector<Tensor> inputs{x, w, b};
        auto f = [](std::vector<Tensor>& in) {
            Tensor y = conv_transpose2d(in[0], in[1], in[2], {2, 1}, {1, 1}, {1, 0});
            return mean(mul(y, y));
        };
        auto report = grad_check(f, inputs, 1e-2);
        EXPECT_TRUE(report.passed) << "seed " << seed << " max rel " << report.max_rel_error;
    }
}

TEST(Conv1d, MatchesConv2dOnSingletonHeight) {
    Rng rng(6);
    Tensor x = Tensor::randn({2, 3, 16}, rng);
    Tensor w = Tensor::randn({4, 3, 5}, rng);
    Tensor b = Tensor::randn({4}, rng);
    Tensor y = conv1d(x, w, b, 1, 2);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 16}));
    Tensor y2 = conv2d(reshape(x, {2, 3, 1, 16}), reshape(w, {4, 3, 1, 5}), b, {1, 1}, {0, 2});
    EXPECT_TRUE(testutil::bitwise_equal(y.values(), y2.values()));
    EXPECT_THROW(conv1d(x, Tensor::zeros({4, 5, 5}), b, 1, 2), ShapeError);
}

TEST(Conv1d, Gradients) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_seed(6000, seed));
        Tensor x = Tensor::randn({2, 3, 12}, rng);
        Tensor w = Tensor::randn({4, 3, 5}, rng);
        Tensor b = Tensor::randn({4}, rng);
        std::vector<Tensor> inputs{x, w, b};
        auto f = [](std::vector<Tensor>& in) {
            Tensor y = conv1d(in[0], in[1], in[2], 1, 2);
            return mean(mul(y, y));
        };
        EXPECT_TRUE(grad_check(f, inputs, 1e-2).passed) << "seed " << seed;
    }
}

// ---------------------------------------------------------------------------
// batch_norm
// ---------------------------------------------------------------------------

TEST(BatchNorm, TrainNormalizesAndUpdatesRunningStats) {
    Rng rng(10);
    const int64_t N = 4, C = 3, H = 2, W = 5;
    Tensor x = Tensor::randn({N, C, H, W}, rng);
    for (float& v : x.values()) v = v * 3.0f + 1.5f;
    Tensor gamma = Tensor::full({C}, 1.0f);
    Tensor beta = Tensor::zeros({C});
    std::vector<float> rm(C, 0.0f), rv(C, 1.0f);
    Tensor y = batch_norm(x, gamma, beta, rm, rv, /*train=*/true);

    // per-channel output stats: mean 0, biased var 1
    const int64_t S = H * W;
    for (int64_t c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < S; ++i) {
                double v = y.data()[(n * C + c) * S + i];
                s += v;
                s2 += v * v;
            }
        double m = s / (N * S), var = s2 / (N * S) - m * m;
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-3);
    }

    // running <- 0.9*old + 0.1*batch, against stats computed right here
    for (int64_t c = 0; c < C; ++c) {
        double s = 0, s2 = 0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < S; ++i) {
                double v = x.data()[(n * C + c) * S + i];
                s += v;
                s2 += v * v;
            }
        double m = s / (N * S), var = s2 / (N * S) - m * m;
        EXPECT_NEAR(rm[c], 0.1 * m, 1e-5);
        EXPECT_NEAR(rv[c], 0.9 * 1.0 + 0.1 * var, 1e-4);
        EXPECT_GE(rv[c], 0.0f);
    }
}

TEST(BatchNorm, EvalUsesOnlyRunningStats) {
    Tensor gamma = Tensor::from_data({2}, {2.0f, 1.0f});
    Tensor beta = Tensor::from_data({2}, {0.5f, -1.0f});
    std::vector<float> rm{1.0f, -2.0f}, rv{4.0f, 0.25f};
    Tensor x = Tensor::from_data({1, 2, 1, 2}, {3.0f, 5.0f, -2.0f, -1.0f});
    Tensor y = batch_norm(x, gamma, beta, rm, rv, /*train=*/false);
    // channel 0: 2*(x-1)/sqrt(4+1e-5)+0.5 ; channel 1: (x+2)/sqrt(0.25+1e-5)-1
    EXPECT_NEAR(y.data()[0], 2.0 * (3.0 - 1.0) / std::sqrt(4.00001) + 0.5, 1e-5);
    EXPECT_NEAR(y.data()[1], 2.0 * (5.0 - 1.0) / std::sqrt(4.00001) + 0.5, 1e-5);
    EXPECT_NEAR(y.data()[2], (-2.0 + 2.0) / std::sqrt(0.25001) - 1.0, 1e-4);
    EXPECT_NEAR(y.data()[3], (-1.0 + 2.0) / std::sqrt(0.25001) - 1.0, 1e-4);
    // stats untouched in eval mode
    EXPECT_FLOAT_EQ(rm[0], 1.0f);
    EXPECT_FLOAT_EQ(rv[1], 0.25f);
    // changing batch content does not change per-element mapping
    Tensor x2 = Tensor::from_data({1, 2, 1, 2}, {3.0f, 100.0f, -2.0f, 50.0f});
    Tensor y2 = batch_norm(x2, gamma, beta, rm, rv, /*train=*/false);
    EXPECT_FLOAT_EQ(y2.data()[0], y.data()[0]);
    EXPECT_FLOAT_EQ(y2.data()[2], y.data()[2]);
}

TEST(BatchNorm, DegenerateBatchRejectedInTrainMode) {
    Tensor x = Tensor::zeros({1, 3, 1, 1});
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    std::vector<float> rm(3, 0.0f), rv(3, 1.0f);
    EXPECT_THROW(batch_norm(x, gamma, beta, rm, rv, true), ValueError);
    // ...but fine in eval mode
    EXPECT_NO_THROW(batch_norm(x, gamma, beta, rm, rv, false));
}

TEST(BatchNorm, GradientsBothModes) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(mix_seed(7000, seed));
        Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
        Tensor gamma = testutil::random_away_from_kinks({3}, rng, 0.5f, 1.5f);
        Tensor beta = Tensor::randn({3}, rng);
        std::vector<Tensor> inputs{x, gamma, beta};
        for (bool train : {true, false}) {
            auto f = [train](std::vector<Tensor>& in) {
                std::vector<float> rm{0.1f, -0.2f, 0.3f}, rv{1.0f, 2.0f, 0.5f};
                Tensor y = batch_norm(in[0], in[1], in[2], rm, rv, train);
                return mean(mul(y, y));
            };
            auto report = grad_check(f, inputs, 1e-2);
            EXPECT_TRUE(report.passed)
                << "seed " << seed << " train " << train << " rel " << report.max_rel_error;
        }
    }
}

// ---------------------------------------------------------------------------
// Pooling / upsampling / SE pieces
// ---------------------------------------------------------------------------

TEST(AvgPool, HandOracleAndGradients) {
    Tensor x = Tensor::from_data({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y = avg_pool2d(x, {2, 1}, {2, 1});
    EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 4}));
    EXPECT_EQ(y.values(), (std::vector<float>{3, 4, 5, 6}));
    EXPECT_THROW(avg_pool2d(x, {3, 1}, {1, 1}), ShapeError);

    Rng rng(11);
    Tensor xr = Tensor::randn({2, 3, 4, 6}, rng);
    std::vector<Tensor> inputs{xr};
    auto f = [](std::vector<Tensor>& in) {
        Tensor y = avg_pool2d(in[0], {2, 2}, {2, 2});
        return mean(mul(y, y));
    };
    EXPECT_TRUE(grad_check(f, inputs, 1e-2).passed);
}

TEST(Upsample, NearestReplicationAndGradients) {
    Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    Tensor y = nearest_upsample2d(x, {2, 1});
    EXPECT_EQ(y.shape(), (Shape{1, 1, 4, 2}));
    EXPECT_EQ(y.values(), (std::vector<float>{1, 2, 1, 2, 3, 4, 3, 4}));

    // pooling an upsampled constant returns the constant
    Tensor c = Tensor::full({1, 2, 3, 3}, 2.5f);
    Tensor rt = avg_pool2d(nearest_upsample2d(c, {2, 2}), {2, 2}, {2, 2});
    for (float v : rt.values()) EXPECT_FLOAT_EQ(v, 2.5f);

    Rng rng(12);
    Tensor xr = Tensor::randn({2, 2, 3, 4}, rng);
    std::vector<Tensor> inputs{xr};
    auto f = [](std::vector<Tensor>& in) {
        Tensor y = nearest_upsample2d(in[0], {2, 3});
        return mse(y, Tensor::full(y.shape(), 0.25f));
    };
    EXPECT_TRUE(grad_check(f, inputs, 1e-2).passed);
}

TEST(GlobalAvgPool, ForwardAndGradients) {
    Tensor x = Tensor::from_data({1, 2, 1, 3}, {1, 2, 3, 10, 20, 30});
    Tensor y = global_avg_pool(x);
    EXPECT_EQ(y.shape(), (Shape{1, 2}));
    EXPECT_FLOAT_EQ(y.data()[0], 2.0f);
    EXPECT_FLOAT_EQ(y.data()[1], 20.0f);

    Rng rng(13);
    Tensor xr = Tensor::randn({2, 3, 2, 5}, rng);
    std::vector<Tensor> inputs{xr};
    auto f = [](std::vector<Tensor>& in) {
        Tensor y = global_avg_pool(in[0]);
        return mean(mul(y, y));
    };
    EXPECT_TRUE(grad_check(f, inputs, 1e-2).passed);
}

TEST(SqueezeExcite, HiddenWidthClamp) {
    EXPECT_EQ(se_hidden_width(32, 8), 4);
    EXPECT_EQ(se_hidden_width(16, 8), 2);
    EXPECT_EQ(se_hidden_width(8, 8), 1);
    EXPECT_EQ(se_hidden_width(4, 8), 1);
    EXPECT_EQ(se_hidden_width(1, 8), 1);
}

TEST(SqueezeExcite, GateShrinksMagnitudes) {
    // sigmoid gate is in (0,1), so |out| < |x| wherever x != 0
    Rng rng(14);
    const int64_t C = 8, hidden = se_hidden_width(C, 8);
    Tensor x = Tensor::randn({2, C, 3, 4}, rng);
    Tensor w1 = Tensor::randn({hidden, C}, rng);
    Tensor b1 = Tensor::zeros({hidden});
    Tensor w2 = Tensor::randn({C, hidden}, rng);
    Tensor b2 = Tensor::zeros({C});
    Tensor y = squeeze_excite(x, w1, b1, w2, b2);
    ASSERT_EQ(y.shape(), x.shape());
    for (int64_t i = 0; i < x.numel(); ++i)
        if (x.data()[i] != 0.0f) EXPECT_LT(std::abs(y.data()[i]), std::abs(x.data()[i]));
}

TEST(SqueezeExcite, Gradients) {
    for (uint64_t seed = 0; seed < 8; ++seed) {
        Rng rng(mix_seed(8000, seed));
        const int64_t C = 4, hidden = se_hidden_width(C, 8);
        Tensor x = Tensor::randn({2, C, 2, 3}, rng);
        Tensor w1 = Tensor::randn({hidden, C}, rng);
        Tensor b1 = Tensor::randn({hidden}, rng);
        Tensor w2 = Tensor::randn({C, hidden}, rng);
        Tensor b2 = Tensor::randn({C}, rng);
        std::vector<Tensor> inputs{x, w1, b1, w2, b2};
        auto f = [](std::vector<Tensor>& in) {
            Tensor y = squeeze_excite(in[0], in[1], in[2], in[3], in[4]);
            return mean(mul(y, y));
        };
        auto report = grad_check(f, inputs, 1e-2);
        EXPECT_TRUE(report.passed) << "seed " << seed << " rel " << report.max_rel_error;
    }
}

TEST(Linear, ForwardOracleAndGradients) {
    Tensor x = Tensor::from_data({2, 3}, {1, 0, -1, 2, 1, 0});
    Tensor w = Tensor::from_data({2, 3}, {1, 2, 3, -1, 0, 1});
    Tensor b = Tensor::from_data({2}, {0.5f, -0.5f});
    Tensor y = linear(x, w, b);
    EXPECT_EQ(y.shape(), (Shape{2, 2}));
    EXPECT_FLOAT_EQ(y.data()[0], 1 * 1 + 0 * 2 + (-1) * 3 + 0.5f);
    EXPECT_FLOAT_EQ(y.data()[1], -1 * 1 + 0 * 0 + 1 * (-1) - 0.5f);
    EXPECT_FLOAT_EQ(y.data()[2], 2 * 1 + 1 * 2 + 0 * 3 + 0.5f);
    EXPECT_FLOAT_EQ(y.data()[3], -1 * 2 + 0 * 1 + 1 * 0 - 0.5f);

    Rng rng(15);
    Tensor xr = Tensor::randn({3, 4}, rng);
    Tensor wr = Tensor::randn({2, 4}, rng);
    Tensor br = Tensor::randn({2}, rng);
    std::vector<Tensor> inputs{xr, wr, br};
    auto f = [](std::vector<Tensor>& in) {
        return mean(mul(linear(in[0], in[1], in[2]), linear(in[0], in[1], in[2])));
    };
    EXPECT_TRUE(grad_check(f, inputs, 1e-2).passed);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLrSign) {
    Tensor p = Tensor::scalar(0.0f).set_requires_grad();
    p.node()->grad.assign(1, 1.0f);
    std::vector<Tensor> params{p};
    AdamState state;
    state.lr = 0.001;
    adam_step(params, state);
    EXPECT_NEAR(p.item(), -0.001f, 1e-9);
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
    Tensor p = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad();
    p.node()->grad.assign(3, 0.0f);
    std::vector<Tensor> params{p};
    AdamState state;
    adam_step(params, state);
    EXPECT_EQ(p.values(), (std::vector<float>{1, 2, 3}));
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, IdenticalParamsStayIdentical) {
    Rng rng(16);
    Tensor a = Tensor::randn({8}, rng).set_requires_grad();
    Tensor b = Tensor::from_data({8}, a.values()).set_requires_grad();
    std::vector<Tensor> pa{a}, pb{b};
    AdamState sa, sb;
    sa.lr = sb.lr = 0.01;
    Rng grng(17);
    for (int step = 0; step < 50; ++step) {
        Tensor g = Tensor::randn({8}, grng);
        a.node()->grad = g.values();
        b.node()->grad = g.values();
        adam_step(pa, sa);
        adam_step(pb, sb);
        ASSERT_TRUE(testutil::bitwise_equal(a.values(), b.values())) << "step " << step;
    }
}

TEST(Adam, NonFiniteGradientRejectsWholeUpdate) {
    Tensor p = Tensor::from_data({2}, {1, 2}).set_requires_grad();
    Tensor q = Tensor::from_data({2}, {3, 4}).set_requires_grad();
    std::vector<Tensor> params{p, q};
    AdamState state;
    p.node()->grad.assign(2, 0.5f);
    q.node()->grad.assign(2, 0.5f);
    adam_step(params, state);
    auto p_after = p.values();
    auto m_after = state.m;

    q.node()->grad[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(adam_step(params, state), NumericError);
    // nothing moved: params, moments, and step count are all as before
    EXPECT_EQ(p.values(), p_after);
    EXPECT_EQ(state.m, m_after);
    EXPECT_EQ(state.step_count, 1);

    q.node()->grad[1] = std::numeric_limits<float>::infinity();
    EXPECT_THROW(adam_step(params, state), NumericError);
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, ConvergesOnQuadratic) {
    // minimize sum((p - t)^2); Adam should get close within a few hundred steps
    Tensor t = Tensor::from_data({4}, {1.0f, -2.0f, 0.5f, 3.0f});
    Tensor p = Tensor::zeros({4}).set_requires_grad();
    std::vector<Tensor> params{p};
    AdamState state;
    state.lr = 0.05;
    for (int step = 0; step < 500; ++step) {
        Tensor loss = mse(p, t);
        loss.backward();
        adam_step(params, state);
    }
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.values()[i], t.values()[i], 1e-2);
}
