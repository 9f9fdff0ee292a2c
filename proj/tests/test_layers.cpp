#include "test_util.hpp"

#include "viewret/adam.hpp"
#include "viewret/grad_check.hpp"
#include "viewret/layers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace viewret;
using viewret::testing::random_tensor;
using viewret::testing::random_tensor_away_from_zero;

namespace {

// Direct nested-loop convolution with zero padding 1.
std::vector<float> conv_oracle(const Tensor& in, const Tensor& w, const Tensor& b)
{
    const std::size_t cin = in.dim(0), h = in.dim(1), wd = in.dim(2), cout = w.dim(0);
    std::vector<float> out(cout * h * wd);
    for (std::size_t co = 0; co < cout; ++co) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < wd; ++x) {
                double s = b[co];
                for (std::size_t ci = 0; ci < cin; ++ci) {
                    for (int ky = 0; ky < 3; ++ky) {
                        for (int kx = 0; kx < 3; ++kx) {
                            const int sy = static_cast<int>(y) + ky - 1;
                            const int sx = static_cast<int>(x) + kx - 1;
                            if (sy < 0 || sx < 0 || sy >= static_cast<int>(h) || sx >= static_cast<int>(wd)) {
                                continue;
                            }
                            s += static_cast<double>(in[(ci * h + sy) * wd + sx]) *
                                 w[((co * cin + ci) * 3 + ky) * 3 + kx];
                        }
                    }
                }
                out[(co * h + y) * wd + x] = static_cast<float>(s);
            }
        }
    }
    return out;
}

// Pairwise-distinct values (spacing 1/n) so no max-pool window is near a tie.
Tensor distinct_tensor(std::vector<std::size_t> dims, Rng& rng)
{
    Tensor t(std::move(dims));
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<float>(order[i]) / static_cast<float>(t.size()) * 2.0f - 1.0f;
    }
    return t;
}

} // namespace

TEST(Conv2d, IdentityKernelReproducesInput)
{
    Tensor in({1, 3, 3}, 1.0f);
    Tensor w({1, 1, 3, 3});
    w[4] = 1.0f;
    Tensor b({1});
    Tensor out = nn::conv2d(in, w, b);
    ASSERT_EQ(out.dims(), in.dims());
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_FLOAT_EQ(out[i], in[i]);
    }
}

TEST(Conv2d, ZeroKernelGivesBias)
{
    Rng rng(1);
    Tensor in = random_tensor({2, 5, 5}, rng);
    Tensor w({3, 2, 3, 3});
    Tensor b = Tensor::from({3}, std::vector<float>{0.5f, -1.0f, 2.0f});
    Tensor out = nn::conv2d(in, w, b);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < 25; ++p) {
            EXPECT_EQ(out[c * 25 + p], b[c]);
        }
    }
}

TEST(Conv2d, MatchesLoopOracle)
{
    Rng rng(2);
    for (auto dims : std::vector<std::vector<std::size_t>>{{2, 5, 5}, {4, 16, 16}, {3, 7, 4}}) {
        Tensor in = random_tensor(dims, rng);
        Tensor w = random_tensor({4, dims[0], 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        Tensor out = nn::conv2d(in, w, b);
        auto ref = conv_oracle(in, w, b);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            EXPECT_NEAR(out[i], ref[i], 1e-5);
        }
    }
}

TEST(Conv2d, BatchedEqualsPerSample)
{
    Rng rng(3);
    Tensor batch = random_tensor({3, 2, 6, 6}, rng);
    Tensor w = random_tensor({4, 2, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor out = nn::conv2d(batch, w, b);
    for (std::size_t s = 0; s < 3; ++s) {
        Tensor single = Tensor::from({2, 6, 6}, batch.data().subspan(s * 72, 72));
        Tensor o = nn::conv2d(single, w, b);
        for (std::size_t i = 0; i < o.size(); ++i) {
            EXPECT_EQ(o[i], out[s * o.size() + i]);
        }
    }
}

TEST(Conv2d, ShapeErrors)
{
    Tensor in({2, 5, 5});
    EXPECT_THROW(nn::conv2d(in, Tensor({4, 3, 3, 3}), Tensor({4})), ShapeError);
    EXPECT_THROW(nn::conv2d(in, Tensor({4, 2, 5, 5}), Tensor({4})), ShapeError);
    EXPECT_THROW(nn::conv2d(in, Tensor({4, 2, 3, 3}), Tensor({3})), ShapeError);
    EXPECT_THROW(nn::conv2d(Tensor({2, 2, 2}), Tensor({4, 2, 3, 3}), Tensor({4})), ShapeError);
}

TEST(Conv2d, NonFiniteOutputIsNumericError)
{
    Tensor in({1, 3, 3}, 1.0f);
    Tensor w({1, 1, 3, 3}, std::numeric_limits<float>::max());
    EXPECT_THROW(nn::conv2d(in, w, Tensor({1})), NumericError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences)
{
    Rng rng(4);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.4, 0.4);
    Tensor b = random_tensor({3}, rng);
    Tensor x = random_tensor({2, 6, 6}, rng);
    auto report = nn::grad_check([&](const Tensor& in) { return nn::conv2d(in, w, b); },
                                 [&](Tensor& in, const Tensor& out) { nn::conv2d_backward(in, w, b, out); }, x, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_relative_error;

    // weights as the probed input
    Tensor w_probe = Tensor::from(w.dims(), w.data());
    auto wreport = nn::grad_check(
        [&](const Tensor& ww) { return nn::conv2d(x, ww, b); },
        [&](Tensor& ww, const Tensor& out) {
            Tensor xx = Tensor::from(x.dims(), x.data());
            Tensor bb = Tensor::from(b.dims(), b.data());
            nn::conv2d_backward(xx, ww, bb, out);
        },
        w_probe, 1e-3);
    EXPECT_TRUE(wreport.passed) << wreport.max_relative_error;
}

TEST(MaxPool2, SingleWindow)
{
    Tensor in = Tensor::from({1, 2, 2}, std::vector<float>{1, 2, 3, 4});
    Tensor out = nn::maxpool2(in);
    ASSERT_EQ(out.dims(), (std::vector<std::size_t>{1, 1, 1}));
    EXPECT_EQ(out[0], 4.0f);
}

TEST(MaxPool2, ConstantInputHalvesResolution)
{
    Tensor in({2, 4, 6}, 0.75f);
    Tensor out = nn::maxpool2(in);
    ASSERT_EQ(out.dims(), (std::vector<std::size_t>{2, 2, 3}));
    for (float v : out.data()) {
        EXPECT_EQ(v, 0.75f);
    }
}

TEST(MaxPool2, MatchesWindowScan)
{
    Rng rng(5);
    Tensor in = random_tensor({3, 8, 8}, rng);
    Tensor out = nn::maxpool2(in);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < 4; ++y) {
            for (std::size_t x = 0; x < 4; ++x) {
                float m = -1e30f;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                    for (std::size_t dx = 0; dx < 2; ++dx) {
                        m = std::max(m, in[(c * 8 + 2 * y + dy) * 8 + 2 * x + dx]);
                    }
                }
                EXPECT_EQ(out[(c * 4 + y) * 4 + x], m);
            }
        }
    }
}

TEST(MaxPool2, OddDimsRejected) { EXPECT_THROW(nn::maxpool2(Tensor({1, 3, 4})), ShapeError); }

TEST(MaxPool2, TieRoutesGradientToFirstIndex)
{
    Tensor in({1, 2, 2}, 1.0f);
    Tensor out = nn::maxpool2(in);
    out.grad()[0] = 1.0f;
    nn::maxpool2_backward(in, out);
    EXPECT_EQ(in.grad()[0], 1.0f);
    EXPECT_EQ(in.grad()[1], 0.0f);
    EXPECT_EQ(in.grad()[2], 0.0f);
    EXPECT_EQ(in.grad()[3], 0.0f);
}

TEST(MaxPool2, GradientsMatchFiniteDifferences)
{
    Rng rng(6);
    Tensor x = distinct_tensor({2, 6, 6}, rng);
    auto report = nn::grad_check([](const Tensor& in) { return nn::maxpool2(in); },
                                 [](Tensor& in, const Tensor& out) { nn::maxpool2_backward(in, out); }, x, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(Dense, IdentityWeights)
{
    Tensor x = Tensor::from({3}, std::vector<float>{1.5f, -2.0f, 0.25f});
    Tensor w({3, 3});
    for (std::size_t i = 0; i < 3; ++i) {
        w[i * 3 + i] = 1.0f;
    }
    Tensor y = nn::dense(x, w, Tensor({3}));
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(y[i], x[i]);
    }
}

TEST(Dense, HandArithmetic)
{
    Tensor x = Tensor::from({2}, std::vector<float>{1, 2});
    Tensor w = Tensor::from({1, 2}, std::vector<float>{3, 4});
    Tensor b = Tensor::from({1}, std::vector<float>{5});
    EXPECT_FLOAT_EQ(nn::dense(x, w, b)[0], 16.0f);
}

TEST(Dense, MatchesDotProductOracle)
{
    Rng rng(7);
    Tensor x = random_tensor({128}, rng);
    Tensor w = random_tensor({64, 128}, rng);
    Tensor b = random_tensor({64}, rng);
    Tensor y = nn::dense(x, w, b);
    for (std::size_t o = 0; o < 64; ++o) {
        double s = b[o];
        for (std::size_t i = 0; i < 128; ++i) {
            s += static_cast<double>(w[o * 128 + i]) * x[i];
        }
        EXPECT_NEAR(y[o], s, 1e-5);
    }
}

TEST(Dense, RowResultIndependentOfBatchPosition)
{
    Rng rng(8);
    const std::size_t k = 1000, outs = 37, rows = 7;
    Tensor x = random_tensor({rows, k}, rng);
    Tensor w = random_tensor({outs, k}, rng);
    Tensor b = random_tensor({outs}, rng);
    Tensor y = nn::dense(x, w, b);
    for (std::size_t r = 0; r < rows; ++r) {
        Tensor single = Tensor::from({k}, x.data().subspan(r * k, k));
        Tensor ys = nn::dense(single, w, b);
        for (std::size_t o = 0; o < outs; ++o) {
            EXPECT_EQ(ys[o], y[r * outs + o]);
        }
    }
}

TEST(Dense, ShapeMismatch)
{
    EXPECT_THROW(nn::dense(Tensor({3}), Tensor({2, 4}), Tensor({2})), ShapeError);
    EXPECT_THROW(nn::dense(Tensor({4}), Tensor({2, 4}), Tensor({3})), ShapeError);
}

TEST(Dense, GradientsMatchFiniteDifferences)
{
    Rng rng(9);
    Tensor w = random_tensor({4, 8}, rng, -0.6, 0.6);
    Tensor b = random_tensor({4}, rng);
    Tensor x = random_tensor({8}, rng);
    auto report = nn::grad_check([&](const Tensor& in) { return nn::dense(in, w, b); },
                                 [&](Tensor& in, const Tensor& out) { nn::dense_backward(in, w, b, out); }, x, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_relative_error;

    Tensor w_probe = Tensor::from(w.dims(), w.data());
    auto wreport = nn::grad_check(
        [&](const Tensor& ww) { return nn::dense(x, ww, b); },
        [&](Tensor& ww, const Tensor& out) {
            Tensor xx = Tensor::from(x.dims(), x.data());
            Tensor bb = Tensor::from(b.dims(), b.data());
            nn::dense_backward(xx, ww, bb, out);
        },
        w_probe, 1e-3);
    EXPECT_TRUE(wreport.passed) << wreport.max_relative_error;
}

TEST(Relu, Elementwise)
{
    Tensor x = Tensor::from({3}, std::vector<float>{-1, 0, 2});
    Tensor y = nn::relu(x);
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_EQ(y[1], 0.0f);
    EXPECT_EQ(y[2], 2.0f);

    y.grad()[0] = y.grad()[1] = y.grad()[2] = 1.0f;
    nn::relu_backward(x, y);
    EXPECT_EQ(x.grad()[0], 0.0f);
    EXPECT_EQ(x.grad()[1], 0.0f); // kink: zero gradient
    EXPECT_EQ(x.grad()[2], 1.0f);
}

TEST(Relu, AllNegativeBlocksGradient)
{
    Tensor x({10}, -0.5f);
    Tensor y = nn::relu(x);
    for (float v : y.data()) {
        EXPECT_EQ(v, 0.0f);
    }
    std::fill(y.grad().begin(), y.grad().end(), 1.0f);
    nn::relu_backward(x, y);
    for (float g : x.grad()) {
        EXPECT_EQ(g, 0.0f);
    }
}

TEST(Relu, GradientAwayFromKink)
{
    Rng rng(10);
    Tensor x = random_tensor_away_from_zero({5, 7}, rng);
    auto report = nn::grad_check([](const Tensor& in) { return nn::relu(in); },
                                 [](Tensor& in, const Tensor& out) { nn::relu_backward(in, out); }, x, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(Softmax, KnownValues)
{
    Tensor a = nn::softmax(Tensor::from({2}, std::vector<float>{0, 0}));
    EXPECT_FLOAT_EQ(a[0], 0.5f);
    EXPECT_FLOAT_EQ(a[1], 0.5f);

    Tensor big = nn::softmax(Tensor::from({2}, std::vector<float>{1000, 0}));
    EXPECT_NEAR(big[0], 1.0f, 1e-6);
    EXPECT_NEAR(big[1], 0.0f, 1e-6);
    EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));

    // exp(k)/sum(exp) for k = 1,2,3 evaluated directly
    Tensor c = nn::softmax(Tensor::from({3}, std::vector<float>{1, 2, 3}));
    EXPECT_NEAR(c[0], 0.09003, 1e-5);
    EXPECT_NEAR(c[1], 0.24473, 1e-5);
    EXPECT_NEAR(c[2], 0.66524, 1e-5);
}

TEST(Softmax, SumsToOneForLargeInputs)
{
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        Tensor x = random_tensor({5}, rng, -1e4, 1e4);
        Tensor y = nn::softmax(x);
        double s = 0.0;
        for (float v : y.data()) {
            EXPECT_TRUE(std::isfinite(v));
            EXPECT_GE(v, 0.0f);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, GradientsMatchFiniteDifferences)
{
    Rng rng(12);
    Tensor x = random_tensor({3, 4}, rng, -2.0, 2.0);
    auto report = nn::grad_check([](const Tensor& in) { return nn::softmax(in); },
                                 [](Tensor& in, const Tensor& out) { nn::softmax_backward(in, out); }, x, 1e-3);
    EXPECT_TRUE(report.passed) << report.max_relative_error;
}

TEST(BatchNorm, AlreadyNormalizedIsUnchanged)
{
    // Per channel: values {-1, 1} across the batch -> mean 0, biased var 1.
    Tensor x = Tensor::from({2, 2, 1}, std::vector<float>{-1, 1, 1, -1});
    nn::BatchNormState st(2);
    st.eps = 0.0f;
    Tensor y = nn::batchnorm(x, st, Mode::train);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_NEAR(y[i], x[i], 1e-5);
    }
}

TEST(BatchNorm, ZeroGammaGivesBeta)
{
    Rng rng(13);
    Tensor x = random_tensor({4, 3, 2, 2}, rng);
    nn::BatchNormState st(3);
    st.gamma.fill(0.0f);
    st.beta = Tensor::from({3}, std::vector<float>{0.1f, -0.2f, 0.3f});
    Tensor y = nn::batchnorm(x, st, Mode::train);
    for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t c = 0; c < 3; ++c) {
            for (std::size_t i = 0; i < 4; ++i) {
                EXPECT_FLOAT_EQ(y[(b * 3 + c) * 4 + i], st.beta[c]);
            }
        }
    }
}

TEST(BatchNorm, OutputStatisticsRecomputed)
{
    Rng rng(14);
    Tensor x = random_tensor({8, 3, 4, 4}, rng, -3.0, 5.0);
    nn::BatchNormState st(3);
    Tensor y = nn::batchnorm(x, st, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, sq = 0;
        for (std::size_t b = 0; b < 8; ++b) {
            for (std::size_t i = 0; i < 16; ++i) {
                const double v = y[(b * 3 + c) * 16 + i];
                s += v;
                sq += v * v;
            }
        }
        const double mean = s / 128.0;
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(sq / 128.0 - mean * mean, 1.0, 1e-3);
    }
}

TEST(BatchNorm, RunningStatsMomentumAndEvalMode)
{
    Tensor x = Tensor::from({2, 1}, std::vector<float>{1.0f, 3.0f});
    nn::BatchNormState st(1);
    nn::batchnorm(x, st, Mode::train);
    EXPECT_NEAR(st.running_mean[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-7);
    EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-6); // unbiased var of {1,3} = 2

    Tensor e = nn::batchnorm(x, static_cast<const nn::BatchNormState&>(st));
    const double inv = 1.0 / std::sqrt(st.running_var[0] + 1e-5);
    EXPECT_NEAR(e[0], (1.0 - st.running_mean[0]) * inv, 1e-6);
    EXPECT_NEAR(e[1], (3.0 - st.running_mean[0]) * inv, 1e-6);
}

TEST(BatchNorm, BatchOfOneInTrainModeIsConfigError)
{
    nn::BatchNormState st(2);
    EXPECT_THROW(nn::batchnorm(Tensor({1, 2, 3, 3}), st, Mode::train), ConfigError);
    EXPECT_NO_THROW(nn::batchnorm(Tensor({1, 2, 3, 3}), st, Mode::eval));
}

TEST(BatchNorm, GradientsMatchFiniteDifferences)
{
    Rng rng(15);
    for (Mode mode : {Mode::train, Mode::eval}) {
        nn::BatchNormState st(3);
        st.gamma = random_tensor({3}, rng, 0.5, 1.5);
        st.beta = random_tensor({3}, rng);
        st.running_mean = random_tensor({3}, rng);
        st.running_var = random_tensor({3}, rng, 0.5, 2.0);
        Tensor x = random_tensor({4, 3, 3, 3}, rng);
        auto forward = [&](const Tensor& in) {
            nn::BatchNormState copy = st;
            return nn::batchnorm(in, copy, mode);
        };
        auto backward = [&](Tensor& in, const Tensor& out) {
            nn::BatchNormState copy = st;
            nn::BatchNormCache cache;
            nn::batchnorm(in, copy, mode, &cache);
            nn::batchnorm_backward(in, copy, cache, out);
        };
        auto report = nn::grad_check(forward, backward, x, 1e-3);
        EXPECT_TRUE(report.passed) << "mode " << static_cast<int>(mode) << " err " << report.max_relative_error;
    }
}

TEST(Dropout, IdentityCases)
{
    Rng rng(16);
    Tensor x = random_tensor({100}, rng);
    Tensor a = nn::dropout(x, 0.0f, rng, Mode::train);
    Tensor b = nn::dropout(x, 0.7f, rng, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(a[i], x[i]);
        EXPECT_EQ(b[i], x[i]);
    }
}

TEST(Dropout, InvalidProbability)
{
    Rng rng(17);
    EXPECT_THROW(nn::dropout(Tensor({4}), 1.0f, rng, Mode::train), ConfigError);
    EXPECT_THROW(nn::dropout(Tensor({4}), -0.1f, rng, Mode::train), ConfigError);
}

TEST(Dropout, LawOfLargeNumbers)
{
    Rng rng(18);
    Tensor x({1000000}, 1.0f);
    Tensor y = nn::dropout(x, 0.2f, rng, Mode::train);
    double sum = 0;
    std::size_t zeros = 0;
    for (float v : y.data()) {
        sum += v;
        zeros += v == 0.0f;
    }
    EXPECT_NEAR(sum / 1e6, 1.0, 0.01);
    EXPECT_NEAR(static_cast<double>(zeros) / 1e6, 0.2, 0.01);
}

TEST(Dropout, BackwardUsesMask)
{
    Rng rng(19);
    Tensor x({50}, 2.0f);
    nn::DropoutMask mask;
    Tensor y = nn::dropout(x, 0.5f, rng, Mode::train, &mask);
    std::fill(y.grad().begin(), y.grad().end(), 1.0f);
    nn::dropout_backward(x, y, mask);
    for (std::size_t i = 0; i < 50; ++i) {
        EXPECT_EQ(x.grad()[i], y[i] == 0.0f ? 0.0f : 2.0f);
    }
}

TEST(Adam, ZeroGradientIsIdentity)
{
    Rng rng(20);
    Tensor w = random_tensor({10}, rng);
    Tensor before = Tensor::from(w.dims(), w.data());
    nn::AdamState st(0.1f);
    Tensor* params[] = {&w};
    for (int i = 0; i < 5; ++i) {
        nn::adam_step(params, st, 0.0f);
    }
    for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(w[i], before[i]);
    }
}

TEST(Adam, FirstStepMovesByLearningRate)
{
    // m1 = 0.1, v1 = 0.001; bias-corrected both equal 1 -> step = lr * 1 / (1 + eps)
    Tensor w({1});
    w.grad()[0] = 1.0f;
    nn::AdamState st(0.1f);
    Tensor* params[] = {&w};
    nn::adam_step(params, st, 0.0f);
    EXPECT_NEAR(w[0], -0.1, 1e-6);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, DescendsQuadratic)
{
    Tensor w({1}, 5.0f);
    nn::AdamState st(0.1f);
    Tensor* params[] = {&w};
    for (int i = 0; i < 100; ++i) {
        w.grad()[0] = 2.0f * w[0];
        nn::adam_step(params, st, 0.0f);
    }
    EXPECT_LT(std::abs(w[0]), 1.0f);
}

TEST(Adam, L2TermAddsToGradient)
{
    // With zero loss gradient the update is driven by l2 * w alone.
    Tensor w({1}, 2.0f);
    nn::AdamState st(0.01f);
    Tensor* params[] = {&w};
    nn::adam_step(params, st, 0.5f);
    EXPECT_NEAR(w[0], 2.0 - 0.01, 1e-6);
}

TEST(Adam, ShapeMismatch)
{
    Tensor a({3}), b({4});
    nn::AdamState st(0.1f);
    Tensor* one[] = {&a};
    nn::adam_step(one, st);
    Tensor* two[] = {&a, &b};
    EXPECT_THROW(nn::adam_step(two, st), ShapeError);
    Tensor* other[] = {&b};
    EXPECT_THROW(nn::adam_step(other, st), ShapeError);
}
