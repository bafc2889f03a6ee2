#include <advreg/gradcheck.hpp>
#include <advreg/tensor.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace advreg;

namespace {

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

} // namespace

TEST(Tensor, ShapeMustMatchData)
{
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
    const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, RejectsNonFiniteValues)
{
    try {
        Tensor::vector({1.0, std::nan("")});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonFiniteValue);
    }
}

TEST(Tensor, SoftmaxOfZerosIsUniform)
{
    Tape tape;
    const Tensor s = tape.softmax(Tensor::vector({0.0, 0.0}));
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    EXPECT_DOUBLE_EQ(s.at(1), 0.5);
}

TEST(Tensor, SoftmaxRowsSumToOne)
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tape tape;
        const Tensor x = Tensor::uniform({3, 7}, -20.0, 20.0, rng);
        const Tensor s = tape.softmax(x);
        for (std::size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 7; ++c) {
                EXPECT_GE(s.at(r, c), 0.0);
                sum += s.at(r, c);
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Tensor, MaskedSoftmaxGivesZeroToMaskedPositions)
{
    Tape tape;
    const std::vector<std::uint8_t> mask{1, 0, 1};
    const Tensor s = tape.softmax(Tensor::vector({1.0, 50.0, 1.0}), mask);
    EXPECT_DOUBLE_EQ(s.at(1), 0.0);
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    const std::vector<std::uint8_t> none{0, 0, 0};
    try {
        tape.softmax(Tensor::vector({1.0, 2.0, 3.0}), none);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::AllPositionsMasked);
    }
}

TEST(Tensor, MatmulWithIdentity)
{
    Tape tape;
    const Tensor out = tape.matmul(Tensor::matrix(2, 2, {1, 0, 0, 1}), Tensor::matrix(2, 1, {3, 4}));
    EXPECT_EQ(out.shape(), (Shape{2, 1}));
    EXPECT_DOUBLE_EQ(out.at(0), 3.0);
    EXPECT_DOUBLE_EQ(out.at(1), 4.0);
}

TEST(Tensor, MatmulShapeMismatch)
{
    Tape tape;
    try {
        tape.matmul(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}), Tensor::matrix(2, 1, {1, 2}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
    }
}

TEST(Tensor, BackwardOfSumOfSquares)
{
    Tape tape;
    const Tensor x = Tensor::vector({1, 2, 3}, true);
    tape.backward(tape.sum(tape.mul(x, x)));
    EXPECT_EQ(grad_of(x), (std::vector<double>{2, 4, 6}));
}

TEST(Tensor, BackwardOfProduct)
{
    Tape tape;
    const Tensor x = Tensor::vector({3, 4}, true);
    tape.backward(tape.mul(tape.element(x, 0), tape.element(x, 1)));
    EXPECT_EQ(grad_of(x), (std::vector<double>{4, 3}));
}

TEST(Tensor, ReuseAccumulates)
{
    Tape tape;
    const Tensor x = Tensor::vector({1}, true);
    tape.backward(tape.sum(tape.add(x, x)));
    EXPECT_EQ(grad_of(x), (std::vector<double>{2}));
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCallsUntilZeroed)
{
    Tensor x = Tensor::vector({1, 2}, true);
    for (int i = 0; i < 2; ++i) {
        Tape tape;
        tape.backward(tape.sum(tape.mul(x, x)));
    }
    EXPECT_EQ(grad_of(x), (std::vector<double>{4, 8}));
    x.zero_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, ConstantLossPopulatesNothing)
{
    Tape tape;
    const Tensor w = Tensor::vector({1.0}, true);
    EXPECT_NO_THROW(tape.backward(Tensor::scalar(5.0)));
    EXPECT_FALSE(w.has_grad());
}

TEST(Tensor, BackwardNeedsScalar)
{
    Tape tape;
    const Tensor x = Tensor::vector({1, 2}, true);
    try {
        tape.backward(tape.mul(x, x));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NotScalar);
    }
}

TEST(Tensor, LogOfNonPositive)
{
    Tape tape;
    try {
        tape.log(Tensor::vector({1.0, 0.0}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::LogOfNonPositive);
    }
}

TEST(Tensor, XlogxUsesZeroConvention)
{
    Tape tape;
    const Tensor y = tape.xlogx(Tensor::vector({0.0, 1.0, 0.5}));
    EXPECT_DOUBLE_EQ(y.at(0), 0.0);
    EXPECT_DOUBLE_EQ(y.at(1), 0.0);
    EXPECT_DOUBLE_EQ(y.at(2), 0.5 * std::log(0.5));
}

TEST(Tensor, LayerNormOfConstantRowIsFinite)
{
    Tape tape;
    const Tensor y = tape.layer_norm(Tensor::matrix(1, 4, {2, 2, 2, 2}), Tensor::filled({4}, 1.0), Tensor::zeros({4}));
    for (double v : y.data()) {
        EXPECT_DOUBLE_EQ(v, 0.0);
    }
}

TEST(Tensor, FiniteDifferenceExamples)
{
    const auto sq = [](const Tensor& x) {
        double s = 0.0;
        for (double v : x.data()) {
            s += v * v;
        }
        return s;
    };
    const Tensor g = finite_difference_grad(sq, Tensor::vector({1, 2}), 1e-5);
    EXPECT_NEAR(g.at(0), 2.0, 1e-6);
    EXPECT_NEAR(g.at(1), 4.0, 1e-6);

    const Tensor zero = finite_difference_grad([](const Tensor&) { return 7.0; }, Tensor::vector({1, -3, 2}), 1e-5);
    for (double v : zero.data()) {
        EXPECT_EQ(v, 0.0);
    }

    const Tensor s =
        finite_difference_grad([](const Tensor& x) { return 1.0 / (1.0 + std::exp(-x.at(0))); }, Tensor::vector({0.0}), 1e-5);
    EXPECT_NEAR(s.at(0), 0.25, 1e-9);

    EXPECT_THROW(finite_difference_grad(sq, Tensor::vector({1.0}), 0.0), Error);
}

TEST(Tensor, EveryPrimitiveMatchesFiniteDifferences)
{
    for (const auto& r : run_gradcheck(11, 5)) {
        EXPECT_TRUE(r.passed) << r.name << " max relative error " << r.max_relative_error;
    }
}

TEST(Tensor, DeterministicGivenSeed)
{
    auto run = [] {
        Rng rng(42);
        Tape tape;
        const Tensor w = Tensor::uniform({4, 3}, -1, 1, rng, true);
        const Tensor x = Tensor::uniform({2, 4}, -1, 1, rng);
        const Tensor loss = tape.sum(tape.tanh(tape.matmul(x, w)));
        tape.backward(loss);
        return std::pair{loss.item(), grad_of(w)};
    };
    EXPECT_EQ(run(), run());
}
