#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "plm/error.hpp"
#include "plm/grad_check.hpp"
#include "plm/ops.hpp"
#include "grad_cases.hpp"
#include "test_util.hpp"

namespace plm {
namespace {

using test::primitive_cases;
using test::random_tensor;
using test::weighted_sum;
using D = BasicTensor<double>;
using DTape = BasicTape<double>;

constexpr double kEps = 1e-3;
constexpr double kTol = 1e-3;

TEST(Tensor, ShapeAndStorage) {
    Tensor t(Shape{2, 3});
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_THROW(Tensor(Shape{2, 2}, {1.0f, 2.0f, 3.0f}), DimensionError);
    EXPECT_THROW((void)t.dim(2), IndexError);
    EXPECT_THROW((void)t.item(), ContractError);
}

TEST(Tensor, HandlesShareStorageAndCloneDoesNot) {
    Tensor a(Shape{2}, {1.0f, 2.0f});
    Tensor b = a;
    Tensor c = a.clone();
    b[0] = 5.0f;
    EXPECT_EQ(a[0], 5.0f);
    EXPECT_EQ(c[0], 1.0f);
    EXPECT_TRUE(a.is_same(b));
    EXPECT_FALSE(a.is_same(c));
}

TEST(Tape, BackwardOfSumIsOnes) {
    DTape tape;
    auto x = random_tensor(Shape{3, 2}, 1);
    x.set_requires_grad();
    tape.backward(sum(tape, x));
    for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, BackwardOfSquareIsTwoX) {
    DTape tape;
    auto x = random_tensor(Shape{5}, 2);
    x.set_requires_grad();
    tape.backward(sum(tape, mul(tape, x, x)));
    for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Tape, FanOutAccumulatesBothUses) {
    auto x = random_tensor(Shape{4}, 3);
    x.set_requires_grad();
    std::vector<double> single;
    {
        DTape tape;
        auto y = mul(tape, x, x);
        tape.backward(sum(tape, y));
        single.assign(x.grad().begin(), x.grad().end());
    }
    x.drop_grad();
    DTape tape;
    auto y = mul(tape, x, x);
    tape.backward(add(tape, sum(tape, y), sum(tape, y)));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[i], 2.0 * single[i]);
}

TEST(Tape, NonScalarLossIsRejected) {
    DTape tape;
    auto x = random_tensor(Shape{2}, 4);
    x.set_requires_grad();
    auto y = scale(tape, x, 2.0);
    EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Tape, InferenceTapeRecordsNothing) {
    auto tape = DTape::inference();
    auto x = random_tensor(Shape{2, 2}, 5);
    x.set_requires_grad();
    auto y = matmul(tape, x, x);
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Matmul, IdentityAndZero) {
    Tape tape;
    Tensor a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
    auto c = matmul(tape, a, eye);
    EXPECT_EQ(std::vector<float>(c.data().begin(), c.data().end()), (std::vector<float>{1, 2, 3, 4}));
    auto z = matmul(tape, Tensor(Shape{1, 2}, {1, 2}), Tensor(Shape{2, 1}, {0, 0}));
    EXPECT_EQ(z.dims(), (Shape{1, 1}));
    EXPECT_EQ(z[0], 0.0f);
}

TEST(Matmul, MismatchNamesBothShapes) {
    Tape tape;
    try {
        (void)matmul(tape, Tensor(Shape{2, 3}), Tensor(Shape{4, 2}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find(shape_to_string({2, 3})), std::string::npos) << msg;
        EXPECT_NE(msg.find(shape_to_string({4, 2})), std::string::npos) << msg;
    }
}

TEST(Matmul, BatchedMatchesPerGroupProducts) {
    DTape tape;
    auto a = random_tensor(Shape{3, 2, 4}, 6);
    auto b = random_tensor(Shape{3, 4, 5}, 7);
    auto c = matmul(tape, a, b);
    ASSERT_EQ(c.dims(), (Shape{3, 2, 5}));
    for (std::size_t g = 0; g < 3; ++g) {
        for (std::size_t i = 0; i < 2; ++i) {
            for (std::size_t j = 0; j < 5; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < 4; ++k) s += a[g * 8 + i * 4 + k] * b[g * 20 + k * 5 + j];
                EXPECT_NEAR(c[g * 10 + i * 5 + j], s, 1e-12);
            }
        }
    }
}

TEST(LayerNorm, ConstantInputNormalisesToZero) {
    Tape tape;
    auto y = layer_norm(tape, Tensor(Shape{4}, {5, 5, 5, 5}), Tensor::filled({4}, 1.0f), Tensor::filled({4}, 0.0f));
    for (float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, UnitVarianceHandCase) {
    DTape tape;
    auto y = layer_norm(tape, D(Shape{2}, {1, -1}), D::filled({2}, 1.0), D::filled({2}, 0.0), 1e-12);
    EXPECT_NEAR(y[0], 1.0, 1e-9);
    EXPECT_NEAR(y[1], -1.0, 1e-9);
}

TEST(LayerNorm, WidthMismatchIsDimensionError) {
    Tape tape;
    EXPECT_THROW((void)layer_norm(tape, Tensor(Shape{2, 3}), Tensor::filled({4}, 1.0f), Tensor::filled({4}, 0.0f)),
                 DimensionError);
}

TEST(Softmax, HandValues) {
    Tape tape;
    auto u = softmax_last(tape, Tensor(Shape{3}, {0, 0, 0}));
    for (float v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
    auto big = softmax_last(tape, Tensor(Shape{2}, {1000, 0}));
    EXPECT_NEAR(big[0], 1.0, 1e-7);
    EXPECT_NEAR(big[1], 0.0, 1e-7);
    auto l2 = softmax_last(tape, Tensor(Shape{3}, {static_cast<float>(std::log(2.0)), 0, 0}));
    EXPECT_NEAR(l2[0], 0.5, 1e-7);
    EXPECT_NEAR(l2[1], 0.25, 1e-7);
    EXPECT_NEAR(l2[2], 0.25, 1e-7);
}

TEST(Softmax, RowsSumToOneForLargeMagnitudes) {
    Tape tape;
    auto x = random_tensor<float>(Shape{50, 17}, 8, -1e4, 1e4);
    auto y = softmax_last(tape, x);
    for (std::size_t r = 0; r < 50; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 17; ++c) s += y[r * 17 + c];
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, MaskedEntriesGetZeroAndBadInputsThrow) {
    Tape tape;
    const float inf = std::numeric_limits<float>::infinity();
    auto y = softmax_last(tape, Tensor(Shape{3}, {1.0f, -inf, 1.0f}));
    EXPECT_EQ(y[1], 0.0f);
    EXPECT_NEAR(y[0], 0.5, 1e-7);
    EXPECT_THROW((void)softmax_last(tape, Tensor(Shape{2}, {-inf, -inf})), NumericError);
    EXPECT_THROW((void)softmax_last(tape, Tensor(Shape{2}, {std::nanf(""), 0.0f})), NumericError);
}

TEST(Gelu, FixedPoints) {
    Tape tape;
    auto y = gelu(tape, Tensor(Shape{2}, {0.0f, 10.0f}));
    EXPECT_EQ(y[0], 0.0f);
    EXPECT_NEAR(y[1], 10.0, 1e-4);
}

TEST(Gelu, MatchesTanhFormula) {
    DTape tape;
    auto x = random_tensor(Shape{64}, 9, -6, 6);
    auto y = gelu(tape, x);
    for (std::size_t i = 0; i < 64; ++i) {
        const double v = x[i];
        const double ref = 0.5 * v * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (v + 0.044715 * v * v * v)));
        EXPECT_NEAR(y[i], ref, 1e-12);
    }
}

TEST(Gelu, GradientAtSpecPoints) {
    for (double at : {-2.0, -0.1, 0.1, 2.0}) {
        ScalarFn<double> f = [](DTape& t, const D& x) { return sum(t, gelu(t, x)); };
        EXPECT_LT(grad_check(f, D(Shape{1}, {at}), kEps), 1e-4) << "x=" << at;
    }
}

TEST(Embedding, RepeatedAndEmptyIds) {
    Tape tape;
    auto table = random_tensor<float>(Shape{5, 3}, 10);
    const std::vector<TokenId> ids{0, 0};
    auto y = embedding_lookup(tape, table, std::span<const TokenId>(ids));
    ASSERT_EQ(y.dims(), (Shape{2, 3}));
    for (std::size_t h = 0; h < 3; ++h) {
        EXPECT_EQ(y[h], table[h]);
        EXPECT_EQ(y[3 + h], table[h]);
    }
    auto e = embedding_lookup(tape, table, std::span<const TokenId>());
    EXPECT_EQ(e.dims(), (Shape{0, 3}));
}

TEST(Embedding, OutOfRangeNamesPosition) {
    Tape tape;
    const std::vector<TokenId> ids{1, 7};
    try {
        (void)embedding_lookup(tape, Tensor(Shape{5, 3}), std::span<const TokenId>(ids));
        FAIL() << "expected IndexError";
    } catch (const IndexError& e) {
        EXPECT_NE(std::string(e.what()).find("position 1"), std::string::npos) << e.what();
    }
}

TEST(Embedding, ScatterAddMatchesDenseJacobian) {
    const std::size_t v = 5, h = 3, l = 4;
    auto table = random_tensor(Shape{v, h}, 11);
    table.set_requires_grad();
    const std::vector<TokenId> ids{3, 1, 3, 0};
    const auto g = random_tensor(Shape{l, h}, 12);
    DTape tape;
    auto y = embedding_lookup(tape, table, std::span<const TokenId>(ids));
    tape.backward(sum(tape, mul(tape, y, g)));
    // J[(p,c), (r,c')] = [ids[p] == r][c == c']; grad = J^T g.
    for (std::size_t r = 0; r < v; ++r) {
        for (std::size_t c = 0; c < h; ++c) {
            double expect = 0.0;
            for (std::size_t p = 0; p < l; ++p) {
                for (std::size_t c2 = 0; c2 < h; ++c2) {
                    const double jac = (static_cast<std::size_t>(ids[p]) == r && c == c2) ? 1.0 : 0.0;
                    expect += jac * g[p * h + c2];
                }
            }
            EXPECT_DOUBLE_EQ(table.grad()[r * h + c], expect);
        }
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
    Tape tape;
    const std::vector<TokenId> targets{7};
    const std::vector<std::uint8_t> select{1};
    auto loss = cross_entropy_masked(tape, Tensor::filled({1, 30}, 0.25f), std::span<const TokenId>(targets),
                                     std::span<const std::uint8_t>(select));
    EXPECT_NEAR(loss.item(), std::log(30.0), 1e-6);
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
    Tape tape;
    const std::vector<TokenId> targets{1};
    const std::vector<std::uint8_t> select{1};
    double prev = 1e9;
    for (float margin : {1.0f, 5.0f, 20.0f, 80.0f}) {
        auto loss = cross_entropy_masked(tape, Tensor(Shape{1, 3}, {0.0f, margin, 0.0f}),
                                         std::span<const TokenId>(targets), std::span<const std::uint8_t>(select));
        EXPECT_LT(loss.item(), prev);
        prev = loss.item();
    }
    EXPECT_LT(prev, 1e-6);
}

TEST(CrossEntropy, MatchesDirectLogSoftmaxSum) {
    const std::size_t n = 6, v = 7;
    auto logits = random_tensor(Shape{n, v}, 13, -3, 3);
    const std::vector<TokenId> targets{0, 6, 3, 2, 2, 5};
    const std::vector<std::uint8_t> select{1, 0, 1, 1, 0, 1};
    DTape tape;
    const double got = cross_entropy_masked(tape, logits, std::span<const TokenId>(targets),
                                            std::span<const std::uint8_t>(select))
                           .item();
    double total = 0.0;
    int count = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (!select[r]) continue;
        double z = 0.0;
        for (std::size_t c = 0; c < v; ++c) z += std::exp(logits[r * v + c]);
        total += std::log(z) - logits[r * v + static_cast<std::size_t>(targets[r])];
        ++count;
    }
    EXPECT_NEAR(got, total / count, 1e-12);
}

TEST(CrossEntropy, UnselectedTargetsAreIgnoredAndEmptySelectionThrows) {
    Tape tape;
    auto logits = random_tensor<float>(Shape{3, 4}, 14);
    const std::vector<std::uint8_t> select{1, 0, 1};
    const std::vector<TokenId> a{1, 2, 3};
    const std::vector<TokenId> b{1, 0, 3};
    const float la = cross_entropy_masked(tape, logits, std::span<const TokenId>(a),
                                          std::span<const std::uint8_t>(select))
                         .item();
    const float lb = cross_entropy_masked(tape, logits, std::span<const TokenId>(b),
                                          std::span<const std::uint8_t>(select))
                         .item();
    EXPECT_EQ(la, lb);
    const std::vector<std::uint8_t> none{0, 0, 0};
    EXPECT_THROW((void)cross_entropy_masked(tape, logits, std::span<const TokenId>(a),
                                            std::span<const std::uint8_t>(none)),
                 ContractError);
}

TEST(GradCheck, SpecExamples) {
    ScalarFn<double> s = [](DTape& t, const D& x) { return sum(t, x); };
    EXPECT_LT(grad_check(s, random_tensor(Shape{4}, 15), kEps), 1e-6);
    ScalarFn<double> sq = [](DTape& t, const D& x) { return sum(t, mul(t, x, x)); };
    EXPECT_LT(grad_check(sq, D(Shape{3}, {1, 2, 3}), kEps), 1e-4);
}

TEST(Purity, RepeatedEvaluationIsBitwiseIdentical) {
    auto x = random_tensor<float>(Shape{4, 8}, 16);
    auto w = random_tensor<float>(Shape{8, 8}, 17);
    const auto run = [&] {
        Tape tape;
        auto y = gelu(tape, matmul(tape, x, w));
        y = layer_norm(tape, y, Tensor::filled({8}, 1.0f), Tensor::filled({8}, 0.0f));
        y = softmax_last(tape, y);
        return std::vector<float>(y.data().begin(), y.data().end());
    };
    EXPECT_EQ(run(), run());
}

TEST(GradCheck, EveryPrimitive) {
    std::uint64_t seed = 100;
    for (const auto& c : primitive_cases()) {
        const auto r = grad_check_detailed(c.f, random_tensor(c.input, seed++, -2, 2), kEps);
        EXPECT_LT(r.max_rel_error, kTol) << c.name << " worst index " << r.worst_index << " analytic " << r.analytic
                                         << " numeric " << r.numeric;
    }
}

TEST(Dropout, EvalIdentityAndInvertedScaling) {
    Tape tape;
    auto x = Tensor::filled({1000}, 1.0f);
    auto same = dropout(tape, x, 0.5, nullptr);
    EXPECT_TRUE(same.is_same(x) || std::equal(same.data().begin(), same.data().end(), x.data().begin()));
    Rng rng(5);
    auto y = dropout(tape, x, 0.25, &rng);
    for (float v : y.data()) EXPECT_TRUE(v == 0.0f || std::abs(v - 1.0f / 0.75f) < 1e-6);
}

}  // namespace
}  // namespace plm
