// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gncf/error.hpp"
#include "gncf/ops.hpp"
#include "support/test_util.hpp"

namespace gncf {
namespace {

using testing::max_abs_diff;
using testing::max_gradient_error;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

// Scalar loss sum(w * y) with fixed random weights, so every output element
// contributes a distinct gradient.
Tensor projected(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

Shape random_shape(Rng& rng, std::size_t rank, std::size_t max_extent = 4) {
  Shape s(rank);
  for (auto& e : s) e = 1 + rng.below(max_extent);
  return s;
}

TEST(Tensor, RejectsInconsistentShape) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor(Shape{0, 3}), ShapeError);
  Tensor s = Tensor::scalar(2.5);
  EXPECT_EQ(s.numel(), 1u);
  EXPECT_DOUBLE_EQ(s.item(), 2.5);
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(1);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor out = matmul(eye, a);
  EXPECT_EQ(max_abs_diff(out.values(), a.values()), 0.0);
}

TEST(Matmul, HandExpandedProduct) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {0, 1});
  Tensor out = matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(out[0], 2.0);
  EXPECT_DOUBLE_EQ(out[1], 4.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tensor a({2, 3}), b({2, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[2, 2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, BroadcastsLeadingAxes) {
  Rng rng(2);
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor out = matmul(a, b);
  ASSERT_EQ(out.shape(), (Shape{2, 3, 5}));
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < 4; ++p) acc += a[(bi * 3 + i) * 4 + p] * b[p * 5 + j];
        EXPECT_NEAR(out[(bi * 3 + i) * 5 + j], acc, 1e-14);
      }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor a = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor b = random_tensor({4, 2}, rng, -1, 1, true);
  EXPECT_LT(max_gradient_error([&] { return sum(matmul(a, b)); }, {a, b}), kGradTol);
}

TEST(Softmax, UniformOnEqualInputs) {
  Tensor y = softmax_lastdim(Tensor({4}, {0, 0, 0, 0}));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeInputsDoNotOverflow) {
  Tensor y = softmax_lastdim(Tensor({2}, {1000, 1000}));
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
}

TEST(Softmax, RejectsNonFiniteInput) {
  EXPECT_THROW(softmax_lastdim(Tensor({2}, {1.0, NAN})), NumericError);
  EXPECT_THROW(softmax_lastdim(Tensor({2}, {INFINITY, 0.0})), NumericError);
}

TEST(Softmax, RowsNormalizedAndShiftInvariant) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Shape s = random_shape(rng, 1 + rng.below(3), 6);
    Tensor x = random_tensor(s, rng, -20, 20);
    Tensor y = softmax_lastdim(x);
    const std::size_t d = s.back();
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (std::size_t r = 0; r < x.numel() / d; ++r) {
      const double c = rng.uniform(-50, 50);
      for (std::size_t j = 0; j < d; ++j) shifted[r * d + j] += c;
    }
    Tensor ys = softmax_lastdim(Tensor(s, shifted));
    for (std::size_t r = 0; r < x.numel() / d; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        EXPECT_GE(y[r * d + j], 0.0);
        total += y[r * d + j];
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
    EXPECT_LT(max_abs_diff(y.values(), ys.values()), 1e-9);
  }
}

TEST(ElementwiseMul, DefinitionAndIdentity) {
  Tensor a({3}, {1, 2, 3});
  Tensor out = elementwise_mul(a, Tensor({3}, {4, 5, 6}));
  EXPECT_EQ(std::vector<double>(out.values().begin(), out.values().end()), (std::vector<double>{4, 10, 18}));
  Tensor same = elementwise_mul(a, Tensor({3}, 1.0));
  EXPECT_EQ(max_abs_diff(same.values(), a.values()), 0.0);
}

TEST(ElementwiseMul, GradientIsOtherOperand) {
  Rng rng(5);
  Tensor a = random_tensor({2, 3}, rng, -1, 1, true);
  Tensor b = random_tensor({2, 3}, rng);
  sum(elementwise_mul(a, b)).backward();
  EXPECT_EQ(max_abs_diff(a.grad(), b.values()), 0.0);
}

TEST(ElementwiseMul, RejectsShapeMismatch) {
  EXPECT_THROW(elementwise_mul(Tensor({3}), Tensor({1, 3})), ShapeError);
}

TEST(Linear, IdentityWeightIsNoOp) {
  Rng rng(6);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor out = linear(x, w, Tensor({3}, 0.0));
  EXPECT_EQ(max_abs_diff(out.values(), x.values()), 0.0);
}

TEST(Linear, OnesWeightSumsInputs) {
  Tensor out = linear(Tensor({1, 2}, {1, 1}), Tensor({2, 3}, 1.0), Tensor({3}, 0.0));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, 2.0);
}

TEST(Linear, RejectsDimensionMismatch) {
  EXPECT_THROW(linear(Tensor({2, 4}), Tensor({3, 2}), Tensor({2})), ShapeError);
  EXPECT_THROW(linear(Tensor({2, 3}), Tensor({3, 2}), Tensor({3})), ShapeError);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  Tensor x = random_tensor({2, 3, 4}, rng, -1, 1, true);
  Tensor w = random_tensor({4, 5}, rng, -1, 1, true);
  Tensor b = random_tensor({5}, rng, -1, 1, true);
  EXPECT_LT(max_gradient_error([&] { return projected(linear(x, w, b)); }, {x, w, b}), kGradTol);
}

TEST(DepthwiseConv, UnitKernelIsIdentity) {
  Rng rng(8);
  Tensor x = random_tensor({5, 3}, rng);
  Tensor out = depthwise_conv1d(x, Tensor({3, 1}, 1.0), Tensor({3}, 0.0));
  EXPECT_EQ(max_abs_diff(out.values(), x.values()), 0.0);
}

TEST(DepthwiseConv, HandConvolutionWithZeroPads) {
  Tensor out = depthwise_conv1d(Tensor({3, 1}, {1, 2, 3}), Tensor({1, 3}, 1.0), Tensor({1}, 0.0));
  EXPECT_EQ(std::vector<double>(out.values().begin(), out.values().end()), (std::vector<double>{3, 6, 5}));
}

TEST(DepthwiseConv, ImpulseGivesReversedKernel) {
  // Same padding, K = 4 (even): left pad 1, right pad 2.
  const std::size_t t_len = 7, hot = 3;
  std::vector<double> x(t_len, 0.0);
  x[hot] = 1.0;
  const std::vector<double> kernel{1, 2, 3, 4};
  Tensor out = depthwise_conv1d(Tensor({t_len, 1}, x), Tensor({1, 4}, kernel), Tensor({1}, 0.0));
  // y[t] = sum_j k[j] x[t + j - 1] = k[hot - t + 1].
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(hot) - static_cast<std::ptrdiff_t>(t) + 1;
    const double expect = (j >= 0 && j < 4) ? kernel[static_cast<std::size_t>(j)] : 0.0;
    EXPECT_DOUBLE_EQ(out[t], expect) << "t=" << t;
  }
  // Near the boundary the response is truncated.
  std::vector<double> edge(t_len, 0.0);
  edge[0] = 1.0;
  Tensor e = depthwise_conv1d(Tensor({t_len, 1}, edge), Tensor({1, 4}, kernel), Tensor({1}, 0.0));
  EXPECT_DOUBLE_EQ(e[0], 2.0);
  EXPECT_DOUBLE_EQ(e[1], 1.0);
  EXPECT_DOUBLE_EQ(e[2], 0.0);
}

TEST(DepthwiseConv, CausalOutputIgnoresFuture) {
  Rng rng(9);
  Tensor x = random_tensor({6, 2}, rng);
  Tensor k = random_tensor({2, 3}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor y = depthwise_conv1d(x, k, b, ConvPadding::Causal);
  std::vector<double> changed(x.values().begin(), x.values().end());
  changed[4 * 2] += 5.0;
  changed[5 * 2 + 1] -= 3.0;
  Tensor y2 = depthwise_conv1d(Tensor({6, 2}, changed), k, b, ConvPadding::Causal);
  for (std::size_t i = 0; i < 4 * 2; ++i) EXPECT_EQ(y[i], y2[i]);
}

TEST(DepthwiseConv, RejectsKernelWiderThanTwiceLengthPlusOne) {
  EXPECT_NO_THROW(depthwise_conv1d(Tensor({3, 1}), Tensor({1, 7}), Tensor({1})));
  EXPECT_THROW(depthwise_conv1d(Tensor({3, 1}), Tensor({1, 8}), Tensor({1})), ShapeError);
}

TEST(DepthwiseConv, MatchesNaiveTripleLoop) {
  Rng rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t t_len = 1 + rng.below(9), c = 1 + rng.below(5);
    const std::size_t k = 1 + rng.below(2 * t_len + 1);
    const bool causal = trial % 2 == 1;
    Tensor x = random_tensor({t_len, c}, rng);
    Tensor kern = random_tensor({c, k}, rng);
    Tensor bias = random_tensor({c}, rng);
    Tensor y = depthwise_conv1d(x, kern, bias, causal ? ConvPadding::Causal : ConvPadding::Same);
    const std::ptrdiff_t left = causal ? static_cast<std::ptrdiff_t>(k) - 1 : static_cast<std::ptrdiff_t>((k - 1) / 2);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = bias[ch];
        for (std::size_t j = 0; j < k; ++j) {
          const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t + j) - left;
          if (s >= 0 && s < static_cast<std::ptrdiff_t>(t_len))
            acc += kern[ch * k + j] * x[static_cast<std::size_t>(s) * c + ch];
        }
        EXPECT_NEAR(y[t * c + ch], acc, 1e-12);
      }
  }
}

TEST(LayerNorm, ConstantSliceMapsToZero) {
  Tensor y = layer_norm(Tensor({1, 4}, 3.0), Tensor({4}, 1.0), Tensor({4}, 0.0));
  for (double v : y.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, HandComputedPair) {
  Tensor y = layer_norm(Tensor({2}, {1, 3}), Tensor({2}, 1.0), Tensor({2}, 0.0));
  EXPECT_NEAR(y[0], -1.0, 1e-6);
  EXPECT_NEAR(y[1], 1.0, 1e-6);
}

TEST(LayerNorm, OutputMeanEqualsShiftMean) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 2 + rng.below(8);
    Tensor x = random_tensor({3, d}, rng, -5, 5);
    Tensor shift = random_tensor({d}, rng);
    Tensor y = layer_norm(x, Tensor({d}, 1.0), shift);
    const double shift_mean = std::accumulate(shift.values().begin(), shift.values().end(), 0.0) / static_cast<double>(d);
    for (std::size_t r = 0; r < 3; ++r) {
      double m = 0.0;
      for (std::size_t j = 0; j < d; ++j) m += y[r * d + j];
      EXPECT_NEAR(m / static_cast<double>(d), shift_mean, 1e-12);
    }
  }
}

TEST(Split, ContiguousSlices) {
  Tensor x({4}, {1, 2, 3, 4});
  const std::size_t widths[] = {2, 2};
  auto parts = split_lastdim(x, widths);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0][0], 1.0);
  EXPECT_EQ(parts[0][1], 2.0);
  EXPECT_EQ(parts[1][0], 3.0);
  EXPECT_EQ(parts[1][1], 4.0);
}

TEST(Split, RejectsWidthSumMismatch) {
  const std::size_t widths[] = {2, 3};
  EXPECT_THROW(split_lastdim(Tensor({2, 4}), widths), ShapeError);
}

TEST(Split, ConcatRoundTripIsBitExact) {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t n_parts = 1 + rng.below(5);
    std::vector<std::size_t> widths(n_parts);
    for (auto& w : widths) w = 1 + rng.below(6);
    const std::size_t d = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
    Tensor x = random_tensor({1 + rng.below(3), 1 + rng.below(3), d}, rng, -1e3, 1e3);
    auto parts = split_lastdim(x, widths);
    Tensor back = concat_lastdim(parts);
    ASSERT_EQ(back.shape(), x.shape());
    EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), x.values().begin()));
    // split(concat(parts)) == parts
    auto again = split_lastdim(back, widths);
    for (std::size_t i = 0; i < n_parts; ++i)
      EXPECT_TRUE(std::equal(again[i].values().begin(), again[i].values().end(), parts[i].values().begin()));
  }
}

TEST(Split, GradientRoutesToOwnSlice) {
  Rng rng(13);
  Tensor x = random_tensor({2, 5}, rng, -1, 1, true);
  const std::size_t widths[] = {2, 3};
  sum(split_lastdim(x, widths)[1]).backward();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(x.grad()[r * 5 + j], j < 2 ? 0.0 : 1.0);
  EXPECT_LT(max_gradient_error(
                [&] {
                  auto p = split_lastdim(x, widths);
                  return add(projected(p[0], 1), projected(p[1], 2));
                },
                {x}),
            kGradTol);
}

TEST(CrossEntropy, UniformLogitsGiveLogVocab) {
  const int targets[] = {0, 3, 4};
  Tensor loss = cross_entropy(Tensor({3, 5}, 0.0), targets);
  EXPECT_NEAR(loss.item(), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, SaturatedTargetGivesZeroLoss) {
  std::vector<double> logits(4, 0.0);
  logits[2] = 1e4;
  const int targets[] = {2};
  EXPECT_NEAR(cross_entropy(Tensor({1, 4}, logits), targets).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, IgnoredRowsAndRangeChecks) {
  Rng rng(14);
  Tensor logits = random_tensor({3, 4}, rng);
  const int with_ignored[] = {1, -1, 2};
  const int kept[] = {1, 2};
  std::vector<double> rows;
  for (std::size_t r : {0u, 2u}) rows.insert(rows.end(), logits.values().begin() + r * 4, logits.values().begin() + r * 4 + 4);
  EXPECT_NEAR(cross_entropy(logits, with_ignored).item(), cross_entropy(Tensor({2, 4}, rows), kept).item(), 1e-14);
  const int bad[] = {1, 4, 0};
  EXPECT_THROW(cross_entropy(logits, bad), std::out_of_range);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(15);
  Tensor logits = random_tensor({4, 6}, rng, -2, 2, true);
  const int targets[] = {5, 0, -1, 2};
  EXPECT_LT(max_gradient_error([&] { return cross_entropy(logits, targets); }, {logits}), kGradTol);
  EXPECT_LT(max_gradient_error([&] { return cross_entropy(logits, targets, -1, 0.1); }, {logits}), kGradTol);
}

TEST(Backward, SumGivesOnes) {
  Rng rng(16);
  Tensor x = random_tensor({3, 2}, rng, -1, 1, true);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  Rng rng(17);
  Tensor x = random_tensor({5}, rng, -1, 1, true);
  sum(elementwise_mul(x, x)).backward();
  for (std::size_t i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, RepeatedCallsAccumulateUntilReset) {
  Rng rng(18);
  Tensor x = random_tensor({4}, rng, -1, 1, true);
  Tensor loss = sum(scale(x, 3.0));
  loss.backward();
  loss.backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 6.0);
  x.zero_grad();
  loss.backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 3.0);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor x = Tensor({2}, 1.0).set_requires_grad();
  EXPECT_THROW(scale(x, 2.0).backward(), ShapeError);
}

TEST(Backward, EveryReachableLeafGetsGradient) {
  Tensor a = Tensor({2}, 1.0).set_requires_grad();
  Tensor unused_path = Tensor({2}, 1.0).set_requires_grad();
  Tensor loss = sum(add(a, scale(unused_path, 0.0)));
  loss.backward();
  EXPECT_TRUE(a.has_grad());
  EXPECT_TRUE(unused_path.has_grad());
}

TEST(Backward, NoGradGuardSkipsRecording) {
  Tensor x = Tensor({2}, 1.0).set_requires_grad();
  NoGradGuard guard;
  EXPECT_FALSE(sum(x).requires_grad());
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  Rng rng(19);
  Tensor x = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor w = random_tensor({4, 4}, rng, -1, 1, true);
  Tensor g = random_tensor({4}, rng, 0.5, 1.5, true);
  Tensor s = random_tensor({4}, rng, -1, 1, true);
  EXPECT_LT(max_gradient_error(
                [&] {
                  Tensor h = layer_norm(linear(x, w, Tensor()), g, s);
                  Tensor a = softmax_lastdim(matmul(h, transpose_last2(h)));
                  return projected(elementwise_mul(matmul(a, h), relu(h)));
                },
                {x, w, g, s}),
            kGradTol);
}

// Each differentiable primitive against central differences on 20 random
// small shapes.
TEST(GradientSweep, PrimitivesOnRandomShapes) {
  Rng rng(20);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Shape s = random_shape(rng, 2);
    const std::size_t d = s.back();
    Tensor a = random_tensor(s, rng, -1, 1, true);
    Tensor b = random_tensor(s, rng, -1, 1, true);
    Tensor row = random_tensor({d}, rng, -1, 1, true);
    Tensor m = random_tensor({d, 1 + rng.below(4)}, rng, -1, 1, true);
    Tensor gain = random_tensor({d}, rng, 0.5, 1.5, true);
    Tensor kern = random_tensor({d, 1 + rng.below(2 * s[0] + 1)}, rng, -1, 1, true);
    Tensor bias = random_tensor({d}, rng, -1, 1, true);
    // Keep relu inputs away from the kink.
    Tensor r = random_tensor(s, rng, 0.1, 1, true);
    for (auto& v : r.mutable_values()) v *= rng.uniform() < 0.5 ? -1.0 : 1.0;

    std::vector<std::size_t> widths;
    for (std::size_t left = d; left > 0;) {
      const std::size_t w = 1 + rng.below(left);
      widths.push_back(w);
      left -= w;
    }
    std::vector<int> targets(s[0]);
    for (auto& t : targets) t = static_cast<int>(rng.below(d));

    const std::vector<std::pair<const char*, std::function<double()>>> checks = {
        {"add", [&] { return max_gradient_error([&] { return projected(add(a, row)); }, {a, row}); }},
        {"sub", [&] { return max_gradient_error([&] { return projected(sub(a, b)); }, {a, b}); }},
        {"mul", [&] { return max_gradient_error([&] { return projected(elementwise_mul(a, b)); }, {a, b}); }},
        {"scale", [&] { return max_gradient_error([&] { return projected(scale(a, -1.7)); }, {a}); }},
        {"relu", [&] { return max_gradient_error([&] { return projected(relu(r)); }, {r}); }},
        {"matmul", [&] { return max_gradient_error([&] { return projected(matmul(a, m)); }, {a, m}); }},
        {"transpose", [&] { return max_gradient_error([&] { return projected(transpose_last2(a)); }, {a}); }},
        {"linear", [&] { return max_gradient_error([&] { return projected(linear(a, m, Tensor())); }, {a, m}); }},
        {"softmax", [&] { return max_gradient_error([&] { return projected(softmax_lastdim(a)); }, {a}); }},
        {"layer_norm", [&] { return max_gradient_error([&] { return projected(layer_norm(a, gain, row)); }, {a, gain, row}); }},
        {"dwconv", [&] { return max_gradient_error([&] { return projected(depthwise_conv1d(a, kern, bias)); }, {a, kern, bias}); }},
        {"dwconv_causal", [&] { return max_gradient_error([&] { return projected(depthwise_conv1d(a, kern, bias, ConvPadding::Causal)); }, {a, kern, bias}); }},
        {"split", [&] {
           return max_gradient_error([&] {
             auto parts = split_lastdim(a, widths);
             Tensor acc = projected(parts[0], 5);
             for (std::size_t i = 1; i < parts.size(); ++i) acc = add(acc, projected(parts[i], 5 + i));
             return acc;
           }, {a});
         }},
        {"cross_entropy", [&] { return max_gradient_error([&] { return cross_entropy(a, targets, -1, 0.1); }, {a}); }},
    };
    for (const auto& [name, check] : checks) {
      const double err = check();
      EXPECT_LT(err, kGradTol) << name << " on shape " << shape_str(s);
      worst = std::max(worst, err);
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

}  // namespace
}  // namespace gncf
