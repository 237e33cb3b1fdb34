#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gessl/gradcheck_suite.hpp"
#include "gessl/rng.hpp"
#include "gessl/tensor.hpp"

using namespace gessl;

namespace {

Tensor random_matrix(RngStream& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor({r, c}, std::move(v));
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
  EXPECT_THROW(Tensor({0, 2}, {}), ShapeError);
  EXPECT_THROW(Tensor({1, 1, 1, 1, 1}, {1.0}), ShapeError);
  EXPECT_THROW(Tensor::matrix({{1.0, 2.0}, {3.0}}), ShapeError);
  const Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, MatmulIdentity) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(matmul(a, eye).values()[3], 4.0);
  const Tensor out = matmul(a, eye);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(out[i], a[i]);
}

TEST(Tensor, MatmulHandProduct) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5, 6}, {7, 8}});
  const Tensor out = matmul(a, b);
  EXPECT_EQ(out.at(0, 0), 19.0);
  EXPECT_EQ(out.at(0, 1), 22.0);
  EXPECT_EQ(out.at(1, 0), 43.0);
  EXPECT_EQ(out.at(1, 1), 50.0);
}

TEST(Tensor, SoftmaxExamples) {
  const Tensor uniform = softmax_rows(Tensor::matrix({{0, 0, 0}}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(uniform[j], 1.0 / 3.0, 1e-15);
  const Tensor ratio = softmax_rows(Tensor::matrix({{std::log(1.0), std::log(2.0), std::log(3.0)}}));
  EXPECT_NEAR(ratio[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(ratio[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(ratio[2], 3.0 / 6.0, 1e-15);
}

TEST(Tensor, SoftmaxRowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng = RngStream::derive(seed, StreamPurpose::bench, {1});
    const Tensor x = random_matrix(rng, 4, 5, -30.0, 30.0);
    const Tensor y = softmax_rows(x);
    const Tensor shifted = softmax_rows(scale(x, 1.0, rng.uniform(-100.0, 100.0)));
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        EXPECT_NEAR(y.at(r, c), shifted.at(r, c), 1e-12);
        total += y.at(r, c);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Tensor, SoftmaxLargeLogitsStayFinite) {
  const Tensor y = softmax_rows(Tensor::matrix({{1000.0, 0.0, -1000.0}}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[2], 0.0);
}

TEST(Tensor, L2NormalizeRows) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng = RngStream::derive(seed, StreamPurpose::bench, {2});
    const Tensor y = l2_normalize_rows(random_matrix(rng, 3, 6));
    for (std::size_t r = 0; r < 3; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < 6; ++c) sq += y.at(r, c) * y.at(r, c);
      EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-12);
    }
  }
}

TEST(Tensor, L2NormalizeNearZeroRowUnchangedWithIdentityGradient) {
  DiffRecord record;
  const Tensor x = record.track(Tensor::matrix({{1e-14, -2e-14}, {3.0, 4.0}}));
  const Tensor y = l2_normalize_rows(x);
  EXPECT_EQ(y.at(0, 0), 1e-14);
  EXPECT_EQ(y.at(0, 1), -2e-14);
  EXPECT_NEAR(y.at(1, 0), 0.6, 1e-15);
  const Tensor w = Tensor::matrix({{2.0, 3.0}, {0.0, 0.0}});
  const GradientMap g = record.backward(sum(mul(y, w)));
  const Tensor& gx = DiffRecord::gradient_of(g, x);
  EXPECT_EQ(gx.at(0, 0), 2.0);
  EXPECT_EQ(gx.at(0, 1), 3.0);
}

TEST(Tensor, BroadcastRowOperand) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{10, 20}});
  const Tensor s = add(a, b);
  EXPECT_EQ(s.at(1, 1), 24.0);
  EXPECT_THROW(add(b, a), ShapeError);
  EXPECT_THROW(add(a, Tensor::matrix({{1, 2, 3}})), ShapeError);
}

TEST(Tensor, ShapeErrorsNameOpAndShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("2x3"), std::string::npos);
  }
}

TEST(Tensor, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(log(Tensor::matrix({{1.0, 0.0}})), DomainError);
  EXPECT_THROW(log(Tensor::matrix({{-1.0}})), DomainError);
}

TEST(Tensor, ReluSubgradientAtZeroIsZero) {
  DiffRecord record;
  const Tensor x = record.track(Tensor::matrix({{-1.0, 0.0, 2.0}}));
  const GradientMap g = record.backward(sum(relu(x)));
  const Tensor& gx = DiffRecord::gradient_of(g, x);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_EQ(gx[1], 0.0);
  EXPECT_EQ(gx[2], 1.0);
}

TEST(Backward, SumOfSquares) {
  DiffRecord record;
  const Tensor x = record.track(Tensor::matrix({{1, 2, 3}}));
  const GradientMap g = record.backward(sum(mul(x, x)));
  const Tensor& gx = DiffRecord::gradient_of(g, x);
  EXPECT_EQ(gx[0], 2.0);
  EXPECT_EQ(gx[1], 4.0);
  EXPECT_EQ(gx[2], 6.0);
}

TEST(Backward, SoftmaxCrossEntropyGivesPMinusY) {
  RngStream rng = RngStream::derive(3, StreamPurpose::bench, {3});
  const Tensor logits_value = random_matrix(rng, 1, 5, -2.0, 2.0);
  const Tensor y = Tensor::matrix({{0, 0, 1, 0, 0}});
  DiffRecord record;
  const Tensor logits = record.track(logits_value);
  const Tensor p = softmax_rows(logits);
  const Tensor loss = scale(sum(mul(y, log(p))), -1.0);
  const GradientMap grads = record.backward(loss);
  const Tensor& g = DiffRecord::gradient_of(grads, logits);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(g[j], p[j] - y[j], 1e-14);

  const double err = grad_check(
      [&](const Tensor& v) { return scale(sum(mul(y, log(softmax_rows(v)))), -1.0); }, logits_value);
  EXPECT_LE(err, 1e-6);
}

TEST(Backward, MatmulAgainstFiniteDifferences) {
  RngStream rng = RngStream::derive(4, StreamPurpose::bench, {4});
  const Tensor w = random_matrix(rng, 3, 4);
  const Tensor v = random_matrix(rng, 4, 1, 0.5, 1.5);
  EXPECT_LE(grad_check([&](const Tensor& x) { return sum(matmul(x, v)); }, w), 1e-6);
  // Gradient of sum(W v) is the outer product 1 v^T.
  DiffRecord record;
  const Tensor tw = record.track(w);
  const GradientMap grads = record.backward(sum(matmul(tw, v)));
  const Tensor& g = DiffRecord::gradient_of(grads, tw);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(g.at(r, c), v[c]);
}

TEST(Backward, UntouchedLeavesGetZeros) {
  DiffRecord record;
  const Tensor a = record.track(Tensor::matrix({{1, 2}}));
  const Tensor b = record.track(Tensor::matrix({{3}, {4}, {5}}));
  const GradientMap g = record.backward(sum(a));
  const Tensor& gb = DiffRecord::gradient_of(g, b);
  EXPECT_EQ(gb.shape(), b.shape());
  for (double v : gb.values()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RejectsNonScalarAndForeignOutputs) {
  DiffRecord record;
  const Tensor a = record.track(Tensor::matrix({{1, 2}}));
  EXPECT_THROW(record.backward(mul(a, a)), ShapeError);
  DiffRecord other;
  const Tensor b = other.track(Tensor::matrix({{1.0}}));
  EXPECT_THROW(record.backward(sum(b)), std::invalid_argument);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  DiffRecord record;
  const Tensor x = record.track(Tensor::matrix({{3.0}}));
  const Tensor y = mul(x, x);
  const Tensor z = add(y, y);  // 2 x^2
  EXPECT_EQ(DiffRecord::gradient_of(record.backward(sum(z)), x)[0], 12.0);
}

TEST(Backward, VisitsEachNodeOnce) {
  // A long chain: gradient of sum(x * 1.0001^n) is exact if every node is
  // visited once; double visits would square the factors.
  DiffRecord record;
  const Tensor x = record.track(Tensor::matrix({{1.0}}));
  Tensor y = x;
  for (int i = 0; i < 200; ++i) y = scale(y, 1.0001);
  const double g = DiffRecord::gradient_of(record.backward(sum(y)), x)[0];
  EXPECT_NEAR(g, std::pow(1.0001, 200), 1e-12);
  EXPECT_EQ(record.size(), 202u);
}

TEST(Tensor, TrackedTensorsAreNotMutable) {
  DiffRecord record;
  Tensor x = record.track(Tensor::matrix({{1.0}}));
  EXPECT_THROW(x.mutable_values(), std::logic_error);
  Tensor d = x.detach();
  EXPECT_FALSE(d.tracked());
  d.mutable_values()[0] = 2.0;
  EXPECT_EQ(x[0], 1.0);
}

TEST(GradCheck, Examples) {
  RngStream rng = RngStream::derive(5, StreamPurpose::bench, {5});
  const Tensor p = random_matrix(rng, 3, 3, -5.0, 5.0);
  EXPECT_LE(grad_check([](const Tensor& x) { return sum(mul(x, x)); }, p), 1e-6);
  EXPECT_EQ(grad_check([](const Tensor&) { return Tensor::scalar(4.0); }, p), 0.0);
  EXPECT_LE(grad_check([](const Tensor& x) { return sum(exp(x)); }, Tensor::zeros({2, 3})), 1e-6);
}

TEST(GradCheck, Errors) {
  const Tensor p = Tensor::matrix({{1.0, 2.0}});
  EXPECT_THROW(grad_check([](const Tensor& x) { return x; }, p), ShapeError);
  EXPECT_THROW(grad_check([](const Tensor& x) { return sum(x); }, p, 0.0), std::invalid_argument);
}

TEST(GradCheck, EveryOpAtHundredSeededPoints) {
  const auto results = run_gradcheck_suite(100, 11);
  std::set<std::string> ops;
  for (const auto& r : results) {
    EXPECT_EQ(r.points, 100u);
    EXPECT_LE(r.max_error, 1e-6) << r.name;
    ops.insert(r.name.substr(0, r.name.find('.')));
  }
  for (int k = static_cast<int>(OpKind::add); k <= static_cast<int>(OpKind::clamp_min); ++k) {
    EXPECT_TRUE(ops.count(op_name(static_cast<OpKind>(k)))) << op_name(static_cast<OpKind>(k));
  }
}

TEST(GradCheck, CompositeChainsAwayFromKinks) {
  RngStream rng = RngStream::derive(6, StreamPurpose::bench, {6});
  const Tensor w1 = random_matrix(rng, 4, 3);
  const Tensor target = softmax_rows(random_matrix(rng, 5, 3));
  const Tensor x = random_matrix(rng, 5, 4);
  auto fn = [&](const Tensor& w) {
    const Tensor h = l2_normalize_rows(matmul(x, w));
    const Tensor p = softmax_rows(scale(h, 5.0));
    return sum(mul(target, log(clamp_min(p, 1e-12))));
  };
  EXPECT_LE(grad_check(fn, w1), 1e-6);
}
