#include "gessl/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "gessl/rng.hpp"
#include "gessl/tensor.hpp"

namespace gessl {

namespace {

enum class Draw { signed_unit, magnitude, positive, away_from_zero };

Tensor random_tensor(RngStream& rng, std::size_t rows, std::size_t cols, Draw draw) {
  std::vector<double> v(rows * cols);
  for (double& x : v) {
    switch (draw) {
      case Draw::signed_unit: x = rng.uniform(-1.0, 1.0); break;
      case Draw::magnitude: x = rng.uniform(0.5, 1.5); break;
      case Draw::positive: x = rng.uniform(0.5, 2.0); break;
      case Draw::away_from_zero: x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.5); break;
    }
  }
  return Tensor({rows, cols}, std::move(v));
}

// Weighted sum with positive weights, so coordinates rarely cancel to zero.
Tensor weighted(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

struct Case {
  std::string name;
  // Builds the checked function and its point from a per-point stream.
  std::function<std::pair<ScalarFunction, Tensor>(RngStream&)> build;
};

std::size_t dim(RngStream& rng) { return 2 + static_cast<std::size_t>(rng.below(3)); }

std::vector<Case> cases() {
  std::vector<Case> out;
  auto unary = [&out](std::string name, Draw draw, std::function<Tensor(const Tensor&)> op) {
    out.push_back({std::move(name), [draw, op](RngStream& rng) {
                     const std::size_t r = dim(rng), c = dim(rng);
                     Tensor x = random_tensor(rng, r, c, draw);
                     const Tensor probe = op(x);
                     const Tensor w = random_tensor(rng, probe.rows(), probe.cols(), Draw::magnitude);
                     return std::pair<ScalarFunction, Tensor>{[op, w](const Tensor& v) { return weighted(op(v), w); },
                                                              x};
                   }});
  };
  auto binary = [&out](std::string name, bool broadcast, Draw other_draw,
                       std::function<Tensor(const Tensor&, const Tensor&)> op) {
    for (int side = 0; side < 2; ++side) {
      out.push_back({name + (side == 0 ? ".lhs" : ".rhs"), [=](RngStream& rng) {
                       const std::size_t r = dim(rng), c = dim(rng);
                       const Tensor a = random_tensor(rng, r, c, side == 0 ? Draw::signed_unit : other_draw);
                       const Tensor b = random_tensor(rng, broadcast ? 1 : r, c, side == 1 ? Draw::signed_unit : other_draw);
                       const Tensor w = random_tensor(rng, r, c, Draw::magnitude);
                       if (side == 0) {
                         return std::pair<ScalarFunction, Tensor>{
                             [op, b, w](const Tensor& v) { return weighted(op(v, b), w); }, a};
                       }
                       return std::pair<ScalarFunction, Tensor>{
                           [op, a, w](const Tensor& v) { return weighted(op(a, v), w); }, b};
                     }});
    }
  };

  binary("add", false, Draw::signed_unit, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("add.broadcast", true, Draw::signed_unit, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", false, Draw::signed_unit, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("sub.broadcast", true, Draw::signed_unit, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", false, Draw::away_from_zero, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("mul.broadcast", true, Draw::magnitude, [](const Tensor& a, const Tensor& b) { return mul(a, b); });

  for (int side = 0; side < 2; ++side) {
    out.push_back({side == 0 ? "matmul.lhs" : "matmul.rhs", [side](RngStream& rng) {
                     const std::size_t r = dim(rng), k = dim(rng), c = dim(rng);
                     const Tensor a = random_tensor(rng, r, k, side == 0 ? Draw::signed_unit : Draw::magnitude);
                     const Tensor b = random_tensor(rng, k, c, side == 1 ? Draw::signed_unit : Draw::magnitude);
                     const Tensor w = random_tensor(rng, r, c, Draw::magnitude);
                     if (side == 0) {
                       return std::pair<ScalarFunction, Tensor>{
                           [b, w](const Tensor& v) { return weighted(matmul(v, b), w); }, a};
                     }
                     return std::pair<ScalarFunction, Tensor>{[a, w](const Tensor& v) { return weighted(matmul(a, v), w); },
                                                              b};
                   }});
  }

  out.push_back({"scale", [](RngStream& rng) {
                   const std::size_t r = dim(rng), c = dim(rng);
                   const Tensor x = random_tensor(rng, r, c, Draw::signed_unit);
                   const double factor = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.5, 2.0);
                   const double shift = rng.uniform(-1.0, 1.0);
                   const Tensor w = random_tensor(rng, r, c, Draw::magnitude);
                   return std::pair<ScalarFunction, Tensor>{
                       [=](const Tensor& v) { return weighted(scale(v, factor, shift), w); }, x};
                 }});
  unary("transpose", Draw::signed_unit, [](const Tensor& x) { return transpose(x); });
  unary("relu", Draw::away_from_zero, [](const Tensor& x) { return relu(x); });
  unary("exp", Draw::signed_unit, [](const Tensor& x) { return exp(x); });
  unary("log", Draw::positive, [](const Tensor& x) { return log(x); });
  // Row-coupled ops: dense weights let single coordinates cancel to zero, a
  // one-hot weight per row does not.
  auto row_coupled = [&out](std::string name, Draw draw, std::function<Tensor(const Tensor&)> op) {
    out.push_back({std::move(name), [draw, op](RngStream& rng) {
                     const std::size_t r = dim(rng), c = dim(rng);
                     const Tensor x = random_tensor(rng, r, c, draw);
                     Tensor w = Tensor::zeros({r, c});
                     for (std::size_t i = 0; i < r; ++i) w.mutable_values()[i * c + rng.below(c)] = rng.uniform(0.5, 1.5);
                     return std::pair<ScalarFunction, Tensor>{[op, w](const Tensor& v) { return weighted(op(v), w); },
                                                              x};
                   }});
  };
  row_coupled("l2_normalize_rows", Draw::away_from_zero, [](const Tensor& x) { return l2_normalize_rows(x); });
  row_coupled("softmax_rows", Draw::signed_unit, [](const Tensor& x) { return softmax_rows(x); });
  unary("clamp_min", Draw::away_from_zero, [](const Tensor& x) { return clamp_min(x, 0.0); });

  out.push_back({"sum", [](RngStream& rng) {
                   const Tensor x = random_tensor(rng, dim(rng), dim(rng), Draw::signed_unit);
                   return std::pair<ScalarFunction, Tensor>{[](const Tensor& v) { return sum(v); }, x};
                 }});
  out.push_back({"mean", [](RngStream& rng) {
                   const Tensor x = random_tensor(rng, dim(rng), dim(rng), Draw::signed_unit);
                   return std::pair<ScalarFunction, Tensor>{[](const Tensor& v) { return mean(v); }, x};
                 }});
  for (int part = 0; part < 2; ++part) {
    out.push_back({part == 0 ? "concat_rows.first" : "concat_rows.second", [part](RngStream& rng) {
                     const std::size_t c = dim(rng);
                     const Tensor a = random_tensor(rng, dim(rng), c, Draw::signed_unit);
                     const Tensor b = random_tensor(rng, dim(rng), c, Draw::signed_unit);
                     const Tensor w = random_tensor(rng, a.rows() + b.rows(), c, Draw::magnitude);
                     if (part == 0) {
                       return std::pair<ScalarFunction, Tensor>{
                           [b, w](const Tensor& v) {
                             const Tensor parts[] = {v, b};
                             return weighted(concat_rows(parts), w);
                           },
                           a};
                     }
                     return std::pair<ScalarFunction, Tensor>{[a, w](const Tensor& v) {
                                                                const Tensor parts[] = {a, v};
                                                                return weighted(concat_rows(parts), w);
                                                              },
                                                              b};
                   }});
  }
  return out;
}

}  // namespace

std::vector<OpCheckResult> run_gradcheck_suite(std::size_t points, std::uint64_t seed, double h) {
  std::vector<OpCheckResult> results;
  const std::vector<Case> all = cases();
  for (std::size_t c = 0; c < all.size(); ++c) {
    OpCheckResult row{all[c].name, points, 0.0};
    for (std::size_t p = 0; p < points; ++p) {
      RngStream rng = RngStream::derive(seed, StreamPurpose::bench, {c, p});
      auto [fn, point] = all[c].build(rng);
      row.max_error = std::max(row.max_error, grad_check(fn, point, h));
    }
    results.push_back(std::move(row));
  }
  return results;
}

}  // namespace gessl
