#include "gessl/losses.hpp"

#include <stdexcept>
#include <vector>

namespace gessl {

namespace {

constexpr double kMaskedLogit = -1e30;
constexpr double kStandardizeEps = 1e-9;

Tensor ones(std::size_t r, std::size_t c) { return Tensor::full({r, c}, 1.0); }

Tensor row_dot(const Tensor& a, const Tensor& b) { return matmul(mul(a, b), ones(a.cols(), 1)); }

Tensor standardize_columns(const Tensor& z) {
  const std::size_t n = z.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Tensor column_mean = scale(matmul(ones(1, n), z), inv_n);
  const Tensor centered = sub(z, column_mean);
  const Tensor variance = scale(matmul(ones(1, n), mul(centered, centered)), inv_n);
  const Tensor inv_std = exp(scale(log(scale(variance, 1.0, kStandardizeEps)), -0.5));
  return mul(centered, inv_std);
}

// Rows `view` of every pseudo-class, in class order.
Tensor select_view(const Tensor& z, const TaskBatch& task, std::size_t view) {
  Tensor selector = Tensor::zeros({task.N, task.N * task.A});
  auto s = selector.mutable_values();
  for (std::size_t i = 0; i < task.N; ++i) s[i * task.N * task.A + i * task.A + view] = 1.0;
  return matmul(selector, z);
}

}  // namespace

std::string loss_name(const LossKind& kind) {
  if (std::holds_alternative<ContrastiveNtXent>(kind)) return "ntxent";
  if (std::holds_alternative<RedundancyBarlow>(kind)) return "barlow";
  return "align";
}

void validate_loss(const LossKind& kind) {
  if (const auto* c = std::get_if<ContrastiveNtXent>(&kind); c && !(c->tau > 0.0)) {
    throw std::invalid_argument("ntxent: tau must be positive");
  }
  if (const auto* b = std::get_if<RedundancyBarlow>(&kind); b && b->lambda_offdiag < 0.0) {
    throw std::invalid_argument("barlow: lambda_offdiag must be >= 0");
  }
}

Tensor nt_xent(const Tensor& projections, std::span<const int> pseudo_labels, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("nt_xent: tau must be positive");
  if (projections.rank() != 2 || projections.rows() != pseudo_labels.size()) {
    throw ShapeError("nt_xent: projections " + shape_string(projections.shape()) + " vs " +
                     std::to_string(pseudo_labels.size()) + " labels");
  }
  const std::size_t n = pseudo_labels.size();
  std::vector<std::size_t> partner(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    std::size_t matches = 0;
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a || pseudo_labels[b] != pseudo_labels[a]) continue;
      partner[a] = b;
      ++matches;
    }
    if (matches != 1) throw std::invalid_argument("nt_xent: requires exactly two views per pseudo-class (A=2)");
  }

  Tensor diagonal = Tensor::zeros({n, n});
  Tensor positive = Tensor::zeros({n, n});
  {
    auto d = diagonal.mutable_values();
    auto p = positive.mutable_values();
    for (std::size_t a = 0; a < n; ++a) {
      d[a * n + a] = kMaskedLogit;
      p[a * n + partner[a]] = 1.0;
    }
  }
  const Tensor logits = add(scale(matmul(projections, transpose(projections)), 1.0 / tau), diagonal);
  const Tensor probs = softmax_rows(logits);
  const Tensor positive_prob = matmul(mul(probs, positive), ones(n, 1));
  return scale(mean(log(clamp_min(positive_prob, 1e-300))), -1.0);
}

Tensor barlow(const Tensor& za, const Tensor& zb, double lambda_offdiag) {
  if (za.rank() != 2 || za.shape() != zb.shape()) {
    throw ShapeError("barlow: shape mismatch " + shape_string(za.shape()) + " vs " + shape_string(zb.shape()));
  }
  if (za.rows() < 2) throw std::invalid_argument("barlow: needs at least 2 rows");
  const std::size_t n = za.rows();
  const std::size_t p = za.cols();
  const Tensor correlation = scale(matmul(transpose(standardize_columns(za)), standardize_columns(zb)),
                                   1.0 / static_cast<double>(n));
  Tensor identity = Tensor::zeros({p, p});
  Tensor weights = Tensor::full({p, p}, lambda_offdiag);
  {
    auto id = identity.mutable_values();
    auto w = weights.mutable_values();
    for (std::size_t i = 0; i < p; ++i) {
      id[i * p + i] = 1.0;
      w[i * p + i] = 1.0;
    }
  }
  const Tensor deviation = sub(correlation, identity);
  return sum(mul(mul(deviation, deviation), weights));
}

Tensor align_cosine(const Tensor& za, const Tensor& zb) {
  if (za.rank() != 2 || za.shape() != zb.shape()) {
    throw ShapeError("align_cosine: shape mismatch " + shape_string(za.shape()) + " vs " + shape_string(zb.shape()));
  }
  return scale(mean(row_dot(l2_normalize_rows(za), l2_normalize_rows(zb))), -1.0);
}

Tensor ssl_loss(const ParameterSet& params, const TaskBatch& task, const LossKind& kind) {
  const Tensor z = project(params, encode(params, task.views));
  if (const auto* c = std::get_if<ContrastiveNtXent>(&kind)) {
    return nt_xent(z, task.pseudo_labels, c->tau);
  }
  const Tensor za = select_view(z, task, 0);
  const Tensor zb = select_view(z, task, 1);
  if (const auto* b = std::get_if<RedundancyBarlow>(&kind)) {
    return barlow(za, zb, b->lambda_offdiag);
  }
  // Symmetrized stop-gradient alignment.
  const Tensor forward_term = align_cosine(za, zb.detach());
  const Tensor backward_term = align_cosine(zb, za.detach());
  return scale(add(forward_term, backward_term), 0.5);
}

}  // namespace gessl
