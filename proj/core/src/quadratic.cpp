#include <Eigen/LU>
#include <Eigen/QR>
#include <stdexcept>

#include "gessl/hypergrad.hpp"
#include "gessl/rng.hpp"

namespace gessl {

namespace {

Tensor as_row(const Vector& v) { return Tensor::row_vector(std::span<const double>(v.data(), static_cast<std::size_t>(v.size()))); }

Tensor as_tensor(const Matrix& m) {
  std::vector<double> values(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) values[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return Tensor({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, std::move(values));
}

Vector as_vector(const Tensor& t) {
  Vector v(static_cast<Eigen::Index>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) v[static_cast<Eigen::Index>(i)] = t[i];
  return v;
}

using TensorObjective = std::function<Tensor(const Tensor& phi, const Tensor& theta)>;

Objective differentiate(TensorObjective fn) {
  return [fn = std::move(fn)](const Vector& phi, const Vector& theta) {
    DiffRecord record;
    const Tensor phi_t = record.track(as_row(phi));
    const Tensor theta_t = record.track(as_row(theta));
    const Tensor value = fn(phi_t, theta_t);
    ObjectiveValue out;
    out.value = value.item();
    if (value.tracked()) {
      const GradientMap grads = record.backward(value);
      out.grad_phi = as_vector(DiffRecord::gradient_of(grads, phi_t));
      out.grad_theta = as_vector(DiffRecord::gradient_of(grads, theta_t));
    } else {
      out.grad_phi = Vector::Zero(phi.size());
      out.grad_theta = Vector::Zero(theta.size());
    }
    return out;
  };
}

}  // namespace

Vector quadratic_oracle(const Matrix& A, const Vector& b, const Vector& c, const Vector& theta) {
  if (A.rows() != A.cols() || A.rows() != b.size() || b.size() != c.size() || c.size() != theta.size()) {
    throw std::invalid_argument("quadratic_oracle: dimension mismatch");
  }
  Eigen::FullPivLU<Matrix> lu(A);
  if (!lu.isInvertible()) throw std::invalid_argument("quadratic_oracle: A is singular");
  const Vector phi_star = theta - lu.solve(b);
  return phi_star - c;
}

BilevelProblem make_quadratic_problem(const QuadraticInstance& instance, int inner_steps, double inner_lr) {
  const Tensor A = as_tensor(instance.A);
  const Tensor b = as_row(instance.b);
  const Tensor c = as_row(instance.c);
  Objective inner = differentiate([A, b](const Tensor& phi, const Tensor& theta) {
    const Tensor diff = sub(phi, theta);
    const Tensor quad = matmul(matmul(diff, A), transpose(diff));
    return sum(add(scale(quad, 0.5), matmul(phi, transpose(b))));
  });
  Objective outer = differentiate([c](const Tensor& phi, const Tensor&) {
    const Tensor diff = sub(phi, c);
    return scale(sum(mul(diff, diff)), 0.5);
  });
  BilevelProblem problem(std::move(inner), std::move(outer));
  problem.inner_init = Vector::Zero(instance.b.size());
  problem.inner_steps = inner_steps;
  problem.inner_lr = inner_lr;
  return problem;
}

std::vector<QuadraticInstance> quadratic_family(std::size_t count, std::size_t max_dim, std::uint64_t seed,
                                                double eig_lo, double eig_hi) {
  if (max_dim < 2) throw std::invalid_argument("quadratic_family: max_dim must be >= 2");
  if (!(eig_lo > 0.0) || eig_hi < eig_lo) throw std::invalid_argument("quadratic_family: need 0 < eig_lo <= eig_hi");
  std::vector<QuadraticInstance> family;
  family.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = RngStream::derive(seed, StreamPurpose::bench, {i});
    const auto d = static_cast<Eigen::Index>(2 + rng.below(max_dim - 1));
    Matrix gaussian(d, d);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index k = 0; k < d; ++k) gaussian(r, k) = rng.normal();
    const Matrix q = Eigen::HouseholderQR<Matrix>(gaussian).householderQ();
    Vector lambda(d);
    for (Eigen::Index k = 0; k < d; ++k) lambda[k] = rng.uniform(eig_lo, eig_hi);

    QuadraticInstance inst;
    inst.A = q * lambda.asDiagonal() * q.transpose();
    inst.A = 0.5 * (inst.A + inst.A.transpose());
    inst.b = Vector(d);
    inst.c = Vector(d);
    inst.theta = Vector(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      inst.b[k] = rng.normal();
      inst.c[k] = rng.normal();
      inst.theta[k] = rng.normal();
    }
    inst.eig_min = lambda.minCoeff();
    inst.eig_max = lambda.maxCoeff();
    family.push_back(std::move(inst));
  }
  return family;
}

}  // namespace gessl
