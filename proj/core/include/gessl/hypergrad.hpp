#pragma once

// Hypergradient strategies for min_theta F(phi*(theta), theta) with
// phi*(theta) ~ argmin_phi L(phi, theta).
//
// Second-order quantities are never formed: Hessian-vector products and the
// mixed term (d^2 L / d theta d phi) v are central differences of first-order
// gradients, so only the first-order differentiation core is required.

#include <Eigen/Core>
#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "gessl/models.hpp"

namespace gessl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ObjectiveValue {
  double value = 0.0;
  Vector grad_phi;
  Vector grad_theta;
};

using Objective = std::function<ObjectiveValue(const Vector& phi, const Vector& theta)>;

class BilevelProblem {
 public:
  BilevelProblem(Objective inner, Objective outer);

  /// Inner (lower-level) loss and its gradients; counted.
  ObjectiveValue inner(const Vector& phi, const Vector& theta) const;
  /// Outer (upper-level) loss and its gradients; counted.
  ObjectiveValue outer(const Vector& phi, const Vector& theta) const;

  /// Starting point of the inner descent. Ignored when init_from_theta is set.
  Vector inner_init;
  /// Start the inner descent at theta itself (MAML-style initialization).
  bool init_from_theta = false;
  int inner_steps = 10;
  double inner_lr = 0.1;

  /// Plain gradient descent on the inner loss; returns every iterate
  /// phi_0 .. phi_T.
  std::vector<Vector> unroll_inner(const Vector& theta) const;
  Vector solve_inner(const Vector& theta) const { return unroll_inner(theta).back(); }

  std::size_t inner_evaluations() const noexcept { return counters_->inner; }
  std::size_t outer_evaluations() const noexcept { return counters_->outer; }
  void reset_counters() const noexcept { *counters_ = {}; }

 private:
  struct Counters {
    std::size_t inner = 0;
    std::size_t outer = 0;
  };
  Objective inner_;
  Objective outer_;
  std::shared_ptr<Counters> counters_;
};

/// Hessian-vector product of the inner loss in phi:
/// [grad_phi L(phi + r v) - grad_phi L(phi - r v)] / (2 r),
/// r = 1e-4 (1 + |phi|) / (1 + |v|).
Vector hvp(const BilevelProblem& problem, const Vector& phi, const Vector& theta, const Vector& v);

/// Mixed product (d^2 L / d theta d phi) v from the same kind of central
/// difference of grad_theta L.
Vector cross_product(const BilevelProblem& problem, const Vector& phi, const Vector& theta, const Vector& v);

struct HypergradResult {
  Vector gradient;
  std::size_t inner_evaluations = 0;
  std::size_t outer_evaluations = 0;
  int iterations = 0;
  std::vector<double> residuals;  // conjugate gradient only
};

inline constexpr int kMaxUnrolledSteps = 20;

/// Differentiates through the explicitly unrolled inner descent by reverse
/// accumulation over the stored iterates.
HypergradResult hypergrad_itd(const BilevelProblem& problem, const Vector& theta);

/// Implicit hypergradient with the inverse Hessian applied by a truncated
/// Neumann series eta * sum_{k<terms} (I - eta H)^k.
HypergradResult hypergrad_aid_neumann(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                      int terms, double eta);

/// Implicit hypergradient with H v = grad_phi F solved by conjugate gradients.
HypergradResult hypergrad_aid_cg(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                 int iters, double tol);

/// Finite-difference implicit hypergradient:
/// dF/dtheta - s * [grad_theta L(phi* + eps v) - grad_theta L(phi* - eps v)] / (2 eps)
/// with v = grad_phi F and eps = epsilon_rel / (1 + |v|). `inverse_hessian_scale`
/// (s) stands in for the inverse inner Hessian; 1 reproduces the textbook form.
HypergradResult hypergrad_aid_fd(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                 double epsilon_rel, double inverse_hessian_scale = 1.0);

/// First-order direction dF/dtheta + grad_phi F (identity response Jacobian);
/// the inner-loop direction used by the Lookahead strategy.
HypergradResult hypergrad_first_order(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star);

/// slow + alpha (fast - slow).
ParameterSet lookahead_update(const ParameterSet& slow, const ParameterSet& fast, double alpha_la);
Vector lookahead_update(const Vector& slow, const Vector& fast, double alpha_la);

// ---- strategy selection ----

struct ItdUnrolled {};
struct AidNeumann {
  int terms = 5;
  double eta = 1.0;
};
struct AidCg {
  int iters = 5;
  double tol = 1e-10;
};
struct AidFd {
  double epsilon_rel = 1e-3;
};
struct Lookahead {
  double alpha_la = 0.5;
  int sync_period = 5;
};

using HypergradKind = std::variant<ItdUnrolled, AidNeumann, AidCg, AidFd, Lookahead>;

std::string hypergrad_name(const HypergradKind& kind);
void validate_hypergrad(const HypergradKind& kind);

// ---- closed-form oracle ----

/// L = 1/2 (phi - theta)^T A (phi - theta) + b^T phi, F = 1/2 |phi - c|^2.
struct QuadraticInstance {
  Matrix A;
  Vector b;
  Vector c;
  Vector theta;
  double eig_min = 1.0;
  double eig_max = 1.0;
};

/// Exact dF/dtheta = phi*(theta) - c with phi* = theta - A^{-1} b by direct
/// solve. Throws if A is singular.
Vector quadratic_oracle(const Matrix& A, const Vector& b, const Vector& c, const Vector& theta);

/// Builds the bilevel problem for an instance, with both objectives evaluated
/// through the differentiation core. Inner descent starts at zero.
BilevelProblem make_quadratic_problem(const QuadraticInstance& instance, int inner_steps, double inner_lr);

/// Seeded SPD family: dims uniform in [2, max_dim], A = Q diag(lambda) Q^T
/// with lambda ~ U[eig_lo, eig_hi] and Haar-ish Q from a QR factorization.
std::vector<QuadraticInstance> quadratic_family(std::size_t count, std::size_t max_dim, std::uint64_t seed,
                                                double eig_lo = 1.0, double eig_hi = 2.0);

double relative_error(const Vector& estimate, const Vector& exact);

}  // namespace gessl
