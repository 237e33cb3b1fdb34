#include "gessl/hypergrad.hpp"

#include <cmath>
#include <stdexcept>

namespace gessl {

namespace {

double perturbation_radius(const Vector& phi, const Vector& v) {
  return 1e-4 * (1.0 + phi.norm()) / (1.0 + v.norm());
}

struct SecondOrder {
  Vector hessian_v;
  Vector cross_v;
};

// Both products from one pair of perturbed inner evaluations.
SecondOrder second_order(const BilevelProblem& problem, const Vector& phi, const Vector& theta, const Vector& v) {
  if (v.isZero(0.0)) return {Vector::Zero(phi.size()), Vector::Zero(theta.size())};
  const double r = perturbation_radius(phi, v);
  const ObjectiveValue plus = problem.inner(phi + r * v, theta);
  const ObjectiveValue minus = problem.inner(phi - r * v, theta);
  return {(plus.grad_phi - minus.grad_phi) / (2.0 * r), (plus.grad_theta - minus.grad_theta) / (2.0 * r)};
}

void stamp_counts(const BilevelProblem& problem, HypergradResult& result, std::size_t inner0, std::size_t outer0) {
  result.inner_evaluations = problem.inner_evaluations() - inner0;
  result.outer_evaluations = problem.outer_evaluations() - outer0;
}

}  // namespace

BilevelProblem::BilevelProblem(Objective inner, Objective outer)
    : inner_(std::move(inner)), outer_(std::move(outer)), counters_(std::make_shared<Counters>()) {}

ObjectiveValue BilevelProblem::inner(const Vector& phi, const Vector& theta) const {
  ++counters_->inner;
  return inner_(phi, theta);
}

ObjectiveValue BilevelProblem::outer(const Vector& phi, const Vector& theta) const {
  ++counters_->outer;
  return outer_(phi, theta);
}

std::vector<Vector> BilevelProblem::unroll_inner(const Vector& theta) const {
  if (inner_steps < 0) throw std::invalid_argument("inner_steps must be >= 0");
  std::vector<Vector> iterates;
  iterates.reserve(static_cast<std::size_t>(inner_steps) + 1);
  iterates.push_back(init_from_theta ? theta : inner_init);
  for (int k = 0; k < inner_steps; ++k) {
    const ObjectiveValue step = inner(iterates.back(), theta);
    iterates.push_back(iterates.back() - inner_lr * step.grad_phi);
  }
  return iterates;
}

Vector hvp(const BilevelProblem& problem, const Vector& phi, const Vector& theta, const Vector& v) {
  return second_order(problem, phi, theta, v).hessian_v;
}

Vector cross_product(const BilevelProblem& problem, const Vector& phi, const Vector& theta, const Vector& v) {
  return second_order(problem, phi, theta, v).cross_v;
}

HypergradResult hypergrad_itd(const BilevelProblem& problem, const Vector& theta) {
  if (problem.inner_steps > kMaxUnrolledSteps) {
    throw std::invalid_argument("hypergrad_itd: at most " + std::to_string(kMaxUnrolledSteps) +
                                " unrolled inner steps are supported");
  }
  const std::size_t inner0 = problem.inner_evaluations();
  const std::size_t outer0 = problem.outer_evaluations();

  const std::vector<Vector> iterates = problem.unroll_inner(theta);
  const ObjectiveValue top = problem.outer(iterates.back(), theta);
  Vector adjoint = top.grad_phi;
  Vector total = top.grad_theta;
  for (std::size_t k = iterates.size() - 1; k-- > 0;) {
    const SecondOrder products = second_order(problem, iterates[k], theta, adjoint);
    total -= problem.inner_lr * products.cross_v;
    adjoint -= problem.inner_lr * products.hessian_v;
  }
  if (problem.init_from_theta) total += adjoint;

  HypergradResult result;
  result.gradient = std::move(total);
  result.iterations = problem.inner_steps;
  stamp_counts(problem, result, inner0, outer0);
  return result;
}

HypergradResult hypergrad_aid_neumann(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                      int terms, double eta) {
  if (terms < 1) throw std::invalid_argument("aid_neumann: terms must be >= 1");
  if (!(eta > 0.0)) throw std::invalid_argument("aid_neumann: eta must be positive");
  const std::size_t inner0 = problem.inner_evaluations();
  const std::size_t outer0 = problem.outer_evaluations();

  const ObjectiveValue top = problem.outer(phi_star, theta);
  Vector power = top.grad_phi;
  Vector accumulated = power;
  for (int k = 1; k < terms; ++k) {
    power -= eta * hvp(problem, phi_star, theta, power);
    accumulated += power;
  }
  const Vector solved = eta * accumulated;

  HypergradResult result;
  result.gradient = top.grad_theta - cross_product(problem, phi_star, theta, solved);
  result.iterations = terms;
  stamp_counts(problem, result, inner0, outer0);
  return result;
}

HypergradResult hypergrad_aid_cg(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                 int iters, double tol) {
  if (iters < 1) throw std::invalid_argument("aid_cg: iters must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("aid_cg: tol must be positive");
  const std::size_t inner0 = problem.inner_evaluations();
  const std::size_t outer0 = problem.outer_evaluations();

  const ObjectiveValue top = problem.outer(phi_star, theta);
  HypergradResult result;
  Vector x = Vector::Zero(phi_star.size());
  Vector residual = top.grad_phi;
  Vector direction = residual;
  double rr = residual.squaredNorm();
  result.residuals.push_back(std::sqrt(rr));
  int it = 0;
  while (it < iters && std::sqrt(rr) > tol) {
    const Vector hd = hvp(problem, phi_star, theta, direction);
    const double curvature = direction.dot(hd);
    if (!std::isfinite(curvature) || curvature <= 0.0) {
      throw std::runtime_error("aid_cg: inner Hessian is not positive definite along the search direction");
    }
    const double step = rr / curvature;
    x += step * direction;
    residual -= step * hd;
    const double rr_next = residual.squaredNorm();
    if (!std::isfinite(rr_next)) throw std::runtime_error("aid_cg: non-finite residual");
    direction = residual + (rr_next / rr) * direction;
    rr = rr_next;
    result.residuals.push_back(std::sqrt(rr));
    ++it;
  }
  result.iterations = it;
  result.gradient = top.grad_theta - cross_product(problem, phi_star, theta, x);
  stamp_counts(problem, result, inner0, outer0);
  return result;
}

HypergradResult hypergrad_aid_fd(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star,
                                 double epsilon_rel, double inverse_hessian_scale) {
  if (!(epsilon_rel > 0.0)) throw std::invalid_argument("aid_fd: epsilon_rel must be positive");
  const std::size_t inner0 = problem.inner_evaluations();
  const std::size_t outer0 = problem.outer_evaluations();

  const ObjectiveValue top = problem.outer(phi_star, theta);
  const Vector& v = top.grad_phi;
  const double v_norm = v.norm();
  if (!std::isfinite(v_norm)) throw std::runtime_error("aid_fd: outer gradient is not finite");

  HypergradResult result;
  result.gradient = top.grad_theta;
  if (v_norm > 0.0) {
    const double eps = epsilon_rel / (1.0 + v_norm);
    const ObjectiveValue plus = problem.inner(phi_star + eps * v, theta);
    const ObjectiveValue minus = problem.inner(phi_star - eps * v, theta);
    result.gradient -= inverse_hessian_scale * (plus.grad_theta - minus.grad_theta) / (2.0 * eps);
  }
  result.iterations = 1;
  stamp_counts(problem, result, inner0, outer0);
  return result;
}

HypergradResult hypergrad_first_order(const BilevelProblem& problem, const Vector& theta, const Vector& phi_star) {
  const std::size_t inner0 = problem.inner_evaluations();
  const std::size_t outer0 = problem.outer_evaluations();
  const ObjectiveValue top = problem.outer(phi_star, theta);
  HypergradResult result;
  result.gradient = top.grad_theta + top.grad_phi;
  result.iterations = 1;
  stamp_counts(problem, result, inner0, outer0);
  return result;
}

ParameterSet lookahead_update(const ParameterSet& slow, const ParameterSet& fast, double alpha_la) {
  if (!slow.same_layout(fast)) throw std::invalid_argument("lookahead_update: slow and fast weights differ in layout");
  ParameterSet out;
  for (std::size_t i = 0; i < slow.size(); ++i) {
    const auto s = slow[i].value.values();
    const auto f = fast[i].value.values();
    std::vector<double> next(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) next[k] = s[k] + alpha_la * (f[k] - s[k]);
    out.add(slow[i].name, Tensor(slow[i].value.shape(), std::move(next)));
  }
  return out;
}

Vector lookahead_update(const Vector& slow, const Vector& fast, double alpha_la) {
  if (slow.size() != fast.size()) throw std::invalid_argument("lookahead_update: size mismatch");
  return slow + alpha_la * (fast - slow);
}

std::string hypergrad_name(const HypergradKind& kind) {
  return std::visit(
      [](const auto& k) -> std::string {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, ItdUnrolled>) return "itd";
        else if constexpr (std::is_same_v<K, AidNeumann>) return "aid_neumann";
        else if constexpr (std::is_same_v<K, AidCg>) return "aid_cg";
        else if constexpr (std::is_same_v<K, AidFd>) return "aid_fd";
        else return "lookahead";
      },
      kind);
}

void validate_hypergrad(const HypergradKind& kind) {
  if (const auto* n = std::get_if<AidNeumann>(&kind)) {
    if (n->terms < 1 || !(n->eta > 0.0)) throw std::invalid_argument("aid_neumann: need terms >= 1 and eta > 0");
  } else if (const auto* c = std::get_if<AidCg>(&kind)) {
    if (c->iters < 1 || !(c->tol > 0.0)) throw std::invalid_argument("aid_cg: need iters >= 1 and tol > 0");
  } else if (const auto* f = std::get_if<AidFd>(&kind)) {
    if (!(f->epsilon_rel > 0.0)) throw std::invalid_argument("aid_fd: epsilon_rel must be positive");
  } else if (const auto* l = std::get_if<Lookahead>(&kind)) {
    if (l->alpha_la < 0.0 || l->alpha_la > 1.0 || l->sync_period < 1) {
      throw std::invalid_argument("lookahead: need alpha_la in [0,1] and sync_period >= 1");
    }
  }
}

double relative_error(const Vector& estimate, const Vector& exact) {
  const double denom = exact.norm();
  const double diff = (estimate - exact).norm();
  return denom > 0.0 ? diff / denom : diff;
}

}  // namespace gessl
