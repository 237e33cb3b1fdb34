#include <algorithm>
#include <cmath>

#include "gessl/tensor.hpp"

namespace gessl {

double grad_check(const ScalarFunction& fn, const Tensor& point, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: step size must be positive");

  DiffRecord record;
  const Tensor x = record.track(point.detach());
  const Tensor y = fn(x);
  if (y.size() != 1) {
    throw ShapeError("grad_check: function is not scalar-valued, got " + shape_string(y.shape()));
  }

  Tensor analytic = Tensor::zeros(point.shape());
  if (y.tracked()) {
    const GradientMap grads = record.backward(y);
    analytic = DiffRecord::gradient_of(grads, x);
  }

  Tensor probe = point.detach();
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe.mutable_values()[i] = original + h;
    const double plus = fn(probe).item();
    probe.mutable_values()[i] = original - h;
    const double minus = fn(probe).item();
    probe.mutable_values()[i] = original;

    const double numeric = (plus - minus) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace gessl
