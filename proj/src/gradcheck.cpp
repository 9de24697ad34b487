#include "lsp/gradcheck.hpp"

#include <cmath>

namespace lsp {

template <typename S>
GradCheckReport finite_diff_check(const ScalarFunction<S>& f, const Tensor<S>& point, double step) {
  if (!(step > 0)) throw Error(ErrorKind::kConfig, "finite difference step must be positive");
  Tape<S> tape;
  const Tensor<S> x = tape.watch(point.detach());
  const Tensor<S> y = f(x);
  if (!std::isfinite(static_cast<double>(y.item()))) {
    throw Error(ErrorKind::kNonFiniteEvaluation, "f(point) is not finite");
  }
  const Tensor<S> analytic = tape.backward(y).of(x);

  auto eval = [&](Index j, double delta) {
    Buffer<S> shifted = point.values();
    shifted[j] += static_cast<S>(delta);
    const double v = static_cast<double>(f(Tensor<S>(point.shape(), std::move(shifted))).item());
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::kNonFiniteEvaluation, "f is not finite at coordinate " + std::to_string(j));
    }
    return v;
  };

  GradCheckReport report;
  for (Index j = 0; j < point.size(); ++j) {
    const double numeric = (eval(j, step) - eval(j, -step)) / (2 * step);
    const double a = static_cast<double>(analytic[j]);
    const double err = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    if (err > report.max_relative_error || report.worst_coordinate < 0) {
      report = {err, j, a, numeric};
    }
  }
  return report;
}

template GradCheckReport finite_diff_check(const ScalarFunction<float>&, const Tensor<float>&, double);
template GradCheckReport finite_diff_check(const ScalarFunction<double>&, const Tensor<double>&, double);

}  // namespace lsp
