#pragma once

#include <functional>

#include "lsp/tensor.hpp"

namespace lsp {

struct GradCheckReport {
  double max_relative_error = 0;
  Index worst_coordinate = -1;
  double analytic = 0;
  double numeric = 0;
};

/// A differentiable scalar function of one vector. It is called with a tracked
/// input when the analytic gradient is wanted and with a plain tensor otherwise,
/// and must return a one-element tensor.
template <typename Scalar>
using ScalarFunction = std::function<Tensor<Scalar>(const Tensor<Scalar>&)>;

/// Compares the reverse-mode gradient of `f` at `point` with central differences
/// of width `step` along each coordinate. The error per coordinate is
/// |analytic - numeric| / (|analytic| + |numeric| + 1e-12); the maximum is reported.
template <typename Scalar>
GradCheckReport finite_diff_check(const ScalarFunction<Scalar>& f, const Tensor<Scalar>& point, double step);

}  // namespace lsp
