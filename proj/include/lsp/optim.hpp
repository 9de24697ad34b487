#pragma once

#include <vector>

#include "lsp/tensor.hpp"

namespace lsp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one buffer per parameter, plus the step count.
template <typename Scalar>
struct AdamState {
  std::vector<Buffer<Scalar>> m;
  std::vector<Buffer<Scalar>> v;
  long step = 0;
};

/// One Adam update of every entry of `params` given `grads` in the same order.
/// Moments are created on the first call.
template <typename Scalar>
void adam_step(ParameterSet<Scalar>& params, const std::vector<Tensor<Scalar>>& grads, AdamState<Scalar>& state,
               const AdamConfig& config);

}  // namespace lsp
