#include "lsp/optim.hpp"

#include <cmath>

namespace lsp {

template <typename S>
void adam_step(ParameterSet<S>& params, const std::vector<Tensor<S>>& grads, AdamState<S>& state,
               const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw Error(ErrorKind::kShapeMismatch, "adam: " + std::to_string(grads.size()) + " gradients for " +
                                               std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m.push_back(Buffer<S>::Zero(params.at(i).size()));
      state.v.push_back(Buffer<S>::Zero(params.at(i).size()));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorKind::kShapeMismatch, "adam: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params.at(i).shape() || state.m[i].size() != params.at(i).size()) {
      throw Error(ErrorKind::kShapeMismatch, "adam: gradient shape for '" + params.name(i) + "'");
    }
  }
  ++state.step;
  const S b1 = static_cast<S>(config.beta1), b2 = static_cast<S>(config.beta2);
  const S correction1 = S(1) - static_cast<S>(std::pow(config.beta1, state.step));
  const S correction2 = S(1) - static_cast<S>(std::pow(config.beta2, state.step));
  const S lr = static_cast<S>(config.lr), eps = static_cast<S>(config.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Buffer<S>& g = grads[i].values();
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g.square();
    Buffer<S> updated =
        params.at(i).values() - lr * (state.m[i] / correction1) / ((state.v[i] / correction2).sqrt() + eps);
    params.set_at(i, Tensor<S>(params.at(i).shape(), std::move(updated)));
  }
}

template void adam_step(ParameterSet<float>&, const std::vector<Tensor<float>>&, AdamState<float>&,
                        const AdamConfig&);
template void adam_step(ParameterSet<double>&, const std::vector<Tensor<double>>&, AdamState<double>&,
                        const AdamConfig&);

}  // namespace lsp
