#pragma once

#include <map>
#include <string>
#include <vector>

#include "lsp/tensor.hpp"

namespace lsp {

// Elementwise ops require identical shapes; there is no implicit broadcasting.
// Batched image tensors are laid out N x C x H x W; a rank-3 C x H x W input is
// treated as a batch of one and keeps its rank.

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& x, S factor);
template <typename S> Tensor<S> add_constant(const Tensor<S>& x, S offset);
/// Multiplies every element of x by the single element of `factor`.
template <typename S> Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& factor);

template <typename S> Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.2));
template <typename S> Tensor<S> tanh(const Tensor<S>& x);
template <typename S> Tensor<S> sigmoid(const Tensor<S>& x);
template <typename S> Tensor<S> softplus(const Tensor<S>& x);
template <typename S> Tensor<S> exp(const Tensor<S>& x);
template <typename S> Tensor<S> square(const Tensor<S>& x);
/// (x + eps)^(-1/2)
template <typename S> Tensor<S> rsqrt(const Tensor<S>& x, S eps);
/// Gradient flows only where lo < x < hi.
template <typename S> Tensor<S> clamp(const Tensor<S>& x, S lo, S hi);

/// Softmax over the last axis of a rank-1 or rank-2 tensor.
template <typename S> Tensor<S> softmax(const Tensor<S>& logits);
/// Mean over rows of -log softmax(logits)[label]; takes raw logits.
template <typename S> Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels);
/// Picks x[n, index[n]] from an N x C tensor (or x[index[0]] from a vector).
template <typename S> Tensor<S> select(const Tensor<S>& x, const std::vector<int>& index);

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
/// Sums consecutive groups of `group` elements: numel(x)/group outputs.
template <typename S> Tensor<S> sum_groups(const Tensor<S>& x, Index group);
template <typename S> Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b);

template <typename S> Tensor<S> reshape(const Tensor<S>& x, Shape shape);
/// Concatenation along axis 0 of vectors, or along the column axis of N x D matrices.
template <typename S> Tensor<S> concat(const std::vector<Tensor<S>>& parts);
template <typename S> Tensor<S> slice_cols(const Tensor<S>& x, Index offset, Index length);
template <typename S> Tensor<S> transpose(const Tensor<S>& x);

template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
/// x W^T + b for x of shape [in] or [N, in], W of shape [out, in], b of shape [out].
template <typename S> Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias);

/// Cross-correlation (no kernel flip), zero padding (k-1)/2, stride 1 or 2.
/// kernel is C_out x C_in x k x k with odd k; bias (optional, empty tensor for none) is [C_out].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, int stride = 1);
template <typename S> Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, int stride = 1);
/// Nearest-neighbour 2x upsampling.
template <typename S> Tensor<S> upsample2x(const Tensor<S>& x);
/// 2x2 max pooling; the gradient goes to the first maximal element of each window.
template <typename S> Tensor<S> maxpool2x(const Tensor<S>& x);
/// y[n, c, :, :] = x[n, c, :, :] * s[n, c].
template <typename S> Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& s);
/// Adds y (shape x.shape[1:]) to every batch element of x.
template <typename S> Tensor<S> add_broadcast(const Tensor<S>& x, const Tensor<S>& y);

/// Names of the operations reachable through apply(); each has a finite-difference property test.
enum class OpKind {
  kMatmul,
  kConv2d,
  kUpsample2x,
  kAdd,
  kMul,
  kScale,
  kLeakyRelu,
  kTanh,
  kSigmoid,
  kSoftmax,
  kCrossEntropy,
  kSum,
  kMean,
  kReshape,
  kConcat,
  kAffine,
  kMaxpool2x,
  kChannelScale,
  kSoftplus,
  kSquare,
  kRsqrt,
};

std::vector<OpKind> all_op_kinds();
std::string to_string(OpKind kind);

using OpAttrs = std::map<std::string, double>;

/// Generic dispatcher. Recognised attributes: scale "factor"; leaky_relu "slope";
/// conv2d "stride"; cross_entropy "label" (applied to every row); rsqrt "eps";
/// reshape "d0".."d7". Any other attribute raises UnknownAttribute.
template <typename S>
Tensor<S> apply(OpKind kind, const std::vector<Tensor<S>>& inputs, const OpAttrs& attrs = {});

}  // namespace lsp
