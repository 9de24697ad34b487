#include "lsp/ops.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace lsp {
namespace {

template <typename S>
using BackwardFn = typename Tape<S>::BackwardFn;

template <typename S>
using MatrixMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatrixMap = Eigen::Map<const RowMatrix<S>>;

template <typename S>
Tensor<S> make(const char* kind, Shape shape, Buffer<S> value, std::initializer_list<const Tensor<S>*> inputs,
               BackwardFn<S> backward) {
  return record_op<S>(kind, std::move(shape), std::move(value), inputs, std::move(backward));
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": " + shape_string(a) + " vs " + shape_string(b));
}

template <typename S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) mismatch(op, a.shape(), b.shape());
}

template <typename S>
void require_rank(const char* op, const Tensor<S>& x, std::initializer_list<int> ranks) {
  for (int r : ranks) {
    if (x.rank() == r) return;
  }
  throw Error(ErrorKind::kShapeMismatch, std::string(op) + ": unsupported rank for " + shape_string(x.shape()));
}

/// Rows and columns of a rank-1 (one row) or rank-2 tensor.
template <typename S>
std::pair<Index, Index> as_rows(const char* op, const Tensor<S>& x) {
  require_rank(op, x, {1, 2});
  if (x.rank() == 1) return {1, x.dim(0)};
  return {x.dim(0), x.dim(1)};
}

struct ImageDims {
  Index n, c, h, w;
};

template <typename S>
ImageDims image_dims(const char* op, const Tensor<S>& x) {
  require_rank(op, x, {3, 4});
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
}

Shape image_shape(int rank, const ImageDims& d) {
  if (rank == 3) return {d.c, d.h, d.w};
  return {d.n, d.c, d.h, d.w};
}

template <typename S, typename Fn, typename Deriv>
Tensor<S> unary(const char* kind, const Tensor<S>& x, Fn fn, Deriv deriv) {
  Buffer<S> y = x.values().unaryExpr(fn);
  auto saved_y = std::make_shared<const Buffer<S>>(y);
  return make<S>(kind, x.shape(), std::move(y), {&x},
                 [x, saved_y, deriv](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   *gin[0] += g * deriv(x.values(), *saved_y);
                 });
}

// im2col for one image: rows are (ci, ky, kx), columns are output pixels.
template <typename S>
void im2col(const S* x, Index c, Index h, Index w, Index k, int stride, Index ho, Index wo, RowMatrix<S>& col) {
  const Index pad = (k - 1) / 2;
  col.resize(c * k * k, ho * wo);
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        S* row = col.data() + ((ci * k + ky) * k + kx) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ky - pad;
          S* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, S(0));
            continue;
          }
          const S* src = x + (ci * h + iy) * w;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kx - pad;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const RowMatrix<S>& col, Index c, Index h, Index w, Index k, int stride, Index ho, Index wo, S* dx) {
  const Index pad = (k - 1) / 2;
  for (Index ci = 0; ci < c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const S* row = col.data() + ((ci * k + ky) * k + kx) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          S* dst = dx + (ci * h + iy) * w;
          const S* src = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("add", a, b);
  return make<S>("add", a.shape(), a.values() + b.values(), {&a, &b},
                 [](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   if (gin[0]) *gin[0] += g;
                   if (gin[1]) *gin[1] += g;
                 });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("sub", a, b);
  return make<S>("sub", a.shape(), a.values() - b.values(), {&a, &b},
                 [](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   if (gin[0]) *gin[0] += g;
                   if (gin[1]) *gin[1] -= g;
                 });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("mul", a, b);
  return make<S>("mul", a.shape(), a.values() * b.values(), {&a, &b},
                 [a, b](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   if (gin[0]) *gin[0] += g * b.values();
                   if (gin[1]) *gin[1] += g * a.values();
                 });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return make<S>("scale", x.shape(), x.values() * factor, {&x},
                 [factor](const Buffer<S>& g, std::span<Buffer<S>*> gin) { *gin[0] += g * factor; });
}

template <typename S>
Tensor<S> add_constant(const Tensor<S>& x, S offset) {
  return make<S>("add_constant", x.shape(), x.values() + offset, {&x},
                 [](const Buffer<S>& g, std::span<Buffer<S>*> gin) { *gin[0] += g; });
}

template <typename S>
Tensor<S> scale_by(const Tensor<S>& x, const Tensor<S>& factor) {
  if (factor.size() != 1) mismatch("scale_by", x.shape(), factor.shape());
  return make<S>("scale_by", x.shape(), x.values() * factor[0], {&x, &factor},
                 [x, factor](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   if (gin[0]) *gin[0] += g * factor[0];
                   if (gin[1]) (*gin[1])[0] += (g * x.values()).sum();
                 });
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
  return unary<S>(
      "leaky_relu", x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](const Buffer<S>& in, const Buffer<S>&) {
        return (in > S(0)).select(Buffer<S>::Ones(in.size()), Buffer<S>::Constant(in.size(), slope));
      });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& x) {
  return unary<S>(
      "tanh", x, [](S v) { return std::tanh(v); },
      [](const Buffer<S>&, const Buffer<S>& y) { return Buffer<S>(S(1) - y.square()); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return unary<S>(
      "sigmoid", x, [](S v) { return S(1) / (S(1) + std::exp(-v)); },
      [](const Buffer<S>&, const Buffer<S>& y) { return Buffer<S>(y * (S(1) - y)); });
}

template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
  return unary<S>(
      "softplus", x, [](S v) { return std::log1p(std::exp(-std::abs(v))) + std::max(v, S(0)); },
      [](const Buffer<S>& in, const Buffer<S>&) { return Buffer<S>(S(1) / (S(1) + (-in).exp())); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& x) {
  return unary<S>(
      "exp", x, [](S v) { return std::exp(v); }, [](const Buffer<S>&, const Buffer<S>& y) { return y; });
}

template <typename S>
Tensor<S> square(const Tensor<S>& x) {
  return unary<S>(
      "square", x, [](S v) { return v * v; },
      [](const Buffer<S>& in, const Buffer<S>&) { return Buffer<S>(S(2) * in); });
}

template <typename S>
Tensor<S> rsqrt(const Tensor<S>& x, S eps) {
  return unary<S>(
      "rsqrt", x, [eps](S v) { return S(1) / std::sqrt(v + eps); },
      [](const Buffer<S>&, const Buffer<S>& y) { return Buffer<S>(S(-0.5) * y.cube()); });
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
  return unary<S>(
      "clamp", x, [lo, hi](S v) { return std::clamp(v, lo, hi); },
      [lo, hi](const Buffer<S>& in, const Buffer<S>&) {
        return Buffer<S>(((in > lo) && (in < hi)).template cast<S>());
      });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& logits) {
  const auto [rows, cols] = as_rows("softmax", logits);
  RowMatrix<S> y = ConstMatrixMap<S>(logits.values().data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    y.row(r).array() -= y.row(r).maxCoeff();
    y.row(r).array() = y.row(r).array().exp();
    y.row(r) /= y.row(r).sum();
  }
  Buffer<S> values = Eigen::Map<const Buffer<S>>(y.data(), y.size());
  auto saved = std::make_shared<const RowMatrix<S>>(std::move(y));
  return make<S>("softmax", logits.shape(), std::move(values), {&logits},
                 [saved, rows, cols](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   ConstMatrixMap<S> gm(g.data(), rows, cols);
                   MatrixMap<S> out(gin[0]->data(), rows, cols);
                   for (Index r = 0; r < rows; ++r) {
                     const S dot = gm.row(r).dot(saved->row(r));
                     out.row(r).array() += saved->row(r).array() * (gm.row(r).array() - dot);
                   }
                 });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, const std::vector<int>& labels) {
  const auto [rows, cols] = as_rows("cross_entropy", logits);
  if (static_cast<Index>(labels.size()) != rows) {
    throw Error(ErrorKind::kShapeMismatch, "cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                               std::to_string(rows) + " rows");
  }
  RowMatrix<S> p = ConstMatrixMap<S>(logits.values().data(), rows, cols);
  S loss = 0;
  for (Index r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols) throw Error(ErrorKind::kShapeMismatch, "cross_entropy: label out of range");
    const S m = p.row(r).maxCoeff();
    p.row(r).array() = (p.row(r).array() - m).exp();
    const S z = p.row(r).sum();
    loss -= std::log(p(r, labels[r]) / z);
    p.row(r) /= z;
  }
  loss /= static_cast<S>(rows);
  auto saved = std::make_shared<const RowMatrix<S>>(std::move(p));
  return make<S>("cross_entropy", Shape{1}, Buffer<S>::Constant(1, loss), {&logits},
                 [saved, labels, rows, cols](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   MatrixMap<S> out(gin[0]->data(), rows, cols);
                   const S w = g[0] / static_cast<S>(rows);
                   out += w * *saved;
                   for (Index r = 0; r < rows; ++r) out(r, labels[r]) -= w;
                 });
}

template <typename S>
Tensor<S> select(const Tensor<S>& x, const std::vector<int>& index) {
  const auto [rows, cols] = as_rows("select", x);
  if (static_cast<Index>(index.size()) != rows) {
    throw Error(ErrorKind::kShapeMismatch, "select: index count does not match rows");
  }
  Buffer<S> y(rows);
  for (Index r = 0; r < rows; ++r) {
    if (index[r] < 0 || index[r] >= cols) throw Error(ErrorKind::kShapeMismatch, "select: index out of range");
    y[r] = x[r * cols + index[r]];
  }
  return make<S>("select", Shape{rows}, std::move(y), {&x},
                 [index, cols](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   for (std::size_t r = 0; r < index.size(); ++r) (*gin[0])[r * cols + index[r]] += g[r];
                 });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return make<S>("sum", Shape{1}, Buffer<S>::Constant(1, x.values().sum()), {&x},
                 [](const Buffer<S>& g, std::span<Buffer<S>*> gin) { *gin[0] += g[0]; });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& x) {
  if (x.size() == 0) throw Error(ErrorKind::kShapeMismatch, "mean of empty tensor");
  const S n = static_cast<S>(x.size());
  return make<S>("mean", Shape{1}, Buffer<S>::Constant(1, x.values().sum() / n), {&x},
                 [n](const Buffer<S>& g, std::span<Buffer<S>*> gin) { *gin[0] += g[0] / n; });
}

template <typename S>
Tensor<S> sum_groups(const Tensor<S>& x, Index group) {
  if (group <= 0 || x.size() % group != 0) {
    throw Error(ErrorKind::kShapeMismatch, "sum_groups: group does not divide " + shape_string(x.shape()));
  }
  const Index rows = x.size() / group;
  Buffer<S> y = ConstMatrixMap<S>(x.values().data(), rows, group).rowwise().sum().array();
  return make<S>("sum_groups", Shape{rows}, std::move(y), {&x},
                 [rows, group](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   MatrixMap<S>(gin[0]->data(), rows, group).colwise() += g.matrix();
                 });
}

template <typename S>
Tensor<S> mse(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape("mse", a, b);
  const S n = static_cast<S>(a.size());
  Buffer<S> diff = a.values() - b.values();
  const S value = diff.square().sum() / n;
  auto saved = std::make_shared<const Buffer<S>>(std::move(diff));
  return make<S>("mse", Shape{1}, Buffer<S>::Constant(1, value), {&a, &b},
                 [saved, n](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   const S w = S(2) * g[0] / n;
                   if (gin[0]) *gin[0] += w * *saved;
                   if (gin[1]) *gin[1] -= w * *saved;
                 });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  if (numel(shape) != x.size()) mismatch("reshape", x.shape(), shape);
  return make<S>("reshape", std::move(shape), x.values(), {&x},
                 [](const Buffer<S>& g, std::span<Buffer<S>*> gin) { *gin[0] += g; });
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw Error(ErrorKind::kShapeMismatch, "concat of nothing");
  const int rank = parts.front().rank();
  if (rank != 1 && rank != 2) throw Error(ErrorKind::kShapeMismatch, "concat: rank must be 1 or 2");
  const Index rows = rank == 1 ? 1 : parts.front().dim(0);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank || (rank == 2 && p.dim(0) != rows)) mismatch("concat", parts.front().shape(), p.shape());
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  RowMatrix<S> out(rows, total);
  Index offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleCols(offset, widths[i]) = ConstMatrixMap<S>(parts[i].values().data(), rows, widths[i]);
    offset += widths[i];
  }
  Shape shape = rank == 1 ? Shape{total} : Shape{rows, total};
  Buffer<S> values = Eigen::Map<const Buffer<S>>(out.data(), out.size());

  Tape<S>* tape = nullptr;
  for (const auto& p : parts) tape = tape ? tape : p.tape();
  if (!tape) return Tensor<S>(std::move(shape), std::move(values));

  auto backward = [rows, total, widths](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
    ConstMatrixMap<S> gm(g.data(), rows, total);
    Index off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (gin[i]) MatrixMap<S>(gin[i]->data(), rows, widths[i]) += gm.middleCols(off, widths[i]);
      off += widths[i];
    }
  };
  return tape->record_many("concat", std::move(shape), std::move(values), parts, backward);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, Index offset, Index length) {
  const auto [rows, cols] = as_rows("slice_cols", x);
  if (offset < 0 || length < 0 || offset + length > cols) {
    throw Error(ErrorKind::kShapeMismatch, "slice_cols: range outside " + shape_string(x.shape()));
  }
  RowMatrix<S> out = ConstMatrixMap<S>(x.values().data(), rows, cols).middleCols(offset, length);
  Shape shape = x.rank() == 1 ? Shape{length} : Shape{rows, length};
  return make<S>("slice_cols", std::move(shape), Eigen::Map<const Buffer<S>>(out.data(), out.size()), {&x},
                 [rows, cols, offset, length](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   MatrixMap<S>(gin[0]->data(), rows, cols).middleCols(offset, length) +=
                       ConstMatrixMap<S>(g.data(), rows, length);
                 });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_rank("transpose", x, {2});
  const Index rows = x.dim(0), cols = x.dim(1);
  RowMatrix<S> t = ConstMatrixMap<S>(x.values().data(), rows, cols).transpose();
  return make<S>("transpose", Shape{cols, rows}, Eigen::Map<const Buffer<S>>(t.data(), t.size()), {&x},
                 [rows, cols](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   MatrixMap<S>(gin[0]->data(), rows, cols) += ConstMatrixMap<S>(g.data(), cols, rows).transpose();
                 });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank("matmul", a, {2});
  require_rank("matmul", b, {2});
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) mismatch("matmul", a.shape(), b.shape());
  RowMatrix<S> c(m, n);
  c.noalias() = ConstMatrixMap<S>(a.values().data(), m, k) * ConstMatrixMap<S>(b.values().data(), k, n);
  return make<S>("matmul", Shape{m, n}, Eigen::Map<const Buffer<S>>(c.data(), c.size()), {&a, &b},
                 [a, b, m, k, n](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   ConstMatrixMap<S> gm(g.data(), m, n);
                   if (gin[0]) {
                     MatrixMap<S>(gin[0]->data(), m, k).noalias() +=
                         gm * ConstMatrixMap<S>(b.values().data(), k, n).transpose();
                   }
                   if (gin[1]) {
                     MatrixMap<S>(gin[1]->data(), k, n).noalias() +=
                         ConstMatrixMap<S>(a.values().data(), m, k).transpose() * gm;
                   }
                 });
}

template <typename S>
Tensor<S> affine(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  const auto [rows, in] = as_rows("affine", x);
  require_rank("affine", weight, {2});
  const Index out = weight.dim(0);
  if (weight.dim(1) != in) mismatch("affine", x.shape(), weight.shape());
  if (bias.rank() != 1 || bias.dim(0) != out) mismatch("affine", weight.shape(), bias.shape());
  RowMatrix<S> y(rows, out);
  y.noalias() = ConstMatrixMap<S>(x.values().data(), rows, in) *
                ConstMatrixMap<S>(weight.values().data(), out, in).transpose();
  y.rowwise() += bias.values().matrix().transpose();
  Shape shape = x.rank() == 1 ? Shape{out} : Shape{rows, out};
  return make<S>("affine", std::move(shape), Eigen::Map<const Buffer<S>>(y.data(), y.size()), {&x, &weight, &bias},
                 [x, weight, rows, in, out](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   ConstMatrixMap<S> gm(g.data(), rows, out);
                   if (gin[0]) {
                     MatrixMap<S>(gin[0]->data(), rows, in).noalias() +=
                         gm * ConstMatrixMap<S>(weight.values().data(), out, in);
                   }
                   if (gin[1]) {
                     MatrixMap<S>(gin[1]->data(), out, in).noalias() +=
                         gm.transpose() * ConstMatrixMap<S>(x.values().data(), rows, in);
                   }
                   if (gin[2]) gin[2]->matrix() += gm.colwise().sum().transpose();
                 });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, int stride) {
  const ImageDims d = image_dims("conv2d", x);
  require_rank("conv2d", kernel, {4});
  const Index co = kernel.dim(0), k = kernel.dim(2);
  if (kernel.dim(1) != d.c || kernel.dim(3) != k || k % 2 == 0) mismatch("conv2d", x.shape(), kernel.shape());
  if (stride != 1 && stride != 2) throw Error(ErrorKind::kUnknownAttribute, "conv2d: stride must be 1 or 2");
  const bool has_bias = bias.size() > 0;
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != co)) mismatch("conv2d", kernel.shape(), bias.shape());
  const Index pad = (k - 1) / 2;
  const Index ho = (d.h + 2 * pad - k) / stride + 1;
  const Index wo = (d.w + 2 * pad - k) / stride + 1;
  const Index in_size = d.c * d.h * d.w, out_size = co * ho * wo, patch = d.c * k * k;

  ConstMatrixMap<S> kmat(kernel.values().data(), co, patch);
  Buffer<S> y(d.n * out_size);
  RowMatrix<S> col;
  for (Index n = 0; n < d.n; ++n) {
    im2col(x.values().data() + n * in_size, d.c, d.h, d.w, k, stride, ho, wo, col);
    MatrixMap<S> yn(y.data() + n * out_size, co, ho * wo);
    yn.noalias() = kmat * col;
    if (has_bias) yn.colwise() += bias.values().matrix();
  }
  const ImageDims od{d.n, co, ho, wo};
  return make<S>(
      "conv2d", image_shape(x.rank(), od), std::move(y), {&x, &kernel, &bias},
      [x, kernel, d, co, k, stride, ho, wo, in_size, out_size, patch](const Buffer<S>& g,
                                                                      std::span<Buffer<S>*> gin) {
        ConstMatrixMap<S> kmat(kernel.values().data(), co, patch);
        RowMatrix<S> col, dcol;
        for (Index n = 0; n < d.n; ++n) {
          ConstMatrixMap<S> gn(g.data() + n * out_size, co, ho * wo);
          if (gin[1]) {
            im2col(x.values().data() + n * in_size, d.c, d.h, d.w, k, stride, ho, wo, col);
            MatrixMap<S>(gin[1]->data(), co, patch).noalias() += gn * col.transpose();
          }
          if (gin[0]) {
            dcol.noalias() = kmat.transpose() * gn;
            col2im(dcol, d.c, d.h, d.w, k, stride, ho, wo, gin[0]->data() + n * in_size);
          }
          if (gin[2]) gin[2]->matrix() += gn.rowwise().sum();
        }
      });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, int stride) {
  return conv2d(x, kernel, Tensor<S>(), stride);
}

template <typename S>
Tensor<S> upsample2x(const Tensor<S>& x) {
  const ImageDims d = image_dims("upsample2x", x);
  const Index planes = d.n * d.c, h2 = 2 * d.h, w2 = 2 * d.w;
  Buffer<S> y(planes * h2 * w2);
  for (Index p = 0; p < planes; ++p) {
    const S* src = x.values().data() + p * d.h * d.w;
    S* dst = y.data() + p * h2 * w2;
    for (Index yy = 0; yy < h2; ++yy) {
      for (Index xx = 0; xx < w2; ++xx) dst[yy * w2 + xx] = src[(yy / 2) * d.w + xx / 2];
    }
  }
  return make<S>("upsample2x", image_shape(x.rank(), {d.n, d.c, h2, w2}), std::move(y), {&x},
                 [d, planes, h2, w2](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   for (Index p = 0; p < planes; ++p) {
                     const S* src = g.data() + p * h2 * w2;
                     S* dst = gin[0]->data() + p * d.h * d.w;
                     for (Index yy = 0; yy < h2; ++yy) {
                       for (Index xx = 0; xx < w2; ++xx) dst[(yy / 2) * d.w + xx / 2] += src[yy * w2 + xx];
                     }
                   }
                 });
}

template <typename S>
Tensor<S> maxpool2x(const Tensor<S>& x) {
  const ImageDims d = image_dims("maxpool2x", x);
  if (d.h % 2 || d.w % 2) throw Error(ErrorKind::kShapeMismatch, "maxpool2x: odd extent " + shape_string(x.shape()));
  const Index planes = d.n * d.c, h2 = d.h / 2, w2 = d.w / 2;
  Buffer<S> y(planes * h2 * w2);
  auto argmax = std::make_shared<std::vector<Index>>(y.size());
  for (Index p = 0; p < planes; ++p) {
    const S* src = x.values().data() + p * d.h * d.w;
    for (Index oy = 0; oy < h2; ++oy) {
      for (Index ox = 0; ox < w2; ++ox) {
        Index best = (2 * oy) * d.w + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy) {
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (2 * oy + dy) * d.w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        }
        const Index o = (p * h2 + oy) * w2 + ox;
        y[o] = src[best];
        (*argmax)[o] = p * d.h * d.w + best;
      }
    }
  }
  return make<S>("maxpool2x", image_shape(x.rank(), {d.n, d.c, h2, w2}), std::move(y), {&x},
                 [argmax](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   for (Index o = 0; o < g.size(); ++o) (*gin[0])[(*argmax)[o]] += g[o];
                 });
}

template <typename S>
Tensor<S> channel_scale(const Tensor<S>& x, const Tensor<S>& s) {
  const ImageDims d = image_dims("channel_scale", x);
  if (s.size() != d.n * d.c) mismatch("channel_scale", x.shape(), s.shape());
  const Index plane = d.h * d.w, planes = d.n * d.c;
  Buffer<S> y(x.size());
  for (Index p = 0; p < planes; ++p) y.segment(p * plane, plane) = x.values().segment(p * plane, plane) * s[p];
  return make<S>("channel_scale", x.shape(), std::move(y), {&x, &s},
                 [x, s, plane, planes](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   for (Index p = 0; p < planes; ++p) {
                     if (gin[0]) gin[0]->segment(p * plane, plane) += g.segment(p * plane, plane) * s[p];
                     if (gin[1]) {
                       (*gin[1])[p] += (g.segment(p * plane, plane) * x.values().segment(p * plane, plane)).sum();
                     }
                   }
                 });
}

template <typename S>
Tensor<S> add_broadcast(const Tensor<S>& x, const Tensor<S>& y) {
  if (x.rank() < 1 || Shape(x.shape().begin() + 1, x.shape().end()) != y.shape()) {
    mismatch("add_broadcast", x.shape(), y.shape());
  }
  const Index batch = x.dim(0), inner = y.size();
  Buffer<S> out(x.size());
  for (Index n = 0; n < batch; ++n) out.segment(n * inner, inner) = x.values().segment(n * inner, inner) + y.values();
  return make<S>("add_broadcast", x.shape(), std::move(out), {&x, &y},
                 [batch, inner](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                   if (gin[0]) *gin[0] += g;
                   if (gin[1]) {
                     for (Index n = 0; n < batch; ++n) *gin[1] += g.segment(n * inner, inner);
                   }
                 });
}

std::vector<OpKind> all_op_kinds() {
  return {OpKind::kMatmul,    OpKind::kConv2d,       OpKind::kUpsample2x, OpKind::kAdd,     OpKind::kMul,
          OpKind::kScale,     OpKind::kLeakyRelu,    OpKind::kTanh,       OpKind::kSigmoid, OpKind::kSoftmax,
          OpKind::kCrossEntropy, OpKind::kSum,       OpKind::kMean,       OpKind::kReshape, OpKind::kConcat,
          OpKind::kAffine,    OpKind::kMaxpool2x,    OpKind::kChannelScale, OpKind::kSoftplus, OpKind::kSquare,
          OpKind::kRsqrt};
}

std::string to_string(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kUpsample2x: return "upsample2x";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kCrossEntropy: return "cross_entropy";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConcat: return "concat";
    case OpKind::kAffine: return "affine";
    case OpKind::kMaxpool2x: return "maxpool2x";
    case OpKind::kChannelScale: return "channel_scale";
    case OpKind::kSoftplus: return "softplus";
    case OpKind::kSquare: return "square";
    case OpKind::kRsqrt: return "rsqrt";
  }
  return "unknown";
}

template <typename S>
Tensor<S> apply(OpKind kind, const std::vector<Tensor<S>>& in, const OpAttrs& attrs) {
  static const std::map<OpKind, std::set<std::string>> allowed = {
      {OpKind::kScale, {"factor"}},    {OpKind::kLeakyRelu, {"slope"}},
      {OpKind::kConv2d, {"stride"}},   {OpKind::kCrossEntropy, {"label"}},
      {OpKind::kRsqrt, {"eps"}},
      {OpKind::kReshape, {"d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7"}},
  };
  const auto it = allowed.find(kind);
  for (const auto& [key, value] : attrs) {
    if (it == allowed.end() || !it->second.count(key)) {
      throw Error(ErrorKind::kUnknownAttribute, "'" + key + "' for " + to_string(kind));
    }
  }
  auto attr = [&](const std::string& key, double fallback) {
    const auto a = attrs.find(key);
    return a == attrs.end() ? fallback : a->second;
  };
  auto arity = [&](std::size_t lo, std::size_t hi) {
    if (in.size() < lo || in.size() > hi) {
      throw Error(ErrorKind::kShapeMismatch, to_string(kind) + ": wrong number of inputs");
    }
  };
  switch (kind) {
    case OpKind::kMatmul: arity(2, 2); return matmul(in[0], in[1]);
    case OpKind::kConv2d:
      arity(2, 3);
      return conv2d(in[0], in[1], in.size() == 3 ? in[2] : Tensor<S>(), static_cast<int>(attr("stride", 1)));
    case OpKind::kUpsample2x: arity(1, 1); return upsample2x(in[0]);
    case OpKind::kAdd: arity(2, 2); return add(in[0], in[1]);
    case OpKind::kMul: arity(2, 2); return mul(in[0], in[1]);
    case OpKind::kScale: arity(1, 1); return scale(in[0], static_cast<S>(attr("factor", 1)));
    case OpKind::kLeakyRelu: arity(1, 1); return leaky_relu(in[0], static_cast<S>(attr("slope", 0.2)));
    case OpKind::kTanh: arity(1, 1); return tanh(in[0]);
    case OpKind::kSigmoid: arity(1, 1); return sigmoid(in[0]);
    case OpKind::kSoftmax: arity(1, 1); return softmax(in[0]);
    case OpKind::kCrossEntropy: {
      arity(1, 1);
      const Index rows = in[0].rank() == 2 ? in[0].dim(0) : 1;
      return cross_entropy(in[0], std::vector<int>(rows, static_cast<int>(attr("label", 0))));
    }
    case OpKind::kSum: arity(1, 1); return sum(in[0]);
    case OpKind::kMean: arity(1, 1); return mean(in[0]);
    case OpKind::kReshape: {
      arity(1, 1);
      Shape shape;
      for (int i = 0; i < 8; ++i) {
        const auto a = attrs.find("d" + std::to_string(i));
        if (a == attrs.end()) break;
        shape.push_back(static_cast<Index>(a->second));
      }
      if (shape.empty()) shape = {in[0].size()};
      return reshape(in[0], shape);
    }
    case OpKind::kConcat: arity(1, 64); return concat(in);
    case OpKind::kAffine: arity(3, 3); return affine(in[0], in[1], in[2]);
    case OpKind::kMaxpool2x: arity(1, 1); return maxpool2x(in[0]);
    case OpKind::kChannelScale: arity(2, 2); return channel_scale(in[0], in[1]);
    case OpKind::kSoftplus: arity(1, 1); return softplus(in[0]);
    case OpKind::kSquare: arity(1, 1); return square(in[0]);
    case OpKind::kRsqrt: arity(1, 1); return rsqrt(in[0], static_cast<S>(attr("eps", 1e-8)));
  }
  throw Error(ErrorKind::kUnknownAttribute, "unhandled op kind");
}

#define LSP_INSTANTIATE_OPS(S)                                                                      \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> scale(const Tensor<S>&, S);                                                    \
  template Tensor<S> add_constant(const Tensor<S>&, S);                                             \
  template Tensor<S> scale_by(const Tensor<S>&, const Tensor<S>&);                                  \
  template Tensor<S> leaky_relu(const Tensor<S>&, S);                                               \
  template Tensor<S> tanh(const Tensor<S>&);                                                        \
  template Tensor<S> sigmoid(const Tensor<S>&);                                                     \
  template Tensor<S> softplus(const Tensor<S>&);                                                    \
  template Tensor<S> exp(const Tensor<S>&);                                                         \
  template Tensor<S> square(const Tensor<S>&);                                                      \
  template Tensor<S> rsqrt(const Tensor<S>&, S);                                                    \
  template Tensor<S> clamp(const Tensor<S>&, S, S);                                                 \
  template Tensor<S> softmax(const Tensor<S>&);                                                     \
  template Tensor<S> cross_entropy(const Tensor<S>&, const std::vector<int>&);                      \
  template Tensor<S> select(const Tensor<S>&, const std::vector<int>&);                             \
  template Tensor<S> sum(const Tensor<S>&);                                                         \
  template Tensor<S> mean(const Tensor<S>&);                                                        \
  template Tensor<S> sum_groups(const Tensor<S>&, Index);                                           \
  template Tensor<S> mse(const Tensor<S>&, const Tensor<S>&);                                       \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                              \
  template Tensor<S> concat(const std::vector<Tensor<S>>&);                                         \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);                                    \
  template Tensor<S> transpose(const Tensor<S>&);                                                   \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> affine(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int);             \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, int);                               \
  template Tensor<S> upsample2x(const Tensor<S>&);                                                  \
  template Tensor<S> maxpool2x(const Tensor<S>&);                                                   \
  template Tensor<S> channel_scale(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> add_broadcast(const Tensor<S>&, const Tensor<S>&);                             \
  template Tensor<S> apply(OpKind, const std::vector<Tensor<S>>&, const OpAttrs&);

LSP_INSTANTIATE_OPS(float)
LSP_INSTANTIATE_OPS(double)

}  // namespace lsp
