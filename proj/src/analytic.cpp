#include "lsp/analytic.hpp"

#include <cmath>
#include <random>

#include "lsp/glyph.hpp"
#include "lsp/ops.hpp"

namespace lsp {
namespace {

constexpr Index kSide = kImageSize;
constexpr Index kPlane = kSide * kSide;

using Mat = Eigen::Matrix<double, kSide, kSide, Eigen::RowMajor>;

/// Banded blur matrix B (Y = B X B) and its derivative in sigma.
std::pair<Mat, Mat> blur_matrices(double sigma) {
  Mat b = Mat::Identity(), db = Mat::Zero();
  if (sigma < 1e-12) return {b, db};
  const int r = kAnalyticBlurRadius;
  Eigen::ArrayXd g(r + 1), dg(r + 1);
  for (int t = 0; t <= r; ++t) {
    g[t] = std::exp(-t * t / (2 * sigma * sigma));
    dg[t] = g[t] * t * t / (sigma * sigma * sigma);
  }
  const double z = g[0] + 2 * g.tail(r).sum();
  const double dz = dg[0] + 2 * dg.tail(r).sum();
  b.setZero();
  for (Index i = 0; i < kSide; ++i) {
    for (Index j = std::max<Index>(0, i - r); j <= std::min<Index>(kSide - 1, i + r); ++j) {
      const Index t = std::abs(i - j);
      b(i, j) = g[t] / z;
      db(i, j) = (dg[t] - g[t] * dz / z) / z;
    }
  }
  return {b, db};
}

void check_styles(const char* who, Index rows, Index cols, std::size_t classes, Index dim) {
  if (cols != dim || static_cast<Index>(classes) != rows) {
    throw Error(ErrorKind::kShapeMismatch, std::string(who) + ": expected N x " + std::to_string(dim) +
                                               " styles with one class each");
  }
}

}  // namespace

template <typename S>
Tensor<S> glyph_field(const std::vector<int>& classes, const Tensor<S>& thickness, const Tensor<S>& rotation) {
  const Index n = static_cast<Index>(classes.size());
  if (thickness.size() != n || rotation.size() != n) {
    throw Error(ErrorKind::kShapeMismatch, "glyph_field: one thickness and rotation per class");
  }
  Buffer<S> value(n * kPlane), d_thick(n * kPlane), d_rot(n * kPlane);
  for (Index i = 0; i < n; ++i) {
    const GlyphSkeleton& glyph = digit_skeleton(classes[i]);
    GlyphPose pose;
    pose.rotation = static_cast<double>(rotation[i]);
    const double t = static_cast<double>(thickness[i]);
    for (Index y = 0; y < kSide; ++y) {
      for (Index x = 0; x < kSide; ++x) {
        const StrokeDistance sd = stroke_distance(glyph, pose, x + 0.5, y + 0.5, kSide, kSide);
        const double c = stroke_coverage(sd.distance, t);
        const double slope = kStrokeSharpness * c * (1 - c);
        const Index k = i * kPlane + y * kSide + x;
        value[k] = static_cast<S>(c);
        d_thick[k] = static_cast<S>(0.5 * slope);
        d_rot[k] = static_cast<S>(-slope * sd.d_rotation);
      }
    }
  }
  return record_op<S>("glyph_field", {n, 1, kSide, kSide}, std::move(value), {&thickness, &rotation},
                      [n, d_thick, d_rot](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                        for (Index i = 0; i < n; ++i) {
                          const auto gi = g.segment(i * kPlane, kPlane);
                          if (gin[0]) (*gin[0])[i] += (gi * d_thick.segment(i * kPlane, kPlane)).sum();
                          if (gin[1]) (*gin[1])[i] += (gi * d_rot.segment(i * kPlane, kPlane)).sum();
                        }
                      });
}

template <typename S>
Tensor<S> blur_by_sigma(const Tensor<S>& images, const Tensor<S>& sigma) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kSide || images.dim(3) != kSide ||
      sigma.size() != images.dim(0)) {
    throw Error(ErrorKind::kShapeMismatch, "blur_by_sigma: " + shape_string(images.shape()) + " with sigma " +
                                               shape_string(sigma.shape()));
  }
  const Index n = images.dim(0);
  Buffer<S> out(images.size());
  for (Index i = 0; i < n; ++i) {
    const Mat b = blur_matrices(static_cast<double>(sigma[i])).first;
    const Mat x = Eigen::Map<const Eigen::Matrix<S, kSide, kSide, Eigen::RowMajor>>(images.values().data() + i * kPlane)
                      .template cast<double>();
    Eigen::Map<Eigen::Matrix<S, kSide, kSide, Eigen::RowMajor>>(out.data() + i * kPlane) =
        (b * x * b).template cast<S>();
  }
  return record_op<S>("blur_by_sigma", images.shape(), std::move(out), {&images, &sigma},
                      [images, sigma, n](const Buffer<S>& g, std::span<Buffer<S>*> gin) {
                        for (Index i = 0; i < n; ++i) {
                          const auto [b, db] = blur_matrices(static_cast<double>(sigma[i]));
                          const Mat gi = Eigen::Map<const Eigen::Matrix<S, kSide, kSide, Eigen::RowMajor>>(
                                             g.data() + i * kPlane)
                                             .template cast<double>();
                          if (gin[0]) {
                            const Mat gx = b * gi * b;
                            gin[0]->segment(i * kPlane, kPlane) +=
                                Eigen::Map<const Buffer<double>>(gx.data(), kPlane).template cast<S>();
                          }
                          if (gin[1]) {
                            const Mat x = Eigen::Map<const Eigen::Matrix<S, kSide, kSide, Eigen::RowMajor>>(
                                              images.values().data() + i * kPlane)
                                              .template cast<double>();
                            const Mat dy = db * x * b + b * x * db;
                            (*gin[1])[i] += static_cast<S>(gi.cwiseProduct(dy).sum());
                          }
                        }
                      });
}

template <typename S>
AnalyticGenerator<S>::AnalyticGenerator(std::uint64_t noise_seed, Index padding)
    : seed_(noise_seed), padding_(padding) {
  if (padding < 0) throw Error(ErrorKind::kConfig, "negative padding dimension count");
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Buffer<S> field(kPlane);
  for (auto& v : field) v = static_cast<S>(normal(rng));
  noise_ = Tensor<S>({kSide, kSide}, std::move(field));
}

template <typename S>
std::string AnalyticGenerator<S>::id() const {
  return "analytic-s" + std::to_string(seed_) + "-p" + std::to_string(padding_);
}

template <typename S>
std::string AnalyticGenerator<S>::dim_name(Index j) const {
  static const char* names[] = {"noise_amp", "blur_knob", "thickness", "rotation", "intensity"};
  if (j < 0 || j >= style_dim()) throw Error(ErrorKind::kShapeMismatch, "no style dimension " + std::to_string(j));
  return j < kAnalyticNamedDims ? names[j] : "pad" + std::to_string(j - kAnalyticNamedDims);
}

template <typename S>
Tensor<S> AnalyticGenerator<S>::styles(const Tensor<S>& z, const std::vector<int>& classes) const {
  check_styles("analytic styles", z.rank() == 2 ? z.dim(0) : -1, z.rank() == 2 ? z.dim(1) : -1, classes.size(),
               style_dim());
  for (int c : classes) digit_skeleton(c);
  const Index n = z.dim(0), d = style_dim();
  Buffer<S> s = z.values();
  for (Index i = 0; i < n; ++i) s[i * d + kNoiseAmp] = std::abs(s[i * d + kNoiseAmp]);
  return Tensor<S>({n, d}, std::move(s));
}

template <typename S>
Tensor<S> AnalyticGenerator<S>::render(const Tensor<S>& styles, const std::vector<int>& classes) const {
  check_styles("analytic render", styles.rank() == 2 ? styles.dim(0) : -1, styles.rank() == 2 ? styles.dim(1) : -1,
               classes.size(), style_dim());
  const Index n = styles.dim(0);
  auto column = [&](Index j) { return scale(slice_cols(styles, j, 1), S(kAnalyticKnobScale[j])); };
  const Tensor<S> glyphs =
      glyph_field(classes, add_constant(column(kThickness), S(kAnalyticBaseThickness)), column(kRotation));
  const Tensor<S> lit =
      channel_scale(blur_by_sigma(glyphs, softplus(column(kBlurKnob))), add_constant(column(kIntensity), S(1)));
  Buffer<S> fields(n * kPlane);
  for (Index i = 0; i < n; ++i) fields.segment(i * kPlane, kPlane) = noise_.values();
  const Tensor<S> noise = channel_scale(Tensor<S>({n, 1, kSide, kSide}, std::move(fields)), column(kNoiseAmp));
  return clamp(add(lit, noise), S(0), S(1));
}

template <typename S>
Tensor<S> AnalyticGenerator<S>::neutral_style() const {
  Buffer<S> s = Buffer<S>::Zero(style_dim());
  s[kBlurKnob] = S(kBlurKnobOff);
  return Tensor<S>({1, style_dim()}, std::move(s));
}

template class AnalyticGenerator<float>;
template class AnalyticGenerator<double>;
template Tensor<float> glyph_field(const std::vector<int>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> glyph_field(const std::vector<int>&, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> blur_by_sigma(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> blur_by_sigma(const Tensor<double>&, const Tensor<double>&);

}  // namespace lsp
