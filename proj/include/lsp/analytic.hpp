#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsp/generator.hpp"

namespace lsp {

/// Named coordinates of the analytic style vector; every index from
/// kAnalyticNamedDims on is a padding dimension with no effect on the image.
/// A style unit is one population standard deviation; kAnalyticKnobScale
/// converts it to the physical control.
enum AnalyticKnob : Index {
  kNoiseAmp = 0,   // amplitude of the frozen noise field
  kBlurKnob = 1,   // blur sigma = softplus(knob)
  kThickness = 2,  // stroke width offset from kAnalyticBaseThickness, pixels
  kRotation = 3,   // radians
  kIntensity = 4,  // ink gain offset from 1
};
inline constexpr double kAnalyticKnobScale[] = {0.15, 0.5, 0.5, 0.15, 0.1};
inline constexpr Index kAnalyticNamedDims = 5;
inline constexpr Index kAnalyticPaddingDims = 15;
inline constexpr double kAnalyticBaseThickness = 2.2;
inline constexpr int kAnalyticBlurRadius = 6;
/// Blur knob style value at which the blur is the identity to working precision.
inline constexpr double kBlurKnobOff = -40;

/// Procedural generator whose style coordinates are known corruption controls:
///   clamp((1 + intensity) * blur(glyph(class, thickness, rotation), softplus(knob))
///         + noise_amp * field, 0, 1)
/// where each control is kAnalyticKnobScale times its style coordinate.
/// with a frozen standard-normal noise field drawn from the seed.
template <typename Scalar>
class AnalyticGenerator final : public Generator<Scalar> {
 public:
  explicit AnalyticGenerator(std::uint64_t noise_seed = 0, Index padding = kAnalyticPaddingDims);

  Index style_dim() const override { return kAnalyticNamedDims + padding_; }
  Index latent_dim() const override { return style_dim(); }
  std::string id() const override;
  std::string dim_name(Index j) const override;
  /// s = z except s0 = |z0|, so noise amplitudes are non-negative.
  Tensor<Scalar> styles(const Tensor<Scalar>& z, const std::vector<int>& classes) const override;
  Tensor<Scalar> render(const Tensor<Scalar>& styles, const std::vector<int>& classes) const override;

  /// The style at which render() returns the undistorted canonical glyph.
  Tensor<Scalar> neutral_style() const;
  const Tensor<Scalar>& noise_field() const { return noise_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  Index padding_;
  Tensor<Scalar> noise_;  // 28 x 28
};

/// Anti-aliased glyphs N x 1 x 28 x 28 with per-sample stroke width and
/// rotation (both N x 1), differentiable in both.
template <typename Scalar>
Tensor<Scalar> glyph_field(const std::vector<int>& classes, const Tensor<Scalar>& thickness,
                           const Tensor<Scalar>& rotation);

/// Separable Gaussian blur with zero padding and radius kAnalyticBlurRadius;
/// per-sample sigma (N x 1), differentiable in the images and in sigma.
template <typename Scalar>
Tensor<Scalar> blur_by_sigma(const Tensor<Scalar>& images, const Tensor<Scalar>& sigma);

}  // namespace lsp
