#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace lsp {

/// Stroke skeleton of one digit: polylines in glyph units, x to the right,
/// y downwards, roughly inside [-0.5, 0.5] x [-0.8, 0.8].
struct GlyphSkeleton {
  std::vector<std::vector<Eigen::Vector2d>> strokes;
};

const GlyphSkeleton& digit_skeleton(int label);

/// Placement of a skeleton on the pixel grid. A pixel centre p maps to glyph
/// coordinates q = A^{-1} R(-rotation) (p - centre) / (scale * kPixelsPerUnit).
struct GlyphPose {
  double rotation = 0;   // radians, counter-clockwise on screen
  double scale = 1;
  double shear = 0;      // x += shear * y in glyph units
  double aspect = 1;     // x stretch
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();  // pixels
};

inline constexpr double kPixelsPerUnit = 11.0;
/// Steepness of the antialiased stroke profile, per pixel.
inline constexpr double kStrokeSharpness = 2.5;

/// Distance in pixels from pixel centre (px, py) to the nearest stroke, and the
/// gradient of that distance with respect to the rotation angle.
struct StrokeDistance {
  double distance;
  double d_rotation;
};

StrokeDistance stroke_distance(const GlyphSkeleton& glyph, const GlyphPose& pose, double px, double py, int height,
                               int width);

/// Antialiased coverage of a stroke of the given width at distance d (pixels).
inline double stroke_coverage(double distance, double thickness) {
  return 1.0 / (1.0 + std::exp(-kStrokeSharpness * (0.5 * thickness + 0.5 - distance)));
}

}  // namespace lsp
