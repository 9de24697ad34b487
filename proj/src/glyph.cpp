#include "lsp/glyph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "lsp/error.hpp"

namespace lsp {
namespace {

using Eigen::Vector2d;
using Stroke = std::vector<Vector2d>;

Stroke line(std::initializer_list<Vector2d> points) { return Stroke(points); }

// Angles in degrees, measured with y pointing down (so -90 is the top of the circle).
Stroke arc(Vector2d centre, double rx, double ry, double from_deg, double to_deg, int segments = 16) {
  Stroke out;
  for (int i = 0; i <= segments; ++i) {
    const double a = (from_deg + (to_deg - from_deg) * i / segments) * std::numbers::pi / 180.0;
    out.emplace_back(centre.x() + rx * std::cos(a), centre.y() + ry * std::sin(a));
  }
  return out;
}

std::array<GlyphSkeleton, 10> build_skeletons() {
  std::array<GlyphSkeleton, 10> g;
  g[0].strokes = {arc({0, 0}, 0.42, 0.72, 0, 360, 32)};
  g[1].strokes = {line({{0.05, -0.75}, {0.05, 0.75}}), line({{-0.22, -0.48}, {0.05, -0.75}})};
  g[2].strokes = {arc({0, -0.35}, 0.4, 0.38, 180, 380, 16), line({{0.37, -0.22}, {-0.45, 0.75}, {0.47, 0.75}})};
  g[3].strokes = {arc({0, -0.38}, 0.36, 0.36, -160, 90, 16), arc({0, 0.36}, 0.4, 0.38, -90, 160, 16)};
  g[4].strokes = {line({{0.22, -0.75}, {-0.45, 0.3}, {0.47, 0.3}}), line({{0.22, -0.75}, {0.22, 0.75}})};
  g[5].strokes = {line({{0.4, -0.75}, {-0.32, -0.75}, {-0.38, -0.08}}), arc({0, 0.3}, 0.42, 0.43, -130, 150, 16)};
  g[6].strokes = {line({{0.28, -0.75}, {-0.36, 0.12}}), arc({0, 0.33}, 0.4, 0.4, 0, 360, 24)};
  g[7].strokes = {line({{-0.45, -0.75}, {0.45, -0.75}, {-0.08, 0.75}})};
  g[8].strokes = {arc({0, -0.4}, 0.32, 0.33, 0, 360, 24), arc({0, 0.36}, 0.4, 0.39, 0, 360, 24)};
  g[9].strokes = {arc({0, -0.33}, 0.4, 0.4, 0, 360, 24), line({{0.4, -0.3}, {0.22, 0.75}})};
  return g;
}

}  // namespace

const GlyphSkeleton& digit_skeleton(int label) {
  static const std::array<GlyphSkeleton, 10> skeletons = build_skeletons();
  if (label < 0 || label >= 10) throw Error(ErrorKind::kUnknownLabel, "no glyph for label " + std::to_string(label));
  return skeletons[label];
}

StrokeDistance stroke_distance(const GlyphSkeleton& glyph, const GlyphPose& pose, double px, double py, int height,
                               int width) {
  const Vector2d origin = Vector2d(0.5 * width, 0.5 * height) + pose.offset;
  const double c = std::cos(pose.rotation), s = std::sin(pose.rotation);
  const double k = pose.scale * kPixelsPerUnit;
  auto place = [&](const Vector2d& q) {
    const Vector2d sheared(pose.aspect * q.x() + pose.shear * q.y(), q.y());
    return Vector2d(origin.x() + k * (c * sheared.x() - s * sheared.y()),
                    origin.y() + k * (s * sheared.x() + c * sheared.y()));
  };
  const Vector2d p(px, py);
  double best = std::numeric_limits<double>::infinity();
  Vector2d nearest = origin;
  for (const auto& stroke : glyph.strokes) {
    Vector2d a = place(stroke.front());
    for (std::size_t i = 1; i < stroke.size(); ++i) {
      const Vector2d b = place(stroke[i]);
      const Vector2d ab = b - a;
      const double len2 = ab.squaredNorm();
      const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
      const Vector2d q = a + t * ab;
      const double d = (p - q).norm();
      if (d < best) {
        best = d;
        nearest = q;
      }
      a = b;
    }
  }
  // The nearest point moves with the rotation as J (q - origin); J is a quarter turn.
  const Vector2d r = nearest - origin;
  const Vector2d dq(-r.y(), r.x());
  const double d_rotation = best > 1e-12 ? -(p - nearest).dot(dq) / best : 0.0;
  return {best, d_rotation};
}

}  // namespace lsp
