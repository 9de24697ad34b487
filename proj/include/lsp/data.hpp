#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "lsp/tensor.hpp"

namespace lsp {

inline constexpr int kImageSize = 28;
inline constexpr int kNumClasses = 10;

/// Grayscale image, rows x cols, intensities in [0, 1].
using Image = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Severity {
  int blur_level = 0;   // 1..3
  int noise_level = 0;  // 1..3
  bool operator==(const Severity&) const = default;
};

struct LabeledImage {
  Image image;
  int label = 0;
  bool corrupted = false;
  std::optional<Severity> severity;  // present iff corrupted
};

using Dataset = std::vector<LabeledImage>;

/// Corruption strength per severity level 1..3 (index 0 is level 1).
struct SeverityConfig {
  std::array<double, 3> noise_sigma{0.08, 0.12, 0.18};
  std::array<double, 3> blur_sigma{0.5, 1.0, 1.5};
  std::array<int, 3> blur_radius{1, 2, 3};

  /// Throws ConfigError unless sigmas increase strictly and radius >= ceil(2 sigma).
  /// An all-zero configuration (corruption disabled) is accepted.
  void validate() const;
  bool operator==(const SeverityConfig&) const = default;
};

/// clamp(image + N(0, sigma^2), 0, 1), one draw per pixel in row-major order.
Image gaussian_noise(const Image& image, double sigma, std::mt19937_64& rng);

/// Separable Gaussian blur with taps exp(-t^2 / (2 sigma^2)), |t| <= radius. Near the
/// border the in-bounds taps are renormalised to sum to one. sigma = 0 is the identity.
Image gaussian_blur(const Image& image, double sigma, int radius);
/// Radius ceil(2 sigma).
Image gaussian_blur(const Image& image, double sigma);

/// Normalised 1-D Gaussian taps k(-radius) .. k(radius).
Eigen::ArrayXd gaussian_kernel(double sigma, int radius);

/// First floor(n/2) samples pass through clean; the rest are blurred at a uniform
/// level in {1,2,3} and then noised at an independent uniform level. Sample i uses
/// its own generator seeded with seed ^ i.
Dataset corrupt_dataset(const Dataset& clean, const SeverityConfig& config, std::uint64_t seed);

/// Corrupts every sample at the given fixed levels (for robustness evaluation).
Dataset corrupt_all(const Dataset& clean, const SeverityConfig& config, Severity severity, std::uint64_t seed);

/// MNIST IDX files: images magic 0x00000803 (count, rows, cols), labels 0x00000801.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& data);

struct GlyphStyle {
  double thickness = 2.2;  // stroke width in pixels, clamped to at least 1
  double rotation = 0;     // radians
  double scale = 1;
};

/// Stroke-rendered digit. The generator perturbs slant, aspect and position
/// slightly; identical (label, style, generator state) give identical images.
Image render_glyph(int label, const GlyphStyle& style, std::mt19937_64& rng);

/// Digit with no random perturbation.
Image render_canonical_glyph(int label, const GlyphStyle& style = {});

/// Labels cycle through 0..9; styles are drawn from ranges typical of handwriting.
Dataset procedural_dataset(std::size_t count, std::uint64_t seed);

struct DatasetCacheInfo {
  std::size_t count = 0;
  std::size_t clean_count = 0;
  SeverityConfig severity;
  std::uint64_t seed = 0;
  std::string source = "procedural";
};

/// Writes `<stem>.lpt` (checkpoint blob: images, labels, corrupted, blur_level,
/// noise_level) and `<stem>.json` (sidecar).
void save_dataset_cache(const std::filesystem::path& stem, const Dataset& data, const DatasetCacheInfo& info);
Dataset load_dataset_cache(const std::filesystem::path& stem, DatasetCacheInfo* info = nullptr);

/// Stacks images into an N x 1 x H x W tensor.
template <typename Scalar>
Tensor<Scalar> to_batch(const Dataset& data, std::size_t begin, std::size_t end);
template <typename Scalar>
Tensor<Scalar> to_tensor(const Image& image);
template <typename Scalar>
Image to_image(const Tensor<Scalar>& t, Index index = 0);

std::vector<int> labels_of(const Dataset& data, std::size_t begin, std::size_t end);

}  // namespace lsp
