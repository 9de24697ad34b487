#include "lsp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/glyph.hpp"

namespace lsp {

void SeverityConfig::validate() const {
  const bool disabled = std::all_of(noise_sigma.begin(), noise_sigma.end(), [](double v) { return v == 0; }) &&
                        std::all_of(blur_sigma.begin(), blur_sigma.end(), [](double v) { return v == 0; });
  if (disabled) return;
  for (int i = 0; i < 3; ++i) {
    if (noise_sigma[i] < 0 || blur_sigma[i] < 0) throw Error(ErrorKind::kConfig, "negative severity sigma");
    if (i > 0 && (noise_sigma[i] <= noise_sigma[i - 1] || blur_sigma[i] <= blur_sigma[i - 1])) {
      throw Error(ErrorKind::kConfig, "severity sigmas must increase strictly with level");
    }
    if (blur_radius[i] < std::ceil(2 * blur_sigma[i])) {
      throw Error(ErrorKind::kConfig, "blur radius at level " + std::to_string(i + 1) + " is below ceil(2 sigma)");
    }
  }
}

Image gaussian_noise(const Image& image, double sigma, std::mt19937_64& rng) {
  if (sigma < 0) throw Error(ErrorKind::kConfig, "noise sigma must be nonnegative");
  if (sigma == 0) return image;
  std::normal_distribution<double> normal(0.0, sigma);
  Image out(image.rows(), image.cols());
  for (Index i = 0; i < image.size(); ++i) {
    out.data()[i] = static_cast<float>(std::clamp(image.data()[i] + normal(rng), 0.0, 1.0));
  }
  return out;
}

Eigen::ArrayXd gaussian_kernel(double sigma, int radius) {
  Eigen::ArrayXd k(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t) k[t + radius] = std::exp(-(t * t) / (2 * sigma * sigma));
  return k / k.sum();
}

Image gaussian_blur(const Image& image, double sigma, int radius) {
  if (sigma < 0 || radius < 0) throw Error(ErrorKind::kConfig, "blur sigma and radius must be nonnegative");
  if (sigma == 0 || radius == 0) return image;
  const Eigen::ArrayXd k = gaussian_kernel(sigma, radius);
  const Index rows = image.rows(), cols = image.cols();
  Eigen::ArrayXXd horizontal(rows, cols);
  for (Index y = 0; y < rows; ++y) {
    for (Index x = 0; x < cols; ++x) {
      double acc = 0, norm = 0;
      for (int t = -radius; t <= radius; ++t) {
        const Index xx = x + t;
        if (xx < 0 || xx >= cols) continue;
        acc += k[t + radius] * image(y, xx);
        norm += k[t + radius];
      }
      horizontal(y, x) = acc / norm;
    }
  }
  Image out(rows, cols);
  for (Index y = 0; y < rows; ++y) {
    for (Index x = 0; x < cols; ++x) {
      double acc = 0, norm = 0;
      for (int t = -radius; t <= radius; ++t) {
        const Index yy = y + t;
        if (yy < 0 || yy >= rows) continue;
        acc += k[t + radius] * horizontal(yy, x);
        norm += k[t + radius];
      }
      out(y, x) = static_cast<float>(std::clamp(acc / norm, 0.0, 1.0));
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  return gaussian_blur(image, sigma, static_cast<int>(std::ceil(2 * sigma)));
}

namespace {

LabeledImage corrupt_one(const LabeledImage& in, const SeverityConfig& config, Severity severity,
                         std::mt19937_64& rng) {
  LabeledImage out = in;
  out.image = gaussian_blur(in.image, config.blur_sigma[severity.blur_level - 1],
                            config.blur_radius[severity.blur_level - 1]);
  out.image = gaussian_noise(out.image, config.noise_sigma[severity.noise_level - 1], rng);
  out.corrupted = true;
  out.severity = severity;
  return out;
}

}  // namespace

Dataset corrupt_dataset(const Dataset& clean, const SeverityConfig& config, std::uint64_t seed) {
  if (clean.empty()) throw Error(ErrorKind::kEmptyDataset, "nothing to corrupt");
  config.validate();
  const std::size_t clean_count = clean.size() / 2;
  Dataset out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (i < clean_count) {
      LabeledImage keep = clean[i];
      keep.corrupted = false;
      keep.severity.reset();
      out.push_back(std::move(keep));
      continue;
    }
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(i));
    std::uniform_int_distribution<int> level(1, 3);
    Severity severity;
    severity.blur_level = level(rng);
    severity.noise_level = level(rng);
    out.push_back(corrupt_one(clean[i], config, severity, rng));
  }
  return out;
}

Dataset corrupt_all(const Dataset& clean, const SeverityConfig& config, Severity severity, std::uint64_t seed) {
  if (clean.empty()) throw Error(ErrorKind::kEmptyDataset, "nothing to corrupt");
  config.validate();
  Dataset out;
  out.reserve(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(i));
    out.push_back(corrupt_one(clean[i], config, severity, rng));
  }
  return out;
}

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) throw Error(ErrorKind::kTruncatedFile, what + " header is truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const std::string images = read_file(images_path);
  const std::string labels = read_file(labels_path);
  if (read_be32(images, 0, "image file") != 0x00000803u) throw Error(ErrorKind::kBadMagic, images_path.string());
  if (read_be32(labels, 0, "label file") != 0x00000801u) throw Error(ErrorKind::kBadMagic, labels_path.string());
  const std::uint32_t count = read_be32(images, 4, "image file");
  const std::uint32_t rows = read_be32(images, 8, "image file");
  const std::uint32_t cols = read_be32(images, 12, "image file");
  const std::uint32_t label_count = read_be32(labels, 4, "label file");
  if (count != label_count) {
    throw Error(ErrorKind::kCountMismatch, std::to_string(count) + " images vs " + std::to_string(label_count) +
                                               " labels");
  }
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  if (images.size() < 16 + pixels * count) throw Error(ErrorKind::kTruncatedFile, images_path.string());
  if (labels.size() < 8 + static_cast<std::size_t>(count)) throw Error(ErrorKind::kTruncatedFile, labels_path.string());
  Dataset out(count);
  for (std::uint32_t n = 0; n < count; ++n) {
    Image img(rows, cols);
    for (std::size_t p = 0; p < pixels; ++p) {
      img.data()[p] = static_cast<unsigned char>(images[16 + n * pixels + p]) / 255.0f;
    }
    out[n].image = std::move(img);
    out[n].label = static_cast<unsigned char>(labels[8 + n]);
  }
  return out;
}

void write_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
               const Dataset& data) {
  std::string images, labels;
  put_be32(images, 0x00000803u);
  put_be32(images, static_cast<std::uint32_t>(data.size()));
  put_be32(images, data.empty() ? kImageSize : static_cast<std::uint32_t>(data.front().image.rows()));
  put_be32(images, data.empty() ? kImageSize : static_cast<std::uint32_t>(data.front().image.cols()));
  put_be32(labels, 0x00000801u);
  put_be32(labels, static_cast<std::uint32_t>(data.size()));
  for (const auto& s : data) {
    for (Index p = 0; p < s.image.size(); ++p) {
      images.push_back(static_cast<char>(std::lround(std::clamp(s.image.data()[p], 0.0f, 1.0f) * 255.0f)));
    }
    labels.push_back(static_cast<char>(s.label));
  }
  write_file(images_path, images);
  write_file(labels_path, labels);
}

namespace {

Image render(const GlyphSkeleton& glyph, double thickness, const GlyphPose& pose) {
  thickness = std::max(thickness, 1.0);
  Image img(kImageSize, kImageSize);
  for (int y = 0; y < kImageSize; ++y) {
    for (int x = 0; x < kImageSize; ++x) {
      const double d = stroke_distance(glyph, pose, x + 0.5, y + 0.5, kImageSize, kImageSize).distance;
      img(y, x) = static_cast<float>(stroke_coverage(d, thickness));
    }
  }
  return img;
}

/// Smooth random deformation of the skeleton, amplitude in glyph units.
GlyphSkeleton warp(const GlyphSkeleton& glyph, double amplitude, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double ax = amplitude * u(rng), ay = amplitude * u(rng);
  const double fx = 2.0 + u(rng), fy = 2.0 + u(rng);
  const double px = 3.2 * u(rng), py = 3.2 * u(rng);
  const double bend = amplitude * u(rng);
  GlyphSkeleton out = glyph;
  for (auto& stroke : out.strokes) {
    for (auto& q : stroke) {
      const Eigen::Vector2d p = q;
      q.x() += ax * std::sin(fx * p.y() + px) + bend * p.y() * p.y();
      q.y() += ay * std::sin(fy * p.x() + py);
    }
  }
  return out;
}

}  // namespace

Image render_glyph(int label, const GlyphStyle& style, std::mt19937_64& rng) {
  const GlyphSkeleton& glyph = digit_skeleton(label);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  GlyphPose pose;
  pose.rotation = style.rotation;
  pose.scale = style.scale;
  pose.shear = 0.3 * u(rng);
  pose.aspect = 1.0 + 0.2 * u(rng);
  pose.offset = Eigen::Vector2d(2.0 * u(rng), 2.0 * u(rng));
  return render(warp(glyph, 0.14, rng), style.thickness, pose);
}

Image render_canonical_glyph(int label, const GlyphStyle& style) {
  GlyphPose pose;
  pose.rotation = style.rotation;
  pose.scale = style.scale;
  return render(digit_skeleton(label), style.thickness, pose);
}

Dataset procedural_dataset(std::size_t count, std::uint64_t seed) {
  Dataset out(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * (i + 1)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GlyphStyle style;
    style.thickness = 1.2 + 2.2 * u(rng);
    style.rotation = -0.35 + 0.7 * u(rng);
    style.scale = 0.8 + 0.32 * u(rng);
    out[i].label = static_cast<int>(i % kNumClasses);
    out[i].image = render_glyph(out[i].label, style, rng);
  }
  return out;
}

namespace {

nlohmann::json severity_json(const SeverityConfig& c) {
  return {{"noise_sigma", c.noise_sigma}, {"blur_sigma", c.blur_sigma}, {"blur_radius", c.blur_radius}};
}

}  // namespace

void save_dataset_cache(const std::filesystem::path& stem, const Dataset& data, const DatasetCacheInfo& info) {
  if (data.empty()) throw Error(ErrorKind::kEmptyDataset, "refusing to cache an empty dataset");
  const Index n = static_cast<Index>(data.size());
  const Index h = data.front().image.rows(), w = data.front().image.cols();
  Buffer<float> images(n * h * w), labels(n), corrupted(n), blur(n), noise(n);
  for (Index i = 0; i < n; ++i) {
    const auto& s = data[i];
    if (s.image.rows() != h || s.image.cols() != w) throw Error(ErrorKind::kShapeMismatch, "ragged dataset");
    images.segment(i * h * w, h * w) = Eigen::Map<const Buffer<float>>(s.image.data(), h * w);
    labels[i] = static_cast<float>(s.label);
    corrupted[i] = s.corrupted ? 1.0f : 0.0f;
    blur[i] = s.severity ? static_cast<float>(s.severity->blur_level) : 0.0f;
    noise[i] = s.severity ? static_cast<float>(s.severity->noise_level) : 0.0f;
  }
  ParameterSet<float> blob;
  blob.add("images", Tensor<float>({n, h, w}, std::move(images)));
  blob.add("labels", Tensor<float>({n}, std::move(labels)));
  blob.add("corrupted", Tensor<float>({n}, std::move(corrupted)));
  blob.add("blur_level", Tensor<float>({n}, std::move(blur)));
  blob.add("noise_level", Tensor<float>({n}, std::move(noise)));
  save_checkpoint(std::filesystem::path(stem).concat(".lpt"), blob);

  nlohmann::ordered_json sidecar = {{"schema_version", 1},
                                    {"count", info.count},
                                    {"clean_count", info.clean_count},
                                    {"severity_config", severity_json(info.severity)},
                                    {"seed", info.seed},
                                    {"source", info.source}};
  write_file(std::filesystem::path(stem).concat(".json"), sidecar.dump(2) + "\n");
}

Dataset load_dataset_cache(const std::filesystem::path& stem, DatasetCacheInfo* info) {
  const auto blob = load_checkpoint<float>(std::filesystem::path(stem).concat(".lpt"));
  const Tensor<float>& images = blob.get("images");
  if (images.rank() != 3) throw Error(ErrorKind::kShapeMismatch, "dataset images must be N x H x W");
  const Index n = images.dim(0), h = images.dim(1), w = images.dim(2);
  Dataset out(n);
  for (Index i = 0; i < n; ++i) {
    out[i].image = Eigen::Map<const Image>(images.values().data() + i * h * w, h, w);
    out[i].label = static_cast<int>(blob.get("labels")[i]);
    out[i].corrupted = blob.get("corrupted")[i] != 0;
    if (out[i].corrupted) {
      out[i].severity = Severity{static_cast<int>(blob.get("blur_level")[i]),
                                 static_cast<int>(blob.get("noise_level")[i])};
    }
  }
  if (info) {
    const auto sidecar = nlohmann::json::parse(read_file(std::filesystem::path(stem).concat(".json")));
    info->count = sidecar.at("count");
    info->clean_count = sidecar.at("clean_count");
    info->seed = sidecar.at("seed");
    info->source = sidecar.value("source", "procedural");
    const auto& sev = sidecar.at("severity_config");
    info->severity.noise_sigma = sev.at("noise_sigma");
    info->severity.blur_sigma = sev.at("blur_sigma");
    info->severity.blur_radius = sev.at("blur_radius");
  }
  return out;
}

template <typename S>
Tensor<S> to_batch(const Dataset& data, std::size_t begin, std::size_t end) {
  if (begin >= end || end > data.size()) throw Error(ErrorKind::kEmptyDataset, "empty batch range");
  const Index h = data[begin].image.rows(), w = data[begin].image.cols();
  const Index n = static_cast<Index>(end - begin);
  Buffer<S> v(n * h * w);
  for (Index i = 0; i < n; ++i) {
    const Image& img = data[begin + i].image;
    if (img.rows() != h || img.cols() != w) throw Error(ErrorKind::kShapeMismatch, "ragged batch");
    v.segment(i * h * w, h * w) = Eigen::Map<const Buffer<float>>(img.data(), h * w).template cast<S>();
  }
  return Tensor<S>({n, 1, h, w}, std::move(v));
}

template <typename S>
Tensor<S> to_tensor(const Image& image) {
  return Tensor<S>({1, 1, image.rows(), image.cols()},
                   Eigen::Map<const Buffer<float>>(image.data(), image.size()).template cast<S>());
}

template <typename S>
Image to_image(const Tensor<S>& t, Index index) {
  const Index h = t.dim(-2), w = t.dim(-1);
  if (t.size() < (index + 1) * h * w) throw Error(ErrorKind::kShapeMismatch, "image index out of range");
  Image img(h, w);
  for (Index p = 0; p < h * w; ++p) img.data()[p] = static_cast<float>(t[index * h * w + p]);
  return img;
}

std::vector<int> labels_of(const Dataset& data, std::size_t begin, std::size_t end) {
  std::vector<int> out;
  for (std::size_t i = begin; i < end; ++i) out.push_back(data[i].label);
  return out;
}

template Tensor<float> to_batch(const Dataset&, std::size_t, std::size_t);
template Tensor<double> to_batch(const Dataset&, std::size_t, std::size_t);
template Tensor<float> to_tensor(const Image&);
template Tensor<double> to_tensor(const Image&);
template Image to_image(const Tensor<float>&, Index);
template Image to_image(const Tensor<double>&, Index);

}  // namespace lsp
