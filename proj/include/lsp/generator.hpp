#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lsp/data.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

/// Slice of the flat style vector that modulates one synthesis layer.
struct StyleSlot {
  std::string layer;
  Index offset = 0;
  Index length = 0;
};

struct StyleLayout {
  std::vector<StyleSlot> slots;

  Index dim() const;
  /// (slot, position within the slot) of a flat index.
  std::pair<std::size_t, Index> locate(Index flat) const;
  Index flat_index(std::size_t slot, Index position) const;
};

/// A conditional image generator with an explicit style space. Style vectors are
/// rows of an N x style_dim() tensor.
template <typename Scalar>
class Generator {
 public:
  virtual ~Generator() = default;

  virtual Index style_dim() const = 0;
  virtual Index latent_dim() const = 0;
  /// Content-derived identifier recorded in population provenance.
  virtual std::string id() const = 0;
  virtual std::string dim_name(Index j) const = 0;

  /// Style vectors for latent draws z (N x latent_dim) of the given classes.
  virtual Tensor<Scalar> styles(const Tensor<Scalar>& z, const std::vector<int>& classes) const = 0;
  /// N x 1 x 28 x 28 images in [0, 1], differentiable with respect to the styles.
  virtual Tensor<Scalar> render(const Tensor<Scalar>& styles, const std::vector<int>& classes) const = 0;
};

inline constexpr Index kLatentDim = 64;
inline constexpr Index kMappedDim = 64;
inline constexpr Index kConstChannels = 64;
inline constexpr Index kConstSize = 7;
inline constexpr const char* kGeneratorArchitecture = "map74-64-64|const64x7|mod64-32@7|up|mod32-16@14|up|mod16-16@28|rgb1";

/// Synthesis layers in order: name, input channels (= style width), output channels, resolution.
struct SynthesisLayer {
  const char* name;
  Index in_channels;
  Index out_channels;
  Index size;
};
const std::vector<SynthesisLayer>& synthesis_layers();
const StyleLayout& generator_layout();

struct GeneratorInfo {
  std::string regime = "none";  // reconstruction | adversarial | none
  int epochs = 0;
  double lr = 0;
  std::uint64_t seed = 0;
  double final_loss = -1;
  double reconstruction_mse = -1;  // on held-out data, when measured
};

/// Mapping network, per-layer style affines, modulated synthesis, the image
/// encoder used by reconstruction training, and frozen per-layer noise maps.
/// Parameter names starting with "frozen." are never optimised.
template <typename Scalar>
class LearnedGenerator final : public Generator<Scalar> {
 public:
  ParameterSet<Scalar> params;
  GeneratorInfo info;

  Index style_dim() const override;
  Index latent_dim() const override { return kLatentDim; }
  std::string id() const override;
  std::string dim_name(Index j) const override;
  Tensor<Scalar> styles(const Tensor<Scalar>& z, const std::vector<int>& classes) const override;
  Tensor<Scalar> render(const Tensor<Scalar>& styles, const std::vector<int>& classes) const override;

  template <typename Other>
  LearnedGenerator<Other> cast() const {
    LearnedGenerator<Other> out;
    out.params = params.template cast<Other>();
    out.info = info;
    return out;
  }
};

template <typename Scalar>
LearnedGenerator<Scalar> init_generator(std::uint64_t seed);

/// w = FC(leaky(FC([z, one_hot(class)]))), N x kMappedDim.
template <typename Scalar>
Tensor<Scalar> mapping_forward(const ParameterSet<Scalar>& params, const Tensor<Scalar>& z,
                               const std::vector<int>& classes);
/// s = concat over layers of (A_l w + b_l), N x d_s.
template <typename Scalar>
Tensor<Scalar> style_affine(const ParameterSet<Scalar>& params, const Tensor<Scalar>& w);
/// Modulated, demodulated convolutions from the learned constant; N x 1 x 28 x 28.
template <typename Scalar>
Tensor<Scalar> synthesize(const ParameterSet<Scalar>& params, const Tensor<Scalar>& styles);

template <typename Scalar>
struct Generated {
  Tensor<Scalar> styles;
  Tensor<Scalar> images;
};
template <typename Scalar>
Generated<Scalar> generate(const LearnedGenerator<Scalar>& gen, const Tensor<Scalar>& z,
                           const std::vector<int>& classes);

/// Per-sample convolution weights of one layer after modulation by a single
/// style vector (d_s) and demodulation: C_out x C_in x 3 x 3.
template <typename Scalar>
Tensor<Scalar> effective_weights(const ParameterSet<Scalar>& params, const Tensor<Scalar>& style,
                                 std::size_t layer);

/// Encoder posterior mean and log-variance for N x 1 x 28 x 28 images.
template <typename Scalar>
struct Encoded {
  Tensor<Scalar> mean;
  Tensor<Scalar> log_var;
};
template <typename Scalar>
Encoded<Scalar> encode(const ParameterSet<Scalar>& params, const Tensor<Scalar>& images);

/// Decodes the encoder mean; used to measure reconstruction error.
template <typename Scalar>
Tensor<Scalar> reconstruct(const LearnedGenerator<Scalar>& gen, const Dataset& data, std::size_t begin,
                           std::size_t end);
template <typename Scalar>
double reconstruction_mse(const LearnedGenerator<Scalar>& gen, const Dataset& data);

enum class Regime { kReconstruction, kAdversarial };
std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

struct GeneratorTrainConfig {
  Regime regime = Regime::kReconstruction;
  int epochs = 6;
  double lr = 2e-3;
  int batch = 32;
  std::uint64_t seed = 1;
  double kl_weight = 0.1;  // per latent dimension, relative to per-pixel squared error
  double w_l2 = 1e-4;
};

/// Reconstruction: encoder q(z | x) and this generator trained jointly on
/// squared error + kl_weight * KL(q || N(0, I)) + w_l2 * mean(w^2).
/// Adversarial: non-saturating GAN loss against a class-projection discriminator.
/// Deterministic in the seed; throws DivergedTraining on a non-finite loss.
/// `progress` receives (epoch, mean loss).
LearnedGenerator<float> train_generator(const Dataset& data, const GeneratorTrainConfig& config,
                                        const std::function<void(int, double)>& progress = {});

/// `<stem>.lpt` + `<stem>.json` {schema_version, kind, architecture, d_z, d_w, d_s, layout, training, seed}.
template <typename Scalar>
void save_generator(const std::filesystem::path& stem, const LearnedGenerator<Scalar>& gen);
template <typename Scalar>
LearnedGenerator<Scalar> load_generator(const std::filesystem::path& stem);

}  // namespace lsp
