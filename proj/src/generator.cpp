#include "lsp/generator.hpp"

#include <cmath>
#include <random>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/ops.hpp"

namespace lsp {
namespace {

constexpr Index kKernel = 3;
constexpr double kDemodEps = 1e-8;

template <typename S>
Tensor<S> normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  Buffer<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(n(rng));
  return Tensor<S>(std::move(shape), std::move(v));
}

template <typename S>
Tensor<S> uniform_tensor(Shape shape, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Buffer<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(u(rng));
  return Tensor<S>(std::move(shape), std::move(v));
}

void check_classes(const std::vector<int>& classes, Index rows) {
  if (static_cast<Index>(classes.size()) != rows) {
    throw Error(ErrorKind::kShapeMismatch,
                std::to_string(classes.size()) + " classes for " + std::to_string(rows) + " latent rows");
  }
  for (int c : classes) {
    if (c < 0 || c >= kNumClasses) throw Error(ErrorKind::kInvalidClass, "class " + std::to_string(c));
  }
}

template <typename S>
Tensor<S> one_hot(const std::vector<int>& classes) {
  Buffer<S> v = Buffer<S>::Zero(static_cast<Index>(classes.size()) * kNumClasses);
  for (std::size_t i = 0; i < classes.size(); ++i) v[static_cast<Index>(i) * kNumClasses + classes[i]] = 1;
  return Tensor<S>({static_cast<Index>(classes.size()), kNumClasses}, std::move(v));
}

std::string layer_key(const SynthesisLayer& layer, const char* field) { return std::string(layer.name) + "." + field; }

/// Bias plus the frozen noise map scaled by its learned strength, C x H x W.
template <typename S>
Tensor<S> layer_offset(const ParameterSet<S>& p, const SynthesisLayer& layer) {
  const Index plane = layer.size * layer.size;
  const Tensor<S>& noise = p.get("frozen." + layer_key(layer, "noise"));
  Buffer<S> repeated(layer.out_channels * plane);
  for (Index c = 0; c < layer.out_channels; ++c) repeated.segment(c * plane, plane) = noise.values();
  const Tensor<S> noise_map({layer.out_channels, layer.size, layer.size}, std::move(repeated));
  const Tensor<S> bias_map = reshape(matmul(reshape(p.get(layer_key(layer, "bias")), {layer.out_channels, 1}),
                                            Tensor<S>::filled({1, plane}, S(1))),
                                     {layer.out_channels, layer.size, layer.size});
  return add(bias_map, scale_by(noise_map, p.get(layer_key(layer, "noise_strength"))));
}

template <typename S>
Tensor<S> modulated_layer(const ParameterSet<S>& p, const SynthesisLayer& layer, const Tensor<S>& x,
                          const Tensor<S>& style) {
  const Tensor<S>& kernel = p.get(layer_key(layer, "conv"));
  Tensor<S> y = conv2d(channel_scale(x, style), kernel);
  const Tensor<S> w2 = reshape(sum_groups(square(kernel), kKernel * kKernel), {layer.out_channels, layer.in_channels});
  y = channel_scale(y, rsqrt(matmul(square(style), transpose(w2)), static_cast<S>(kDemodEps)));
  return leaky_relu(add_broadcast(y, layer_offset(p, layer)));
}

}  // namespace

const std::vector<SynthesisLayer>& synthesis_layers() {
  static const std::vector<SynthesisLayer> layers = {
      {"L1", 64, 32, 7},
      {"L2", 32, 16, 14},
      {"L3", 16, 16, 28},
  };
  return layers;
}

const StyleLayout& generator_layout() {
  static const StyleLayout layout = [] {
    StyleLayout out;
    Index offset = 0;
    for (const auto& layer : synthesis_layers()) {
      out.slots.push_back({layer.name, offset, layer.in_channels});
      offset += layer.in_channels;
    }
    return out;
  }();
  return layout;
}

Index StyleLayout::dim() const {
  Index total = 0;
  for (const auto& s : slots) total += s.length;
  return total;
}

std::pair<std::size_t, Index> StyleLayout::locate(Index flat) const {
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (flat >= slots[i].offset && flat < slots[i].offset + slots[i].length) return {i, flat - slots[i].offset};
  }
  throw Error(ErrorKind::kShapeMismatch, "style index " + std::to_string(flat) + " outside the layout");
}

Index StyleLayout::flat_index(std::size_t slot, Index position) const {
  if (slot >= slots.size() || position < 0 || position >= slots[slot].length) {
    throw Error(ErrorKind::kShapeMismatch, "no style slot " + std::to_string(slot) + ":" + std::to_string(position));
  }
  return slots[slot].offset + position;
}

template <typename S>
LearnedGenerator<S> init_generator(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LearnedGenerator<S> gen;
  gen.info.seed = seed;
  auto& p = gen.params;
  p.add("map.fc1.w", uniform_tensor<S>({kMappedDim, kLatentDim + kNumClasses}, kLatentDim + kNumClasses, rng));
  p.add("map.fc1.b", Tensor<S>::zeros({kMappedDim}));
  p.add("map.fc2.w", uniform_tensor<S>({kMappedDim, kMappedDim}, kMappedDim, rng));
  p.add("map.fc2.b", Tensor<S>::zeros({kMappedDim}));
  p.add("const", normal_tensor<S>({kConstChannels, kConstSize, kConstSize}, 1.0, rng));
  for (const auto& layer : synthesis_layers()) {
    p.add(layer_key(layer, "affine.w"),
          normal_tensor<S>({layer.in_channels, kMappedDim}, 1.0 / std::sqrt(double(kMappedDim)), rng));
    p.add(layer_key(layer, "affine.b"), Tensor<S>::filled({layer.in_channels}, S(1)));
    p.add(layer_key(layer, "conv"), normal_tensor<S>({layer.out_channels, layer.in_channels, kKernel, kKernel}, 1.0, rng));
    p.add(layer_key(layer, "bias"), Tensor<S>::zeros({layer.out_channels}));
    p.add(layer_key(layer, "noise_strength"), Tensor<S>::zeros({1}));
    p.add("frozen." + layer_key(layer, "noise"), normal_tensor<S>({layer.size, layer.size}, 1.0, rng));
  }
  const Index last = synthesis_layers().back().out_channels;
  p.add("rgb.w", uniform_tensor<S>({1, last, 1, 1}, last, rng));
  p.add("rgb.b", Tensor<S>::zeros({1}));
  p.add("enc.conv1.w", uniform_tensor<S>({16, 1, 3, 3}, 9, rng));
  p.add("enc.conv1.b", Tensor<S>::zeros({16}));
  p.add("enc.conv2.w", uniform_tensor<S>({32, 16, 3, 3}, 144, rng));
  p.add("enc.conv2.b", Tensor<S>::zeros({32}));
  p.add("enc.fc.w", uniform_tensor<S>({2 * kLatentDim, 32 * 7 * 7}, 32 * 7 * 7, rng));
  p.add("enc.fc.b", Tensor<S>::zeros({2 * kLatentDim}));
  return gen;
}

template <typename S>
Tensor<S> mapping_forward(const ParameterSet<S>& p, const Tensor<S>& z, const std::vector<int>& classes) {
  if (z.rank() != 2 || z.dim(1) != kLatentDim) {
    throw Error(ErrorKind::kShapeMismatch, "latent codes must be N x 64, got " + shape_string(z.shape()));
  }
  check_classes(classes, z.dim(0));
  const Tensor<S> input = concat<S>({z, one_hot<S>(classes)});
  const Tensor<S> h = leaky_relu(affine(input, p.get("map.fc1.w"), p.get("map.fc1.b")));
  return affine(h, p.get("map.fc2.w"), p.get("map.fc2.b"));
}

template <typename S>
Tensor<S> style_affine(const ParameterSet<S>& p, const Tensor<S>& w) {
  if (w.rank() != 2 || w.dim(1) != kMappedDim) {
    throw Error(ErrorKind::kShapeMismatch, "mapped codes must be N x 64, got " + shape_string(w.shape()));
  }
  std::vector<Tensor<S>> parts;
  for (const auto& layer : synthesis_layers()) {
    parts.push_back(affine(w, p.get(layer_key(layer, "affine.w")), p.get(layer_key(layer, "affine.b"))));
  }
  return concat(parts);
}

template <typename S>
Tensor<S> synthesize(const ParameterSet<S>& p, const Tensor<S>& styles) {
  const StyleLayout& layout = generator_layout();
  if (styles.rank() != 2 || styles.dim(1) != layout.dim()) {
    throw Error(ErrorKind::kShapeMismatch, "styles must be N x " + std::to_string(layout.dim()) + ", got " +
                                               shape_string(styles.shape()));
  }
  const Index n = styles.dim(0);
  Tensor<S> x = add_broadcast(Tensor<S>::zeros({n, kConstChannels, kConstSize, kConstSize}), p.get("const"));
  const auto& layers = synthesis_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0 && layers[l].size != layers[l - 1].size) x = upsample2x(x);
    x = modulated_layer(p, layers[l], x, slice_cols(styles, layout.slots[l].offset, layout.slots[l].length));
  }
  return sigmoid(conv2d(x, p.get("rgb.w"), p.get("rgb.b")));
}

template <typename S>
Generated<S> generate(const LearnedGenerator<S>& gen, const Tensor<S>& z, const std::vector<int>& classes) {
  Tensor<S> s = gen.styles(z, classes);
  Tensor<S> images = synthesize(gen.params, s);
  return {std::move(s), std::move(images)};
}

template <typename S>
Tensor<S> effective_weights(const ParameterSet<S>& p, const Tensor<S>& style, std::size_t layer) {
  const StyleLayout& layout = generator_layout();
  if (style.size() != layout.dim()) {
    throw Error(ErrorKind::kShapeMismatch, "style vector of size " + std::to_string(style.size()));
  }
  const SynthesisLayer& spec = synthesis_layers().at(layer);
  const Index taps = kKernel * kKernel;
  Buffer<S> w = p.get(layer_key(spec, "conv")).values();
  for (Index o = 0; o < spec.out_channels; ++o) {
    for (Index i = 0; i < spec.in_channels; ++i) {
      w.segment((o * spec.in_channels + i) * taps, taps) *= style[layout.slots[layer].offset + i];
    }
    auto row = w.segment(o * spec.in_channels * taps, spec.in_channels * taps);
    row /= std::sqrt(row.square().sum() + static_cast<S>(kDemodEps));
  }
  return Tensor<S>({spec.out_channels, spec.in_channels, kKernel, kKernel}, std::move(w));
}

template <typename S>
Encoded<S> encode(const ParameterSet<S>& p, const Tensor<S>& images) {
  const Index n = images.dim(0);
  Tensor<S> h = leaky_relu(conv2d(images, p.get("enc.conv1.w"), p.get("enc.conv1.b"), 2));
  h = leaky_relu(conv2d(h, p.get("enc.conv2.w"), p.get("enc.conv2.b"), 2));
  const Tensor<S> out = affine(reshape(h, {n, 32 * 7 * 7}), p.get("enc.fc.w"), p.get("enc.fc.b"));
  return {slice_cols(out, 0, kLatentDim), slice_cols(out, kLatentDim, kLatentDim)};
}

template <typename S>
Tensor<S> reconstruct(const LearnedGenerator<S>& gen, const Dataset& data, std::size_t begin, std::size_t end) {
  const Encoded<S> e = encode(gen.params, to_batch<S>(data, begin, end));
  return synthesize(gen.params, gen.styles(e.mean, labels_of(data, begin, end)));
}

template <typename S>
double reconstruction_mse(const LearnedGenerator<S>& gen, const Dataset& data) {
  if (data.empty()) throw Error(ErrorKind::kEmptyDataset, "nothing to reconstruct");
  double total = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += 256) {
    const std::size_t end = std::min(data.size(), begin + 256);
    const Tensor<S> target = to_batch<S>(data, begin, end);
    total += static_cast<double>((reconstruct(gen, data, begin, end).values() - target.values()).square().sum());
  }
  return total / static_cast<double>(data.size() * kImageSize * kImageSize);
}

template <typename S>
Index LearnedGenerator<S>::style_dim() const {
  return generator_layout().dim();
}

template <typename S>
std::string LearnedGenerator<S>::id() const {
  return "learned-" + fingerprint(params);
}

template <typename S>
std::string LearnedGenerator<S>::dim_name(Index j) const {
  const auto [slot, position] = generator_layout().locate(j);
  return generator_layout().slots[slot].layer + "[" + std::to_string(position) + "]";
}

template <typename S>
Tensor<S> LearnedGenerator<S>::styles(const Tensor<S>& z, const std::vector<int>& classes) const {
  return style_affine(params, mapping_forward(params, z, classes));
}

template <typename S>
Tensor<S> LearnedGenerator<S>::render(const Tensor<S>& styles, const std::vector<int>&) const {
  return synthesize(params, styles);
}

std::string to_string(Regime regime) {
  return regime == Regime::kReconstruction ? "reconstruction" : "adversarial";
}

Regime parse_regime(const std::string& name) {
  if (name == "reconstruction") return Regime::kReconstruction;
  if (name == "adversarial") return Regime::kAdversarial;
  throw Error(ErrorKind::kConfig, "unknown training regime '" + name + "'");
}

template <typename S>
void save_generator(const std::filesystem::path& stem, const LearnedGenerator<S>& gen) {
  save_checkpoint(std::filesystem::path(stem).concat(".lpt"), gen.params);
  nlohmann::ordered_json layout = nlohmann::ordered_json::array();
  for (const auto& slot : generator_layout().slots) {
    layout.push_back({{"layer", slot.layer}, {"offset", slot.offset}, {"length", slot.length}});
  }
  const nlohmann::ordered_json sidecar = {
      {"schema_version", 1},
      {"kind", "learned"},
      {"architecture", kGeneratorArchitecture},
      {"d_z", kLatentDim},
      {"d_w", kMappedDim},
      {"d_s", generator_layout().dim()},
      {"layout", layout},
      {"training",
       {{"regime", gen.info.regime}, {"epochs", gen.info.epochs}, {"lr", gen.info.lr}, {"final_loss", gen.info.final_loss},
        {"reconstruction_mse", gen.info.reconstruction_mse}}},
      {"seed", gen.info.seed}};
  write_file(std::filesystem::path(stem).concat(".json"), sidecar.dump(2) + "\n");
}

template <typename S>
LearnedGenerator<S> load_generator(const std::filesystem::path& stem) {
  const auto sidecar = nlohmann::json::parse(read_file(std::filesystem::path(stem).concat(".json")));
  if (sidecar.value("kind", "") != "learned" || sidecar.value("architecture", "") != kGeneratorArchitecture) {
    throw Error(ErrorKind::kShapeMismatch, "not a checkpoint of this generator architecture: " + stem.string());
  }
  if (sidecar.value("d_s", Index{0}) != generator_layout().dim()) {
    throw Error(ErrorKind::kShapeMismatch, "style dimension of " + stem.string() + " disagrees with the architecture");
  }
  LearnedGenerator<S> gen;
  gen.params = load_checkpoint<S>(std::filesystem::path(stem).concat(".lpt"));
  const auto& training = sidecar.at("training");
  gen.info.regime = training.at("regime");
  gen.info.epochs = training.at("epochs");
  gen.info.lr = training.at("lr");
  gen.info.final_loss = training.at("final_loss");
  gen.info.reconstruction_mse = training.value("reconstruction_mse", -1.0);
  gen.info.seed = sidecar.at("seed");
  return gen;
}

#define LSP_INSTANTIATE_GENERATOR(S)                                                                    \
  template class LearnedGenerator<S>;                                                                   \
  template LearnedGenerator<S> init_generator(std::uint64_t);                                           \
  template Tensor<S> mapping_forward(const ParameterSet<S>&, const Tensor<S>&, const std::vector<int>&); \
  template Tensor<S> style_affine(const ParameterSet<S>&, const Tensor<S>&);                            \
  template Tensor<S> synthesize(const ParameterSet<S>&, const Tensor<S>&);                              \
  template Generated<S> generate(const LearnedGenerator<S>&, const Tensor<S>&, const std::vector<int>&); \
  template Tensor<S> effective_weights(const ParameterSet<S>&, const Tensor<S>&, std::size_t);          \
  template Encoded<S> encode(const ParameterSet<S>&, const Tensor<S>&);                                 \
  template Tensor<S> reconstruct(const LearnedGenerator<S>&, const Dataset&, std::size_t, std::size_t); \
  template double reconstruction_mse(const LearnedGenerator<S>&, const Dataset&);                       \
  template void save_generator(const std::filesystem::path&, const LearnedGenerator<S>&);               \
  template LearnedGenerator<S> load_generator(const std::filesystem::path&);

LSP_INSTANTIATE_GENERATOR(float)
LSP_INSTANTIATE_GENERATOR(double)

}  // namespace lsp
