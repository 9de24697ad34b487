#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "lsp/generator.hpp"
#include "lsp/ops.hpp"
#include "lsp/optim.hpp"

namespace lsp {
namespace {

using Batch = std::vector<std::size_t>;

bool is_frozen(const std::string& name) { return name.rfind("frozen.", 0) == 0; }

Tensor<float> gaussian_tensor(Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Buffer<float> v(numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor<float>(std::move(shape), std::move(v));
}

/// Gradients for every entry of `tracked`, zero for frozen entries.
std::vector<Tensor<float>> collect(const Gradients<float>& grads, const ParameterSet<float>& tracked) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < tracked.size(); ++i) {
    out.push_back(is_frozen(tracked.name(i)) ? Tensor<float>::zeros(tracked.at(i).shape()) : grads.of(tracked.at(i)));
  }
  return out;
}

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::kDivergedTraining, "generator loss is not finite at epoch " + std::to_string(epoch));
  }
}

Dataset gather(const Dataset& data, const Batch& order, std::size_t begin, std::size_t end) {
  Dataset out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(data[order[i]]);
  return out;
}

/// Loss of one reconstruction step; the tape holds the graph.
Tensor<float> reconstruction_loss(const ParameterSet<float>& p, const Dataset& batch, const GeneratorTrainConfig& config,
                                  std::mt19937_64& rng) {
  const Index n = static_cast<Index>(batch.size());
  const Tensor<float> x = to_batch<float>(batch, 0, batch.size());
  const Encoded<float> e = encode(p, x);
  const Tensor<float> z =
      add(e.mean, mul(exp(scale(e.log_var, 0.5f)), gaussian_tensor({n, kLatentDim}, rng)));
  const Tensor<float> w = mapping_forward(p, z, labels_of(batch, 0, batch.size()));
  const Tensor<float> recon = synthesize(p, style_affine(p, w));
  // KL(N(mu, var) || N(0, 1)) per dimension = (mu^2 + var - log var - 1) / 2.
  const Tensor<float> kl = scale(
      mean(add_constant(sub(add(square(e.mean), exp(e.log_var)), e.log_var), -1.0f)), 0.5f);
  return add(add(mse(recon, x), scale(kl, static_cast<float>(config.kl_weight))),
             scale(mean(square(w)), static_cast<float>(config.w_l2)));
}

ParameterSet<float> init_discriminator(std::mt19937_64& rng) {
  auto uniform = [&](Shape shape, Index fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Buffer<float> v(numel(shape));
    for (auto& x : v) x = static_cast<float>(u(rng));
    return Tensor<float>(std::move(shape), std::move(v));
  };
  ParameterSet<float> d;
  d.add("conv1.w", uniform({16, 1, 3, 3}, 9));
  d.add("conv1.b", Tensor<float>::zeros({16}));
  d.add("conv2.w", uniform({32, 16, 3, 3}, 144));
  d.add("conv2.b", Tensor<float>::zeros({32}));
  d.add("fc.w", uniform({64, 32 * 7 * 7}, 32 * 7 * 7));
  d.add("fc.b", Tensor<float>::zeros({64}));
  d.add("out.w", uniform({1, 64}, 64));
  d.add("out.b", Tensor<float>::zeros({1}));
  d.add("embed", uniform({kNumClasses, 64}, 64));
  return d;
}

/// Unconditional score plus the projection of the features on a class embedding; one logit per image.
Tensor<float> discriminate(const ParameterSet<float>& d, const Tensor<float>& images, const std::vector<int>& classes) {
  const Index n = images.dim(0);
  Tensor<float> h = leaky_relu(conv2d(images, d.get("conv1.w"), d.get("conv1.b"), 2));
  h = leaky_relu(conv2d(h, d.get("conv2.w"), d.get("conv2.b"), 2));
  const Tensor<float> phi = leaky_relu(affine(reshape(h, {n, 32 * 7 * 7}), d.get("fc.w"), d.get("fc.b")));
  Buffer<float> hot = Buffer<float>::Zero(n * kNumClasses);
  for (Index i = 0; i < n; ++i) hot[i * kNumClasses + classes[i]] = 1;
  const Tensor<float> embedded = matmul(Tensor<float>({n, kNumClasses}, std::move(hot)), d.get("embed"));
  return add(reshape(affine(phi, d.get("out.w"), d.get("out.b")), {n}), sum_groups(mul(phi, embedded), 64));
}

}  // namespace

LearnedGenerator<float> train_generator(const Dataset& data, const GeneratorTrainConfig& config,
                                        const std::function<void(int, double)>& progress) {
  if (data.empty()) throw Error(ErrorKind::kEmptyDataset, "no training data for the generator");
  if (config.batch <= 0 || config.epochs < 0) throw Error(ErrorKind::kConfig, "batch must be positive, epochs >= 0");
  LearnedGenerator<float> gen = init_generator<float>(config.seed);
  gen.info.regime = to_string(config.regime);
  gen.info.epochs = config.epochs;
  gen.info.lr = config.lr;

  std::mt19937_64 rng(config.seed ^ 0x2545f4914f6cdd1dull);
  AdamState<float> g_state, d_state;
  const bool adversarial = config.regime == Regime::kAdversarial;
  const AdamConfig g_adam{.lr = config.lr, .beta1 = adversarial ? 0.5 : 0.9, .beta2 = 0.999};
  ParameterSet<float> disc;
  if (adversarial) disc = init_discriminator(rng);

  Batch order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      const Dataset batch = gather(data, order, begin, std::min(order.size(), begin + config.batch));
      const std::vector<int> classes = labels_of(batch, 0, batch.size());
      double step_loss = 0;
      if (!adversarial) {
        Tape<float> tape;
        const ParameterSet<float> tracked = gen.params.watch(tape);
        const Tensor<float> loss = reconstruction_loss(tracked, batch, config, rng);
        step_loss = loss.item();
        check_finite(step_loss, epoch);
        adam_step(gen.params, collect(tape.backward(loss), tracked), g_state, g_adam);
      } else {
        const Index n = static_cast<Index>(batch.size());
        const Tensor<float> z = gaussian_tensor({n, kLatentDim}, rng);
        {
          const Tensor<float> fake = synthesize(gen.params, gen.styles(z, classes));
          Tape<float> tape;
          const ParameterSet<float> tracked = disc.watch(tape);
          const Tensor<float> real_score = discriminate(tracked, to_batch<float>(batch, 0, batch.size()), classes);
          const Tensor<float> fake_score = discriminate(tracked, fake, classes);
          const Tensor<float> loss = add(mean(softplus(scale(real_score, -1.0f))), mean(softplus(fake_score)));
          check_finite(loss.item(), epoch);
          adam_step(disc, collect(tape.backward(loss), tracked), d_state, g_adam);
        }
        Tape<float> tape;
        const ParameterSet<float> tracked = gen.params.watch(tape);
        const Tensor<float> fake = synthesize(tracked, style_affine(tracked, mapping_forward(tracked, z, classes)));
        const Tensor<float> loss = mean(softplus(scale(discriminate(disc, fake, classes), -1.0f)));
        step_loss = loss.item();
        check_finite(step_loss, epoch);
        adam_step(gen.params, collect(tape.backward(loss), tracked), g_state, g_adam);
      }
      loss_sum += step_loss;
      ++steps;
    }
    gen.info.final_loss = loss_sum / static_cast<double>(steps);
    if (progress) progress(epoch, gen.info.final_loss);
  }
  return gen;
}

}  // namespace lsp
