#include "lsp/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/ops.hpp"
#include "lsp/optim.hpp"

namespace lsp {
namespace {

constexpr double kSlope = 0.1;
constexpr std::size_t kEvalBatch = 256;

template <typename S>
Tensor<S> he_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Buffer<S> v(numel(shape));
  for (auto& x : v) x = static_cast<S>(u(rng));
  return Tensor<S>(std::move(shape), std::move(v));
}

}  // namespace

template <typename S>
Classifier<S> init_classifier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Classifier<S> model;
  model.info.seed = seed;
  auto& p = model.params;
  p.add("conv1.w", he_uniform<S>({16, 1, 3, 3}, 9, rng));
  p.add("conv1.b", Tensor<S>::zeros({16}));
  p.add("conv2.w", he_uniform<S>({32, 16, 3, 3}, 144, rng));
  p.add("conv2.b", Tensor<S>::zeros({32}));
  p.add("fc1.w", he_uniform<S>({kPenultimateWidth, 32 * 7 * 7}, 32 * 7 * 7, rng));
  p.add("fc1.b", Tensor<S>::zeros({kPenultimateWidth}));
  p.add("fc2.w", he_uniform<S>({kNumClasses, kPenultimateWidth}, kPenultimateWidth, rng));
  p.add("fc2.b", Tensor<S>::zeros({kNumClasses}));
  return model;
}

template <typename S>
ClassifierOutput<S> classifier_forward(const ParameterSet<S>& p, const Tensor<S>& images) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != kImageSize || images.dim(3) != kImageSize) {
    throw Error(ErrorKind::kShapeMismatch, "classifier expects N x 1 x 28 x 28, got " + shape_string(images.shape()));
  }
  const S slope = static_cast<S>(kSlope);
  const Index n = images.dim(0);
  Tensor<S> h = maxpool2x(leaky_relu(conv2d(images, p.get("conv1.w"), p.get("conv1.b")), slope));
  h = maxpool2x(leaky_relu(conv2d(h, p.get("conv2.w"), p.get("conv2.b")), slope));
  Tensor<S> features = leaky_relu(affine(reshape(h, {n, 32 * 7 * 7}), p.get("fc1.w"), p.get("fc1.b")), slope);
  Tensor<S> logits = affine(features, p.get("fc2.w"), p.get("fc2.b"));
  Tensor<S> probs = softmax(logits);
  return {std::move(features), std::move(logits), std::move(probs)};
}

template <typename S>
std::vector<Prediction> predict_all(const Classifier<S>& model, const Dataset& data) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(data.size(), begin + kEvalBatch);
    const Tensor<S> probs = classifier_forward(model.params, to_batch<S>(data, begin, end)).probs;
    for (std::size_t i = begin; i < end; ++i) {
      Prediction pred;
      const Index row = static_cast<Index>(i - begin) * kNumClasses;
      for (int c = 0; c < kNumClasses; ++c) pred.probs.push_back(static_cast<double>(probs[row + c]));
      pred.predicted = static_cast<int>(std::max_element(pred.probs.begin(), pred.probs.end()) - pred.probs.begin());
      const int label = data[i].label;
      pred.true_class_prob = (label >= 0 && label < kNumClasses) ? pred.probs[label] : 0.0;
      out.push_back(std::move(pred));
    }
  }
  return out;
}

template <typename S>
std::string classifier_id(const Classifier<S>& model) {
  return "classifier-" + fingerprint(model.params);
}

template <typename S>
Prediction predict(const Classifier<S>& model, const Image& image, int true_label) {
  Dataset one(1);
  one[0].image = image;
  one[0].label = true_label;
  return predict_all(model, one).front();
}

template <typename S>
Evaluation evaluate(const Classifier<S>& model, const Dataset& data) {
  if (data.empty()) throw Error(ErrorKind::kEmptyDataset, "nothing to evaluate");
  const auto preds = predict_all(model, data);
  Evaluation ev;
  std::vector<std::size_t> correct(kNumClasses, 0);
  ev.per_class_count.assign(kNumClasses, 0);
  std::size_t total_correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int label = data[i].label;
    const bool ok = preds[i].predicted == label;
    total_correct += ok;
    if (label >= 0 && label < kNumClasses) {
      ++ev.per_class_count[label];
      correct[label] += ok;
    }
  }
  ev.accuracy = static_cast<double>(total_correct) / static_cast<double>(data.size());
  for (int c = 0; c < kNumClasses; ++c) {
    ev.per_class_accuracy.push_back(ev.per_class_count[c] ? static_cast<double>(correct[c]) / ev.per_class_count[c]
                                                          : std::nan(""));
  }
  return ev;
}

template <typename S>
Eigen::MatrixXd penultimate_features(const Classifier<S>& model, const Dataset& data) {
  Eigen::MatrixXd out(static_cast<Index>(data.size()), kPenultimateWidth);
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalBatch) {
    const std::size_t end = std::min(data.size(), begin + kEvalBatch);
    const Tensor<S> f = classifier_forward(model.params, to_batch<S>(data, begin, end)).features;
    const Index rows = static_cast<Index>(end - begin);
    out.middleRows(static_cast<Index>(begin), rows) =
        Eigen::Map<const RowMatrix<S>>(f.values().data(), rows, kPenultimateWidth).template cast<double>();
  }
  return out;
}

template <typename S>
Eigen::VectorXd penultimate_features(const Classifier<S>& model, const Image& image) {
  Dataset one(1);
  one[0].image = image;
  return penultimate_features(model, one).row(0).transpose();
}

Classifier<float> train_classifier(const Dataset& data, const ClassifierTrainConfig& config,
                                   const std::function<void(int, double)>& progress) {
  if (data.empty()) throw Error(ErrorKind::kEmptyDataset, "no training data");
  if (config.batch <= 0 || config.epochs < 0) throw Error(ErrorKind::kConfig, "batch must be positive, epochs >= 0");
  Classifier<float> model = init_classifier<float>(config.seed);
  model.info.trained_on = config.trained_on;
  model.info.epochs = config.epochs;
  AdamState<float> state;
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ull);
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch));
      Dataset batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(data[order[i]]);
      Tape<float> tape;
      const ParameterSet<float> tracked = model.params.watch(tape);
      const auto out = classifier_forward(tracked, to_batch<float>(batch, 0, batch.size()));
      const Tensor<float> loss = cross_entropy(out.logits, labels_of(batch, 0, batch.size()));
      if (!std::isfinite(loss.item())) {
        throw Error(ErrorKind::kDivergedTraining, "classifier loss is not finite at epoch " + std::to_string(epoch));
      }
      const auto grads = tape.backward(loss);
      std::vector<Tensor<float>> g;
      for (std::size_t i = 0; i < tracked.size(); ++i) g.push_back(grads.of(tracked.at(i)));
      adam_step(model.params, g, state, {.lr = config.lr});
      loss_sum += loss.item();
      ++batches;
    }
    if (progress) progress(epoch, loss_sum / static_cast<double>(batches));
  }
  return model;
}

template <typename S>
void save_classifier(const std::filesystem::path& stem, const Classifier<S>& model) {
  save_checkpoint(std::filesystem::path(stem).concat(".lpt"), model.params);
  nlohmann::ordered_json sidecar = {{"schema_version", 1},
                                    {"architecture", kClassifierArchitecture},
                                    {"trained_on", model.info.trained_on},
                                    {"seed", model.info.seed},
                                    {"epochs", model.info.epochs},
                                    {"final_accuracy", model.info.final_accuracy}};
  write_file(std::filesystem::path(stem).concat(".json"), sidecar.dump(2) + "\n");
}

template <typename S>
Classifier<S> load_classifier(const std::filesystem::path& stem) {
  Classifier<S> model;
  model.params = load_checkpoint<S>(std::filesystem::path(stem).concat(".lpt"));
  const auto sidecar = nlohmann::json::parse(read_file(std::filesystem::path(stem).concat(".json")));
  if (sidecar.at("architecture") != kClassifierArchitecture) {
    throw Error(ErrorKind::kShapeMismatch, "classifier architecture " + sidecar.at("architecture").dump());
  }
  model.info.trained_on = sidecar.at("trained_on");
  model.info.seed = sidecar.at("seed");
  model.info.epochs = sidecar.at("epochs");
  model.info.final_accuracy = sidecar.at("final_accuracy");
  return model;
}

#define LSP_INSTANTIATE_CLASSIFIER(S)                                                             \
  template Classifier<S> init_classifier(std::uint64_t);                                          \
  template ClassifierOutput<S> classifier_forward(const ParameterSet<S>&, const Tensor<S>&);      \
  template std::string classifier_id(const Classifier<S>&);                                      \
  template Prediction predict(const Classifier<S>&, const Image&, int);                           \
  template std::vector<Prediction> predict_all(const Classifier<S>&, const Dataset&);             \
  template Evaluation evaluate(const Classifier<S>&, const Dataset&);                             \
  template Eigen::VectorXd penultimate_features(const Classifier<S>&, const Image&);              \
  template Eigen::MatrixXd penultimate_features(const Classifier<S>&, const Dataset&);            \
  template void save_classifier(const std::filesystem::path&, const Classifier<S>&);              \
  template Classifier<S> load_classifier(const std::filesystem::path&);

LSP_INSTANTIATE_CLASSIFIER(float)
LSP_INSTANTIATE_CLASSIFIER(double)

}  // namespace lsp
