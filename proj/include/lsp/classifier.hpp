#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lsp/data.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

/// Small CNN under analysis:
///   conv 1->16 (3x3) + leaky-relu + 2x2 maxpool   28 -> 14
///   conv 16->32 (3x3) + leaky-relu + 2x2 maxpool  14 -> 7
///   dense 32*7*7 -> 64 + leaky-relu               (penultimate features)
///   dense 64 -> 10                                (logits)
inline constexpr Index kPenultimateWidth = 64;
inline constexpr const char* kClassifierArchitecture = "conv16-pool-conv32-pool-fc64-fc10";

struct ClassifierInfo {
  std::string trained_on = "none";  // clean | corrupted | none
  std::uint64_t seed = 0;
  int epochs = 0;
  double final_accuracy = -1;
};

template <typename Scalar>
struct Classifier {
  ParameterSet<Scalar> params;
  ClassifierInfo info;

  template <typename Other>
  Classifier<Other> cast() const {
    return {params.template cast<Other>(), info};
  }
};

template <typename Scalar>
Classifier<Scalar> init_classifier(std::uint64_t seed);

/// "classifier-" followed by a fingerprint of the parameters; equal across precisions.
template <typename Scalar>
std::string classifier_id(const Classifier<Scalar>& model);

template <typename Scalar>
struct ClassifierOutput {
  Tensor<Scalar> features;  // N x 64
  Tensor<Scalar> logits;    // N x 10
  Tensor<Scalar> probs;     // N x 10
};

/// Batched forward pass over N x 1 x 28 x 28 images. Differentiable with respect
/// to the images and to (tracked) parameters.
template <typename Scalar>
ClassifierOutput<Scalar> classifier_forward(const ParameterSet<Scalar>& params, const Tensor<Scalar>& images);

struct Prediction {
  std::vector<double> probs;
  int predicted = 0;
  double true_class_prob = 0;  // probability at the known label
};

template <typename Scalar>
Prediction predict(const Classifier<Scalar>& model, const Image& image, int true_label);

/// Predictions for a whole dataset, evaluated in fixed-size batches.
template <typename Scalar>
std::vector<Prediction> predict_all(const Classifier<Scalar>& model, const Dataset& data);

struct Evaluation {
  double accuracy = 0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the data
  std::vector<std::size_t> per_class_count;
};

template <typename Scalar>
Evaluation evaluate(const Classifier<Scalar>& model, const Dataset& data);

/// Penultimate activations (width kPenultimateWidth) for one image.
template <typename Scalar>
Eigen::VectorXd penultimate_features(const Classifier<Scalar>& model, const Image& image);
/// Penultimate activations for every image, one row each.
template <typename Scalar>
Eigen::MatrixXd penultimate_features(const Classifier<Scalar>& model, const Dataset& data);

struct ClassifierTrainConfig {
  int epochs = 3;
  double lr = 1e-3;
  int batch = 32;
  std::uint64_t seed = 1;
  std::string trained_on = "corrupted";
};

/// Adam on mean cross-entropy with a seeded shuffle each epoch. Deterministic in
/// the seed; throws DivergedTraining on a non-finite loss. `progress` (optional)
/// receives (epoch, mean loss).
Classifier<float> train_classifier(const Dataset& data, const ClassifierTrainConfig& config,
                                   const std::function<void(int, double)>& progress = {});

/// `<stem>.lpt` + `<stem>.json` {schema_version, architecture, trained_on, seed, epochs, final_accuracy}.
template <typename Scalar>
void save_classifier(const std::filesystem::path& stem, const Classifier<Scalar>& model);
template <typename Scalar>
Classifier<Scalar> load_classifier(const std::filesystem::path& stem);

}  // namespace lsp
