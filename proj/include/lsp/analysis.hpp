#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lsp/classifier.hpp"
#include "lsp/generator.hpp"

namespace lsp {

/// Either the whole population or the samples of one true class.
struct Scope {
  std::optional<int> cls;

  static Scope global() { return {}; }
  static Scope of_class(int k) { return {k}; }
  bool contains(int label) const { return !cls || *cls == label; }
  /// "global" or "class3".
  std::string name() const;
  bool operator==(const Scope&) const = default;
};

struct Provenance {
  std::string generator_id;
  std::string classifier_id;
  std::uint64_t seed = 0;
  std::size_t count = 0;
  Scope scope;
};

/// Generated samples with their classification. Row i of every matrix and
/// entry i of every vector belong to the same sample; images[i] == G(styles.row(i)).
struct ProbePopulation {
  Eigen::MatrixXd latents;  // N x latent_dim
  Eigen::MatrixXd styles;   // N x style_dim
  std::vector<int> labels;
  std::vector<Image> images;
  std::vector<Prediction> predictions;
  Provenance provenance;

  std::size_t size() const { return labels.size(); }
  bool well_classified(std::size_t i) const { return predictions[i].predicted == labels[i]; }
  double accuracy() const;
};

/// z ~ N(0, I) drawn row-major from the seed; sample i has class i mod 10, or the
/// scoped class. Rendering and classification run in batches of 256.
template <typename Scalar>
ProbePopulation build_population(const Generator<Scalar>& gen, const Classifier<Scalar>& clf, std::size_t count,
                                 Scope scope, std::uint64_t seed);

/// Samples at `rows`, in that order, with the provenance count updated.
ProbePopulation subset(const ProbePopulation& pop, const std::vector<std::size_t>& rows);

struct PopulationSplit {
  ProbePopulation well;
  ProbePopulation mis;
};
PopulationSplit split_populations(const ProbePopulation& pop);

/// Probability of the true class for every row of `styles` rendered as `labels`.
template <typename Scalar>
Eigen::VectorXd true_class_probs(const Generator<Scalar>& gen, const Classifier<Scalar>& clf,
                                 const Eigen::MatrixXd& styles, const std::vector<int>& labels);

/// Per-sample gradients d C_label(G(s)) / d s, one row per sample, from one
/// backward pass per batch (samples do not interact).
template <typename Scalar>
Eigen::MatrixXd style_gradients(const Generator<Scalar>& gen, const Classifier<Scalar>& clf,
                                const Eigen::MatrixXd& styles, const std::vector<int>& labels);

struct DimensionScore {
  Index dim = 0;
  double mean_grad = 0;
  int direction = 1;  // increment sign that lowers the true-class output
  Index rank = 0;
  double sign_disagreement = 0;  // fraction of samples whose gradient sign differs from the mean's
  Scope scope;
};

struct ScoreOptions {
  Scope scope;
  bool well_only = false;
  /// Keep only samples of the scoped class; without it a class scope on a
  /// population containing other classes is a ScopeMismatch.
  bool filter_by_class = true;
};

/// Scores sorted by |mean_grad| descending, ties by dimension index. Zero means
/// get direction +1.
template <typename Scalar>
std::vector<DimensionScore> score_dimensions(const ProbePopulation& pop, const Generator<Scalar>& gen,
                                             const Classifier<Scalar>& clf, const ScoreOptions& options = {});

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::vector<double> a, std::vector<double> b);

struct HistogramPair {
  Index dim = 0;
  std::vector<double> edges;  // bins + 1, equal width over the pooled range
  std::vector<std::size_t> well;
  std::vector<std::size_t> mis;
  double separation = 0;  // KS statistic of the raw values
};
HistogramPair dimension_histograms(const ProbePopulation& well, const ProbePopulation& mis, Index dim,
                                   int bins = 30);

struct ShiftOptions {
  double max_shift = 1;
  double tolerance = 0.01;
  double min_interval = 1e-6;
  double initial_step = 0;  // 0 means max_shift / 64
  double target = 0.5;
};

struct Crossing {
  double shift = 0;  // distance travelled, >= 0
  double prob = 0;   // response at `shift`
  bool converged = false;  // |prob - target| <= tolerance
  int evaluations = 0;
};

/// Distance t >= 0 at which a response starting above target + tolerance falls to
/// the target: doubling steps from initial_step until the response is at or below
/// the target, then bisection until within tolerance or the bracket is narrower
/// than min_interval. Throws StartBelowThreshold or NoCrossingWithinBound.
Crossing find_crossing(const std::function<double(double)>& response, const ShiftOptions& options);

/// 20 x the population standard deviation of the coordinate (1 when it is constant).
double default_shift_bound(const ProbePopulation& pop, Index dim, double factor = 20);

struct ShiftReference {
  double shift = 0;  // signed: direction * distance
  double prob = 0;
  bool converged = false;
};

template <typename Scalar>
ShiftReference find_shift_reference(const Eigen::VectorXd& s0, Index dim, int direction, const Generator<Scalar>& gen,
                                    const Classifier<Scalar>& clf, int label, const ShiftOptions& options);

struct Frame {
  double fraction = 0;
  double shift = 0;
  Image image;
  double true_class_prob = 0;
  int predicted = 0;
};

struct TraversalResult {
  Index dim = 0;
  int direction = 1;
  int label = 0;
  Eigen::VectorXd start;
  double shift_reference = 0;
  std::vector<Frame> frames;
};

std::vector<double> default_fractions();

template <typename Scalar>
TraversalResult traverse(const Eigen::VectorXd& s0, Index dim, int direction, const Generator<Scalar>& gen,
                         const Classifier<Scalar>& clf, int label, const std::vector<double>& fractions,
                         const ShiftOptions& options);

Eigen::VectorXd class_mean_style(const ProbePopulation& pop, int k, bool well_only = false);

struct CornerCase {
  int label = 0;
  Index dim = 0;
  int direction = 1;
  double shift = 0;
  Image image;
  double true_class_prob = 0;
  int predicted_after = 0;  // prediction at 1.05 x shift
  double true_prob_after = 0;
  double runner_up_prob_after = 0;
};

struct SkippedDim {
  Index dim = 0;
  std::string reason;
};

struct CornerCaseReport {
  int label = 0;
  Eigen::VectorXd start;
  Image start_image;
  double start_prob = 0;
  std::vector<Index> dims;  // the class-scoped top dims that were tried
  std::vector<CornerCase> cases;
  std::vector<SkippedDim> skipped;
};

struct CornerCaseOptions {
  int top_m = 10;
  bool well_only_mean = false;
  double bound_factor = 20;
  double tolerance = 0.01;
};

/// From the class mean style, searches each of the top_m class-scoped dimensions
/// for the 0.5 crossing. Dimensions without a crossing, or whose crossing does not
/// change the predicted class at 1.05 x the shift, are skipped. Throws
/// StartBelowThreshold when the class mean is not confidently classified.
template <typename Scalar>
CornerCaseReport find_corner_cases(const ProbePopulation& pop, int k, const Generator<Scalar>& gen,
                                   const Classifier<Scalar>& clf, const CornerCaseOptions& options = {});

/// Mean style of the well-classified samples, optionally of one class.
Eigen::VectorXd well_classified_center(const ProbePopulation& pop, Scope scope = {});

/// Population standard deviation per style coordinate (1 where it is zero).
Eigen::VectorXd style_scale(const ProbePopulation& pop);

struct CurveBin {
  double lo = 0;
  double hi = 0;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0;
};

struct AccuracyCurve {
  Eigen::VectorXd center;
  std::vector<Index> dims;
  Eigen::VectorXd scale;
  double cutoff = 0;
  std::vector<CurveBin> bins;
};

struct CurveOptions {
  std::size_t min_count = 200;
  double cutoff_quantile = 0.95;
  int initial_bins = 20;
  std::vector<double> edges;  // explicit bin edges; replaces the cutoff and the equal-width bins
  Eigen::VectorXd scale;      // per-coordinate divisor; empty means style_scale(pop)
};

/// Standardised Euclidean distance over `dims`, equal-width bins up to the cutoff
/// quantile, and left-to-right merging until each bin has min_count samples (a
/// short remainder joins the last bin). Throws EmptySubset when fewer than
/// min_count samples remain.
AccuracyCurve accuracy_vs_distance(const ProbePopulation& pop, const Eigen::VectorXd& center,
                                   const std::vector<Index>& dims, const CurveOptions& options = {});

std::vector<Index> top_dims(const std::vector<DimensionScore>& scores, std::size_t k);

struct TsneOptions {
  double perplexity = 30;
  int iterations = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 0;  // 0 means max(n / exaggeration / 4, 50)
  double exaggeration = 12;
  int exaggeration_iterations = 250;
};

/// Row-normalised Gaussian affinities p_{j|i} with per-point bandwidths matched to
/// the perplexity by bisection (n x n, zero diagonal).
Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& x, double perplexity);

/// Exact t-SNE to two dimensions; 10 <= n <= 5000 and 0 < perplexity < n / 3.
Eigen::MatrixXd tsne_project(const Eigen::MatrixXd& x, const TsneOptions& options = {});

/// Mean silhouette coefficient of labelled points; points in singleton clusters score 0.
double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels);

struct FrechetResult {
  double distance = 0;
  bool shrinkage_applied = false;
};

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)) between Gaussian fits of
/// the rows of a and b. Singular covariances get 1e-6 I added and the flag set.
FrechetResult frechet_feature_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace lsp
