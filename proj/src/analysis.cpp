#include "lsp/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "lsp/ops.hpp"

namespace lsp {
namespace {

constexpr std::size_t kBatch = 256;

template <typename S>
Tensor<S> rows_tensor(const Eigen::MatrixXd& m, Index begin, Index end) {
  const Index n = end - begin, d = m.cols();
  Buffer<S> v(n * d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) v[i * d + j] = static_cast<S>(m(begin + i, j));
  }
  return Tensor<S>({n, d}, std::move(v));
}

Prediction make_prediction(const Eigen::Ref<const Eigen::VectorXd>& probs, int label) {
  Prediction p;
  p.probs.assign(probs.data(), probs.data() + probs.size());
  Eigen::Index best = 0;
  probs.maxCoeff(&best);
  p.predicted = static_cast<int>(best);
  p.true_class_prob = probs[label];
  return p;
}

template <typename S>
Eigen::MatrixXd probs_matrix(const Tensor<S>& probs) {
  const Index n = probs.dim(0), c = probs.dim(1);
  Eigen::MatrixXd out(n, c);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < c; ++j) out(i, j) = static_cast<double>(probs[i * c + j]);
  }
  return out;
}

/// Classifier probabilities for styles rendered as labels; N x 10, plus the images when asked.
template <typename S>
Eigen::MatrixXd classify_styles(const Generator<S>& gen, const Classifier<S>& clf, const Eigen::MatrixXd& styles,
                                const std::vector<int>& labels, std::vector<Image>* images = nullptr) {
  if (styles.cols() != gen.style_dim() || static_cast<std::size_t>(styles.rows()) != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "expected " + std::to_string(labels.size()) + " x " +
                                               std::to_string(gen.style_dim()) + " styles");
  }
  const Index n = styles.rows();
  Eigen::MatrixXd out(n, kNumClasses);
  for (Index b = 0; b < n; b += kBatch) {
    const Index e = std::min<Index>(n, b + kBatch);
    const std::vector<int> cls(labels.begin() + b, labels.begin() + e);
    const Tensor<S> img = gen.render(rows_tensor<S>(styles, b, e), cls);
    out.middleRows(b, e - b) = probs_matrix(classifier_forward(clf.params, img).probs);
    if (images) {
      for (Index i = 0; i < e - b; ++i) images->push_back(to_image(img, i));
    }
  }
  return out;
}

void check_class(int k) {
  if (k < 0 || k >= kNumClasses) throw Error(ErrorKind::kInvalidClass, "class " + std::to_string(k));
}

std::vector<std::size_t> rows_where(const ProbePopulation& pop, const std::function<bool(std::size_t)>& keep) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (keep(i)) rows.push_back(i);
  }
  return rows;
}

Eigen::VectorXd mean_of_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(m.cols());
  for (std::size_t r : rows) acc += m.row(static_cast<Index>(r)).transpose();
  return acc / static_cast<double>(rows.size());
}

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

}  // namespace

std::string Scope::name() const { return cls ? "class" + std::to_string(*cls) : "global"; }

double ProbePopulation::accuracy() const {
  if (size() == 0) throw Error(ErrorKind::kEmptySubset, "accuracy of an empty population");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < size(); ++i) ok += well_classified(i);
  return static_cast<double>(ok) / static_cast<double>(size());
}

template <typename S>
ProbePopulation build_population(const Generator<S>& gen, const Classifier<S>& clf, std::size_t count, Scope scope,
                                 std::uint64_t seed) {
  if (count == 0) throw Error(ErrorKind::kConfig, "population count must be at least 1");
  if (scope.cls) check_class(*scope.cls);
  const Index n = static_cast<Index>(count), dz = gen.latent_dim();
  ProbePopulation pop;
  pop.latents.resize(n, dz);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dz; ++j) pop.latents(i, j) = normal(rng);
  }
  pop.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) pop.labels[i] = scope.cls ? *scope.cls : static_cast<int>(i % kNumClasses);

  pop.styles.resize(n, gen.style_dim());
  for (Index b = 0; b < n; b += kBatch) {
    const Index e = std::min<Index>(n, b + kBatch);
    const std::vector<int> cls(pop.labels.begin() + b, pop.labels.begin() + e);
    const Tensor<S> s = gen.styles(rows_tensor<S>(pop.latents, b, e), cls);
    for (Index i = 0; i < e - b; ++i) {
      for (Index j = 0; j < s.dim(1); ++j) pop.styles(b + i, j) = static_cast<double>(s[i * s.dim(1) + j]);
    }
  }
  const Eigen::MatrixXd probs = classify_styles(gen, clf, pop.styles, pop.labels, &pop.images);
  pop.predictions.reserve(count);
  for (Index i = 0; i < n; ++i) pop.predictions.push_back(make_prediction(probs.row(i).transpose(), pop.labels[i]));
  pop.provenance = {gen.id(), classifier_id(clf), seed, count, scope};
  return pop;
}

ProbePopulation subset(const ProbePopulation& pop, const std::vector<std::size_t>& rows) {
  ProbePopulation out;
  const Index n = static_cast<Index>(rows.size());
  out.latents.resize(n, pop.latents.cols());
  out.styles.resize(n, pop.styles.cols());
  for (Index i = 0; i < n; ++i) {
    const Index r = static_cast<Index>(rows[i]);
    out.latents.row(i) = pop.latents.row(r);
    out.styles.row(i) = pop.styles.row(r);
    out.labels.push_back(pop.labels[rows[i]]);
    out.images.push_back(pop.images[rows[i]]);
    out.predictions.push_back(pop.predictions[rows[i]]);
  }
  out.provenance = pop.provenance;
  out.provenance.count = rows.size();
  return out;
}

PopulationSplit split_populations(const ProbePopulation& pop) {
  return {subset(pop, rows_where(pop, [&](std::size_t i) { return pop.well_classified(i); })),
          subset(pop, rows_where(pop, [&](std::size_t i) { return !pop.well_classified(i); }))};
}

template <typename S>
Eigen::VectorXd true_class_probs(const Generator<S>& gen, const Classifier<S>& clf, const Eigen::MatrixXd& styles,
                                 const std::vector<int>& labels) {
  const Eigen::MatrixXd probs = classify_styles(gen, clf, styles, labels);
  Eigen::VectorXd out(probs.rows());
  for (Index i = 0; i < probs.rows(); ++i) out[i] = probs(i, labels[i]);
  return out;
}

template <typename S>
Eigen::MatrixXd style_gradients(const Generator<S>& gen, const Classifier<S>& clf, const Eigen::MatrixXd& styles,
                                const std::vector<int>& labels) {
  if (styles.cols() != gen.style_dim() || static_cast<std::size_t>(styles.rows()) != labels.size()) {
    throw Error(ErrorKind::kShapeMismatch, "style_gradients: styles and labels disagree");
  }
  const Index n = styles.rows(), d = styles.cols();
  Eigen::MatrixXd out(n, d);
  for (Index b = 0; b < n; b += kBatch) {
    const Index e = std::min<Index>(n, b + kBatch);
    const std::vector<int> cls(labels.begin() + b, labels.begin() + e);
    Tape<S> tape;
    const Tensor<S> s = tape.watch(rows_tensor<S>(styles, b, e));
    const Tensor<S> probs = classifier_forward(clf.params, gen.render(s, cls)).probs;
    const Tensor<S> g = tape.backward(sum(select(probs, cls))).of(s);
    for (Index i = 0; i < e - b; ++i) {
      for (Index j = 0; j < d; ++j) out(b + i, j) = static_cast<double>(g[i * d + j]);
    }
  }
  return out;
}

template <typename S>
std::vector<DimensionScore> score_dimensions(const ProbePopulation& pop, const Generator<S>& gen,
                                             const Classifier<S>& clf, const ScoreOptions& options) {
  if (pop.provenance.generator_id != gen.id() || pop.provenance.classifier_id != classifier_id(clf)) {
    throw Error(ErrorKind::kScopeMismatch, "population was built by " + pop.provenance.generator_id + " / " +
                                               pop.provenance.classifier_id);
  }
  const Scope& scope = options.scope;
  if (scope.cls) {
    check_class(*scope.cls);
    if (!options.filter_by_class &&
        std::any_of(pop.labels.begin(), pop.labels.end(), [&](int l) { return l != *scope.cls; })) {
      throw Error(ErrorKind::kScopeMismatch, scope.name() + " scope on a population with other classes");
    }
  }
  const auto rows = rows_where(
      pop, [&](std::size_t i) { return scope.contains(pop.labels[i]) && (!options.well_only || pop.well_classified(i)); });
  if (rows.empty()) throw Error(ErrorKind::kEmptySubset, "no samples in " + scope.name() + " scope");

  Eigen::MatrixXd styles(static_cast<Index>(rows.size()), pop.styles.cols());
  std::vector<int> labels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    styles.row(static_cast<Index>(i)) = pop.styles.row(static_cast<Index>(rows[i]));
    labels.push_back(pop.labels[rows[i]]);
  }
  const Eigen::MatrixXd grads = style_gradients(gen, clf, styles, labels);
  const Eigen::VectorXd mean = grads.colwise().mean();

  std::vector<DimensionScore> scores(static_cast<std::size_t>(mean.size()));
  for (Index j = 0; j < mean.size(); ++j) {
    DimensionScore& sc = scores[j];
    sc.dim = j;
    sc.mean_grad = mean[j];
    sc.direction = mean[j] > 0 ? -1 : 1;
    sc.scope = scope;
    const double ref = mean[j] > 0 ? 1 : (mean[j] < 0 ? -1 : 0);
    Index disagree = 0;
    for (Index i = 0; i < grads.rows(); ++i) {
      const double g = grads(i, j);
      const double sg = g > 0 ? 1 : (g < 0 ? -1 : 0);
      disagree += ref == 0 ? sg != 0 : sg != ref;
    }
    sc.sign_disagreement = static_cast<double>(disagree) / static_cast<double>(grads.rows());
  }
  std::stable_sort(scores.begin(), scores.end(), [](const DimensionScore& a, const DimensionScore& b) {
    return std::abs(a.mean_grad) > std::abs(b.mean_grad);
  });
  for (std::size_t r = 0; r < scores.size(); ++r) scores[r].rank = static_cast<Index>(r);
  return scores;
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kEmptySubset, "KS statistic needs two nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

HistogramPair dimension_histograms(const ProbePopulation& well, const ProbePopulation& mis, Index dim, int bins) {
  if (well.size() == 0 || mis.size() == 0) {
    throw Error(ErrorKind::kEmptySubset, "histograms need both well- and mis-classified samples");
  }
  if (dim < 0 || dim >= well.styles.cols() || well.styles.cols() != mis.styles.cols()) {
    throw Error(ErrorKind::kShapeMismatch, "no style dimension " + std::to_string(dim));
  }
  if (bins < 1) throw Error(ErrorKind::kConfig, "histogram needs at least one bin");
  const Eigen::VectorXd a = well.styles.col(dim), b = mis.styles.col(dim);
  double lo = std::min(a.minCoeff(), b.minCoeff()), hi = std::max(a.maxCoeff(), b.maxCoeff());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  HistogramPair h;
  h.dim = dim;
  const double width = (hi - lo) / bins;
  for (int k = 0; k <= bins; ++k) h.edges.push_back(k == bins ? hi : lo + k * width);
  auto fill = [&](const Eigen::VectorXd& v, std::vector<std::size_t>& counts) {
    counts.assign(bins, 0);
    for (double x : v) ++counts[std::clamp(static_cast<int>((x - lo) / width), 0, bins - 1)];
  };
  fill(a, h.well);
  fill(b, h.mis);
  h.separation = ks_statistic({a.begin(), a.end()}, {b.begin(), b.end()});
  return h;
}

Crossing find_crossing(const std::function<double(double)>& response, const ShiftOptions& options) {
  if (!(options.max_shift > 0) || !(options.tolerance > 0) || !(options.min_interval > 0)) {
    throw Error(ErrorKind::kConfig, "shift search needs positive bound, tolerance and interval");
  }
  Crossing c;
  auto eval = [&](double t) {
    ++c.evaluations;
    const double p = response(t);
    if (!std::isfinite(p)) throw Error(ErrorKind::kNonFiniteEvaluation, "response at shift " + std::to_string(t));
    return p;
  };
  const double target = options.target, tol = options.tolerance;
  const double p0 = eval(0);
  if (p0 <= target + tol) {
    throw Error(ErrorKind::kStartBelowThreshold, "start response " + std::to_string(p0) + " is not above " +
                                                     std::to_string(target + tol));
  }
  double lo = 0, hi = options.initial_step > 0 ? options.initial_step : options.max_shift / 64;
  hi = std::min(hi, options.max_shift);
  double p = eval(hi);
  while (p > target) {
    if (p <= target + tol) return {hi, p, true, c.evaluations};
    if (hi >= options.max_shift) {
      throw Error(ErrorKind::kNoCrossingWithinBound, "response still " + std::to_string(p) + " at shift " +
                                                         std::to_string(hi));
    }
    lo = hi;
    hi = std::min(2 * hi, options.max_shift);
    p = eval(hi);
  }
  if (p >= target - tol) return {hi, p, true, c.evaluations};
  while (hi - lo >= options.min_interval) {
    const double mid = 0.5 * (lo + hi);
    const double pm = eval(mid);
    if (std::abs(pm - target) <= tol) return {mid, pm, true, c.evaluations};
    if (pm > target) {
      lo = mid;
    } else {
      hi = mid;
      p = pm;
    }
  }
  return {hi, p, false, c.evaluations};
}

double default_shift_bound(const ProbePopulation& pop, Index dim, double factor) {
  if (pop.size() == 0) throw Error(ErrorKind::kEmptySubset, "shift bound of an empty population");
  const Eigen::VectorXd col = pop.styles.col(dim);
  const double sd = std::sqrt((col.array() - col.mean()).square().mean());
  return factor * (sd > 0 ? sd : 1.0);
}

template <typename S>
ShiftReference find_shift_reference(const Eigen::VectorXd& s0, Index dim, int direction, const Generator<S>& gen,
                                    const Classifier<S>& clf, int label, const ShiftOptions& options) {
  check_class(label);
  if (dim < 0 || dim >= s0.size()) throw Error(ErrorKind::kShapeMismatch, "no style dimension " + std::to_string(dim));
  if (direction != 1 && direction != -1) throw Error(ErrorKind::kConfig, "direction must be +1 or -1");
  const auto response = [&](double t) {
    Eigen::MatrixXd s = s0.transpose();
    s(0, dim) += direction * t;
    return true_class_probs(gen, clf, s, {label})[0];
  };
  const Crossing c = find_crossing(response, options);
  return {direction * c.shift, c.prob, c.converged};
}

std::vector<double> default_fractions() { return {0, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0}; }

template <typename S>
TraversalResult traverse(const Eigen::VectorXd& s0, Index dim, int direction, const Generator<S>& gen,
                         const Classifier<S>& clf, int label, const std::vector<double>& fractions,
                         const ShiftOptions& options) {
  TraversalResult r;
  r.dim = dim;
  r.direction = direction;
  r.label = label;
  r.start = s0;
  r.shift_reference = find_shift_reference(s0, dim, direction, gen, clf, label, options).shift;
  if (fractions.empty()) return r;
  const Index n = static_cast<Index>(fractions.size());
  Eigen::MatrixXd styles = s0.transpose().replicate(n, 1);
  for (Index i = 0; i < n; ++i) styles(i, dim) += fractions[i] * r.shift_reference;
  std::vector<Image> images;
  const Eigen::MatrixXd probs = classify_styles(gen, clf, styles, std::vector<int>(n, label), &images);
  for (Index i = 0; i < n; ++i) {
    const Prediction p = make_prediction(probs.row(i).transpose(), label);
    r.frames.push_back({fractions[i], fractions[i] * r.shift_reference, images[i], p.true_class_prob, p.predicted});
  }
  return r;
}

Eigen::VectorXd class_mean_style(const ProbePopulation& pop, int k, bool well_only) {
  check_class(k);
  const auto rows =
      rows_where(pop, [&](std::size_t i) { return pop.labels[i] == k && (!well_only || pop.well_classified(i)); });
  if (rows.empty()) throw Error(ErrorKind::kEmptySubset, "no samples of class " + std::to_string(k));
  return mean_of_rows(pop.styles, rows);
}

template <typename S>
CornerCaseReport find_corner_cases(const ProbePopulation& pop, int k, const Generator<S>& gen,
                                   const Classifier<S>& clf, const CornerCaseOptions& options) {
  check_class(k);
  CornerCaseReport report;
  report.label = k;
  const auto scores = score_dimensions(pop, gen, clf, {Scope::of_class(k), false, true});
  report.start = class_mean_style(pop, k, options.well_only_mean);
  {
    std::vector<Image> img;
    const Eigen::MatrixXd probs = classify_styles(gen, clf, report.start.transpose(), {k}, &img);
    const Prediction p = make_prediction(probs.row(0).transpose(), k);
    report.start_image = img[0];
    report.start_prob = p.true_class_prob;
    if (p.predicted != k || p.true_class_prob <= 0.5 + options.tolerance) {
      throw Error(ErrorKind::kStartBelowThreshold, "class " + std::to_string(k) + " mean style scores " +
                                                       std::to_string(p.true_class_prob));
    }
  }
  const std::size_t m = std::min<std::size_t>(static_cast<std::size_t>(std::max(options.top_m, 0)), scores.size());
  for (std::size_t r = 0; r < m; ++r) {
    const DimensionScore& sc = scores[r];
    report.dims.push_back(sc.dim);
    ShiftOptions so;
    so.max_shift = default_shift_bound(pop, sc.dim, options.bound_factor);
    so.tolerance = options.tolerance;
    ShiftReference ref;
    try {
      ref = find_shift_reference(report.start, sc.dim, sc.direction, gen, clf, k, so);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNoCrossingWithinBound) throw;
      report.skipped.push_back({sc.dim, "no crossing within bound"});
      continue;
    }
    if (!ref.converged) {
      report.skipped.push_back({sc.dim, "crossing not resolved within tolerance"});
      continue;
    }
    Eigen::MatrixXd styles = report.start.transpose().replicate(2, 1);
    styles(0, sc.dim) += ref.shift;
    styles(1, sc.dim) += 1.05 * ref.shift;
    std::vector<Image> images;
    const Eigen::MatrixXd probs = classify_styles(gen, clf, styles, {k, k}, &images);
    CornerCase cc;
    cc.label = k;
    cc.dim = sc.dim;
    cc.direction = sc.direction;
    cc.shift = ref.shift;
    cc.image = images[0];
    cc.true_class_prob = probs(0, k);
    const Prediction after = make_prediction(probs.row(1).transpose(), k);
    cc.predicted_after = after.predicted;
    cc.true_prob_after = after.true_class_prob;
    Eigen::VectorXd others = probs.row(1).transpose();
    others[k] = -1;
    cc.runner_up_prob_after = others.maxCoeff();
    if (cc.predicted_after == k) {
      report.skipped.push_back({sc.dim, "prediction unchanged at 1.05x the crossing shift"});
      continue;
    }
    report.cases.push_back(std::move(cc));
  }
  return report;
}

Eigen::VectorXd well_classified_center(const ProbePopulation& pop, Scope scope) {
  const auto rows =
      rows_where(pop, [&](std::size_t i) { return scope.contains(pop.labels[i]) && pop.well_classified(i); });
  if (rows.empty()) throw Error(ErrorKind::kEmptySubset, "no well-classified samples in " + scope.name() + " scope");
  return mean_of_rows(pop.styles, rows);
}

Eigen::VectorXd style_scale(const ProbePopulation& pop) {
  if (pop.size() == 0) throw Error(ErrorKind::kEmptySubset, "scale of an empty population");
  const Eigen::RowVectorXd mean = pop.styles.colwise().mean();
  Eigen::VectorXd sd = ((pop.styles.rowwise() - mean).array().square().colwise().mean()).sqrt().transpose();
  for (double& v : sd) {
    if (!(v > 0)) v = 1;
  }
  return sd;
}

AccuracyCurve accuracy_vs_distance(const ProbePopulation& pop, const Eigen::VectorXd& center,
                                   const std::vector<Index>& dims, const CurveOptions& options) {
  if (pop.size() == 0) throw Error(ErrorKind::kEmptySubset, "accuracy curve of an empty population");
  const Index d = pop.styles.cols();
  if (center.size() != d) throw Error(ErrorKind::kShapeMismatch, "center has the wrong dimension");
  if (dims.empty() || static_cast<Index>(dims.size()) > d) {
    throw Error(ErrorKind::kConfig, "need between 1 and " + std::to_string(d) + " dimensions");
  }
  for (Index j : dims) {
    if (j < 0 || j >= d) throw Error(ErrorKind::kShapeMismatch, "no style dimension " + std::to_string(j));
  }
  if (options.min_count == 0 || !(options.cutoff_quantile > 0 && options.cutoff_quantile <= 1)) {
    throw Error(ErrorKind::kConfig, "min count must be positive and the cutoff quantile in (0, 1]");
  }
  AccuracyCurve curve;
  curve.center = center;
  curve.dims = dims;
  curve.scale = options.scale.size() ? options.scale : style_scale(pop);
  if (curve.scale.size() != d) throw Error(ErrorKind::kShapeMismatch, "scale has the wrong dimension");

  std::vector<double> dist(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) {
    double acc = 0;
    for (Index j : dims) {
      const double z = (pop.styles(static_cast<Index>(i), j) - center[j]) / curve.scale[j];
      acc += z * z;
    }
    dist[i] = std::sqrt(acc);
  }
  std::vector<double> edges = options.edges;
  if (edges.empty()) {
    if (options.initial_bins < 1) throw Error(ErrorKind::kConfig, "need at least one bin");
    curve.cutoff = quantile(dist, options.cutoff_quantile);
    for (int k = 0; k <= options.initial_bins; ++k) edges.push_back(curve.cutoff * k / options.initial_bins);
  } else {
    if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
      throw Error(ErrorKind::kConfig, "explicit bin edges must be increasing");
    }
    curve.cutoff = edges.back();
  }
  const std::size_t nb = edges.size() - 1;
  std::vector<std::size_t> count(nb, 0), correct(nb, 0);
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (dist[i] < edges.front() || dist[i] > edges.back()) continue;
    const std::size_t b = std::min<std::size_t>(
        nb - 1, static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), dist[i]) - edges.begin()) - 1);
    ++count[b];
    correct[b] += pop.well_classified(i);
  }
  CurveBin open{edges[0], edges[0], 0, 0, 0};
  for (std::size_t b = 0; b < nb; ++b) {
    open.hi = edges[b + 1];
    open.count += count[b];
    open.correct += correct[b];
    if (open.count >= options.min_count) {
      curve.bins.push_back(open);
      open = {edges[b + 1], edges[b + 1], 0, 0, 0};
    }
  }
  if (open.count > 0 || open.hi > open.lo) {
    if (curve.bins.empty()) {
      throw Error(ErrorKind::kEmptySubset, "only " + std::to_string(open.count) + " samples within the cutoff, " +
                                               std::to_string(options.min_count) + " needed per bin");
    }
    curve.bins.back().hi = open.hi;
    curve.bins.back().count += open.count;
    curve.bins.back().correct += open.correct;
  }
  for (CurveBin& b : curve.bins) b.accuracy = static_cast<double>(b.correct) / static_cast<double>(b.count);
  return curve;
}

std::vector<Index> top_dims(const std::vector<DimensionScore>& scores, std::size_t k) {
  std::vector<Index> out;
  for (std::size_t r = 0; r < std::min(k, scores.size()); ++r) out.push_back(scores[r].dim);
  return out;
}

Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& x, double perplexity) {
  const Index n = x.rows();
  const Eigen::MatrixXd d2 = squared_distances(x);
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd row(n);
  for (Index i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (Index j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, d2(i, j));
    }
    double beta = 1, lo = 0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 200; ++it) {
      double total = 0, weighted = 0;
      for (Index j = 0; j < n; ++j) {
        row[j] = j == i ? 0 : std::exp(-beta * (d2(i, j) - dmin));
        total += row[j];
        weighted += row[j] * (d2(i, j) - dmin);
      }
      const double entropy = std::log(total) + beta * weighted / total;
      p.row(i) = row.transpose() / total;
      if (std::abs(entropy - target) < 1e-6) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
  }
  return p;
}

Eigen::MatrixXd tsne_project(const Eigen::MatrixXd& x, const TsneOptions& options) {
  const Index n = x.rows();
  if (n < 10 || n > 5000) {
    throw Error(ErrorKind::kTooManyPoints, "exact t-SNE handles 10 to 5000 points, got " + std::to_string(n));
  }
  if (!(options.perplexity > 0) || options.perplexity >= static_cast<double>(n) / 3) {
    throw Error(ErrorKind::kBadPerplexity, "perplexity " + std::to_string(options.perplexity) + " for " +
                                               std::to_string(n) + " points");
  }
  const Eigen::MatrixXd conditional = conditional_affinities(x, options.perplexity);
  Eigen::MatrixXd p = ((conditional + conditional.transpose()) / (2.0 * n)).cwiseMax(1e-12);
  p.diagonal().setZero();

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1e-4);
  Eigen::MatrixXd y(n, 2);
  for (Index i = 0; i < n; ++i) {
    y(i, 0) = normal(rng);
    y(i, 1) = normal(rng);
  }
  const double lr = options.learning_rate > 0 ? options.learning_rate
                                              : std::max(static_cast<double>(n) / options.exaggeration / 4, 50.0);
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2);
  for (int it = 0; it < options.iterations; ++it) {
    if (it == options.exaggeration_iterations) {
      update.setZero();
      gains.setOnes();
    }
    const bool early = it < options.exaggeration_iterations;
    const double exaggeration = early ? options.exaggeration : 1.0;
    const double momentum = early ? 0.5 : 0.8;
    Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
    num.diagonal().setZero();
    const Eigen::MatrixXd q = (num / num.sum()).cwiseMax(1e-12);
    const Eigen::MatrixXd w = ((exaggeration * p - q).array() * num.array()).matrix();
    const Eigen::MatrixXd grad = 4.0 * (w.rowwise().sum().asDiagonal() * y - w * y);
    for (Index i = 0; i < n; ++i) {
      for (Index c = 0; c < 2; ++c) {
        const bool same = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = std::max(0.01, same ? gains(i, c) * 0.8 : gains(i, c) + 0.2);
      }
    }
    update = momentum * update - lr * gains.cwiseProduct(grad);
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

double silhouette_score(const Eigen::MatrixXd& points, const std::vector<int>& labels) {
  const Index n = points.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw Error(ErrorKind::kShapeMismatch, "one label per point");
  std::map<int, int> index;
  for (int l : labels) index.emplace(l, 0);
  int next = 0;
  for (auto& [label, id] : index) id = next++;
  if (index.size() < 2) return 0;
  std::vector<double> size(index.size(), 0);
  for (int l : labels) ++size[index[l]];
  double total = 0;
  Eigen::VectorXd sums(static_cast<Index>(index.size()));
  for (Index i = 0; i < n; ++i) {
    sums.setZero();
    for (Index j = 0; j < n; ++j) sums[index[labels[j]]] += (points.row(i) - points.row(j)).norm();
    const int own = index[labels[i]];
    if (size[own] < 2) continue;
    const double a = sums[own] / (size[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (Index c = 0; c < sums.size(); ++c) {
      if (c != own) b = std::min(b, sums[c] / size[c]);
    }
    const double m = std::max(a, b);
    total += m > 0 ? (b - a) / m : 0;
  }
  return total / static_cast<double>(n);
}

FrechetResult frechet_feature_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::kShapeMismatch, "feature widths differ");
  if (a.rows() < 2 || b.rows() < 2) throw Error(ErrorKind::kEmptySubset, "need at least two samples per set");
  const Index d = a.cols();
  auto moments = [](const Eigen::MatrixXd& x) {
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Eigen::MatrixXd c = x.rowwise() - mu;
    return std::pair<Eigen::VectorXd, Eigen::MatrixXd>{mu.transpose(), c.transpose() * c / double(x.rows() - 1)};
  };
  auto [mu_a, cov_a] = moments(a);
  auto [mu_b, cov_b] = moments(b);
  FrechetResult r;
  auto degenerate = [&](const Eigen::MatrixXd& c, Index rows) {
    if (rows <= d) return true;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() <= 0;
  };
  if (degenerate(cov_a, a.rows()) || degenerate(cov_b, b.rows())) {
    cov_a += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    cov_b += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    r.shrinkage_applied = true;
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(cov_a);
  const Eigen::MatrixXd root_a =
      ea.eigenvectors() * ea.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = root_a * cov_b * root_a;
  m = (0.5 * (m + m.transpose())).eval();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const double cross = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  r.distance = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2 * cross;
  return r;
}

#define LSP_INSTANTIATE_ANALYSIS(S)                                                                                  \
  template ProbePopulation build_population(const Generator<S>&, const Classifier<S>&, std::size_t, Scope,         \
                                            std::uint64_t);                                                        \
  template Eigen::VectorXd true_class_probs(const Generator<S>&, const Classifier<S>&, const Eigen::MatrixXd&,     \
                                            const std::vector<int>&);                                              \
  template Eigen::MatrixXd style_gradients(const Generator<S>&, const Classifier<S>&, const Eigen::MatrixXd&,      \
                                           const std::vector<int>&);                                               \
  template std::vector<DimensionScore> score_dimensions(const ProbePopulation&, const Generator<S>&,               \
                                                        const Classifier<S>&, const ScoreOptions&);                \
  template ShiftReference find_shift_reference(const Eigen::VectorXd&, Index, int, const Generator<S>&,            \
                                               const Classifier<S>&, int, const ShiftOptions&);                    \
  template TraversalResult traverse(const Eigen::VectorXd&, Index, int, const Generator<S>&, const Classifier<S>&, \
                                    int, const std::vector<double>&, const ShiftOptions&);                         \
  template CornerCaseReport find_corner_cases(const ProbePopulation&, int, const Generator<S>&,                    \
                                              const Classifier<S>&, const CornerCaseOptions&);

LSP_INSTANTIATE_ANALYSIS(float)
LSP_INSTANTIATE_ANALYSIS(double)

}  // namespace lsp
