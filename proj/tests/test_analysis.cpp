#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "lsp/analysis.hpp"
#include "lsp/analytic.hpp"
#include "lsp/ops.hpp"

using namespace lsp;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kConfig;
}

const Classifier<double>& clean_classifier() {
  static const Classifier<double> model =
      train_classifier(procedural_dataset(3000, 41), {.epochs = 2, .seed = 4, .trained_on = "clean"})
          .cast<double>();
  return model;
}

Classifier<double> zero_head_classifier() {
  auto model = init_classifier<double>(3);
  model.params.set("fc2.w", Tensor<double>::zeros({10, kPenultimateWidth}));
  model.params.set("fc2.b", Tensor<double>::zeros({10}));
  return model;
}

/// Population with hand-set styles and predictions; images are left empty.
ProbePopulation synthetic_population(const Eigen::MatrixXd& styles, const std::vector<int>& labels,
                                     const std::vector<int>& predicted) {
  ProbePopulation pop;
  pop.styles = styles;
  pop.latents = styles;
  pop.labels = labels;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Prediction p;
    p.predicted = predicted[i];
    pop.predictions.push_back(p);
    pop.images.emplace_back();
  }
  pop.provenance.count = labels.size();
  return pop;
}

double sigmoid(double x) { return 1 / (1 + std::exp(-x)); }

}  // namespace

TEST_CASE("population construction") {
  const AnalyticGenerator<double> gen(1);
  const auto& clf = clean_classifier();

  const ProbePopulation one = build_population(gen, clf, 1, {}, 3);
  CHECK(one.size() == 1);
  CHECK(one.styles.rows() == 1);
  CHECK(one.styles.cols() == gen.style_dim());
  CHECK(one.images.size() == 1);
  CHECK(one.predictions[0].probs.size() == kNumClasses);
  CHECK(one.provenance.generator_id == gen.id());
  CHECK(one.provenance.classifier_id == classifier_id(clf));

  const ProbePopulation three = build_population(gen, clf, 40, Scope::of_class(3), 5);
  CHECK(std::all_of(three.labels.begin(), three.labels.end(), [](int l) { return l == 3; }));

  const ProbePopulation a = build_population(gen, clf, 30, {}, 9);
  const ProbePopulation b = build_population(gen, clf, 30, {}, 9);
  CHECK(a.styles == b.styles);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a.images[i] == b.images[i]).all());

  // spot check: stored image equals a fresh render of the stored style
  for (std::size_t i : {0u, 17u, 29u}) {
    const Eigen::RowVectorXd row = a.styles.row(i);
    const Tensor<double> s({1, gen.style_dim()}, Buffer<double>(row.transpose().array()));
    const Image fresh = to_image(gen.render(s, {a.labels[i]}));
    CHECK((fresh - a.images[i]).abs().maxCoeff() < 1e-6);
  }

  CHECK(kind_of([&] { build_population(gen, clf, 5, Scope::of_class(10), 1); }) == ErrorKind::kInvalidClass);
  CHECK(kind_of([&] { build_population(gen, clf, 0, {}, 1); }) == ErrorKind::kConfig);
}

TEST_CASE("split into well- and mis-classified") {
  const AnalyticGenerator<double> gen(2);
  const auto& clf = clean_classifier();
  ProbePopulation pop = build_population(gen, clf, 400, {}, 11);
  const PopulationSplit split = split_populations(pop);
  CHECK(split.well.size() + split.mis.size() == pop.size());
  for (std::size_t i = 0; i < split.well.size(); ++i) CHECK(split.well.well_classified(i));
  for (std::size_t i = 0; i < split.mis.size(); ++i) CHECK_FALSE(split.mis.well_classified(i));

  // noise amplitude drives errors of a classifier that never saw noise
  REQUIRE(split.mis.size() > 0);
  REQUIRE(split.well.size() > 0);
  CHECK(split.mis.styles.col(kNoiseAmp).mean() > split.well.styles.col(kNoiseAmp).mean());

  std::vector<int> labels(5, 2);
  const auto all_right = synthetic_population(Eigen::MatrixXd::Zero(5, 3), labels, labels);
  const PopulationSplit s2 = split_populations(all_right);
  CHECK(s2.mis.size() == 0);
  CHECK(s2.well.size() == 5);
}

TEST_CASE("zero head scores every dimension zero") {
  const AnalyticGenerator<double> gen(0, 3);
  const auto clf = zero_head_classifier();
  const ProbePopulation pop = build_population(gen, clf, 20, {}, 4);
  const auto scores = score_dimensions(pop, gen, clf);
  REQUIRE(scores.size() == static_cast<std::size_t>(gen.style_dim()));
  for (std::size_t r = 0; r < scores.size(); ++r) {
    CHECK(scores[r].mean_grad == 0);
    CHECK(scores[r].direction == 1);
    CHECK(scores[r].dim == static_cast<Index>(r));
    CHECK(scores[r].rank == static_cast<Index>(r));
  }
}

TEST_CASE("single-sample score is that sample's gradient") {
  const auto gen = init_generator<double>(6);
  const auto clf = init_classifier<double>(7);
  const ProbePopulation pop = build_population(gen, clf, 1, Scope::of_class(4), 8);
  const auto scores = score_dimensions(pop, gen, clf);

  Tape<double> tape;
  const Eigen::RowVectorXd row = pop.styles.row(0);
  const Tensor<double> s = tape.watch(Tensor<double>({1, gen.style_dim()}, Buffer<double>(row.transpose().array())));
  const Tensor<double> p = select(classifier_forward(clf.params, gen.render(s, {4})).probs, {4});
  const Tensor<double> g = tape.backward(p).of(s);

  std::vector<Index> seen;
  for (const auto& sc : scores) {
    CHECK(sc.mean_grad == g[sc.dim]);
    CHECK(sc.direction == (g[sc.dim] > 0 ? -1 : 1));
    seen.push_back(sc.dim);
  }
  std::sort(seen.begin(), seen.end());
  for (std::size_t j = 0; j < seen.size(); ++j) CHECK(seen[j] == static_cast<Index>(j));
  for (std::size_t r = 1; r < scores.size(); ++r) CHECK(std::abs(scores[r - 1].mean_grad) >= std::abs(scores[r].mean_grad));
}

TEST_CASE("ranking agrees with a finite-difference sweep") {
  auto oracle = [](const auto& gen, const auto& clf, const ProbePopulation& pop, double delta) {
    const Index d = pop.styles.cols();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (Index j = 0; j < d; ++j) {
      Eigen::MatrixXd up = pop.styles, down = pop.styles;
      up.col(j).array() += delta;
      down.col(j).array() -= delta;
      mean[j] = ((true_class_probs(gen, clf, up, pop.labels) - true_class_probs(gen, clf, down, pop.labels)) /
                 (2 * delta))
                    .mean();
    }
    return mean;
  };
  auto top10 = [](const Eigen::VectorXd& v) {
    std::vector<Index> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return std::abs(v[a]) > std::abs(v[b]); });
    return std::set<Index>(idx.begin(), idx.begin() + 10);
  };
  auto compare = [&](const auto& gen, const auto& clf, double delta) {
    const ProbePopulation pop = build_population(gen, clf, 50, {}, 13);
    const auto scores = score_dimensions(pop, gen, clf);
    const Eigen::VectorXd fd = oracle(gen, clf, pop, delta);
    Eigen::VectorXd ad(fd.size());
    for (const auto& sc : scores) ad[sc.dim] = sc.mean_grad;
    for (Index j = 0; j < fd.size(); ++j) {
      if (std::abs(ad[j]) > 1e-4) CHECK(std::abs(ad[j] - fd[j]) / std::abs(ad[j]) < 0.05);
    }
    std::set<Index> common;
    const auto a = top10(ad), b = top10(fd);
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(common, common.begin()));
    CHECK(common.size() >= 8);
    return ad;
  };

  SUBCASE("analytic generator") {
    const AnalyticGenerator<double> gen(3);
    const Eigen::VectorXd ad = compare(gen, clean_classifier(), 1e-3);
    for (Index j = kAnalyticNamedDims; j < gen.style_dim(); ++j) CHECK(ad[j] == 0);
    const auto scores = score_dimensions(build_population(gen, clean_classifier(), 50, {}, 13), gen,
                                         clean_classifier());
    for (std::size_t r = 0; r < scores.size(); ++r) {
      if (scores[r].dim >= kAnalyticNamedDims) CHECK(scores[r].rank >= kAnalyticNamedDims);
    }
  }
  SUBCASE("learned generator") {
    // leaky-relu and max-pool kinks give O(delta) differences, so a smaller step
    const auto gen = init_generator<double>(5);
    compare(gen, clean_classifier(), 1e-5);
  }
}

TEST_CASE("score scope rules") {
  const AnalyticGenerator<double> gen(0, 2);
  const auto& clf = clean_classifier();
  const ProbePopulation pop = build_population(gen, clf, 30, {}, 2);

  ScoreOptions unfiltered;
  unfiltered.scope = Scope::of_class(1);
  unfiltered.filter_by_class = false;
  CHECK(kind_of([&] { score_dimensions(pop, gen, clf, unfiltered); }) == ErrorKind::kScopeMismatch);

  const ProbePopulation ones = build_population(gen, clf, 6, Scope::of_class(1), 2);
  CHECK_NOTHROW(score_dimensions(ones, gen, clf, unfiltered));

  // filtered class scope equals a global score over the class-only subset
  ScoreOptions scoped;
  scoped.scope = Scope::of_class(1);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < pop.size(); ++i) {
    if (pop.labels[i] == 1) rows.push_back(i);
  }
  const auto a = score_dimensions(pop, gen, clf, scoped);
  const auto b = score_dimensions(subset(pop, rows), gen, clf);
  for (std::size_t r = 0; r < a.size(); ++r) {
    CHECK(a[r].dim == b[r].dim);
    CHECK(a[r].mean_grad == doctest::Approx(b[r].mean_grad).epsilon(1e-12));
    CHECK(a[r].scope.name() == "class1");
  }

  const AnalyticGenerator<double> other(7, 2);
  CHECK(kind_of([&] { score_dimensions(pop, other, clf); }) == ErrorKind::kScopeMismatch);
  ScoreOptions well;
  well.well_only = true;
  const std::vector<int> labels(4, 0), wrong(4, 1);
  auto none_well = synthetic_population(Eigen::MatrixXd::Zero(4, gen.style_dim()), labels, wrong);
  none_well.provenance = pop.provenance;
  CHECK(kind_of([&] { score_dimensions(none_well, gen, clf, well); }) == ErrorKind::kEmptySubset);
}

TEST_CASE("KS statistic") {
  const std::vector<double> a{0.1, 0.5, 0.7, 2.0};
  CHECK(ks_statistic(a, a) == 0);
  CHECK(ks_statistic({1, 2, 3}, {4, 5}) == 1);

  // brute force: evaluate both empirical CDFs at every pooled value
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> x(30 + trial), y(17);
    for (auto& v : x) v = std::round(n(rng) * 4) / 4;
    for (auto& v : y) v = std::round((n(rng) + 0.3 * trial / 10) * 4) / 4;
    double expect = 0;
    std::vector<double> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    for (double t : pooled) {
      const double fx = std::count_if(x.begin(), x.end(), [&](double v) { return v <= t; }) / double(x.size());
      const double fy = std::count_if(y.begin(), y.end(), [&](double v) { return v <= t; }) / double(y.size());
      expect = std::max(expect, std::abs(fx - fy));
    }
    CHECK(ks_statistic(x, y) == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(kind_of([] { ks_statistic({}, {1.0}); }) == ErrorKind::kEmptySubset);
}

TEST_CASE("dimension histograms") {
  Eigen::MatrixXd ws(4, 2), ms(3, 2);
  ws << 0, 5, 1, 5, 2, 5, 3, 5;
  ms << 10, 5, 11, 5, 12, 5;
  const auto well = synthetic_population(ws, {0, 0, 0, 0}, {0, 0, 0, 0});
  const auto mis = synthetic_population(ms, {0, 0, 0}, {1, 1, 1});
  const HistogramPair h = dimension_histograms(well, mis, 0, 4);
  CHECK(h.edges.size() == 5);
  CHECK(h.edges.front() == 0);
  CHECK(h.edges.back() == 12);
  CHECK(std::accumulate(h.well.begin(), h.well.end(), std::size_t{0}) == 4);
  CHECK(std::accumulate(h.mis.begin(), h.mis.end(), std::size_t{0}) == 3);
  CHECK(h.well == std::vector<std::size_t>{3, 1, 0, 0});
  CHECK(h.mis == std::vector<std::size_t>{0, 0, 0, 3});
  CHECK(h.separation == 1);

  const HistogramPair flat = dimension_histograms(well, mis, 1, 3);
  CHECK(flat.separation == 0);
  CHECK(flat.well[1] == 4);

  const auto empty = synthetic_population(Eigen::MatrixXd(0, 2), {}, {});
  CHECK(kind_of([&] { dimension_histograms(well, empty, 0); }) == ErrorKind::kEmptySubset);
}

TEST_CASE("crossing search on synthetic responses") {
  ShiftOptions opt;
  opt.max_shift = 50;
  for (double a : {0.3, 1.0, 4.2, 17.5}) {
    const Crossing c = find_crossing([a](double t) { return sigmoid(a - t); }, opt);
    CHECK(c.converged);
    CHECK(std::abs(c.prob - 0.5) <= 0.01);
    // |sigmoid(a - t) - 0.5| <= 0.01 implies |t - a| <= 0.04
    CHECK(std::abs(c.shift - a) <= 0.0401);
  }
  // a tight tolerance pins the crossing to the analytic root
  ShiftOptions tight = opt;
  tight.tolerance = 1e-5;
  for (double a : {0.3, 4.2, 17.5}) CHECK(std::abs(find_crossing([a](double t) { return sigmoid(a - t); }, tight).shift - a) < 1e-3);

  CHECK(kind_of([&] { find_crossing([](double) { return 0.9; }, opt); }) == ErrorKind::kNoCrossingWithinBound);
  CHECK(kind_of([&] { find_crossing([](double) { return 0.4; }, opt); }) == ErrorKind::kStartBelowThreshold);
  CHECK(kind_of([&] { find_crossing([](double) { return 0.505; }, opt); }) == ErrorKind::kStartBelowThreshold);

  // bisection contract on random monotone responses
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 20);
  for (int trial = 0; trial < 50; ++trial) {
    const double a = u(rng), k = 0.2 + u(rng);
    const auto f = [&](double t) { return sigmoid(k * (a - t)); };
    const Crossing c = find_crossing(f, opt);
    CHECK(std::abs(f(c.shift) - 0.5) <= 0.01);
  }

  // a step response never meets the tolerance and is reported as unresolved
  const Crossing step = find_crossing([](double t) { return t < 3 ? 0.9 : 0.1; }, opt);
  CHECK_FALSE(step.converged);
  CHECK(step.shift == doctest::Approx(3).epsilon(1e-5));
}

TEST_CASE("shift reference, traversal and corner cases on the analytic generator") {
  const AnalyticGenerator<double> gen(0);
  const auto& clf = clean_classifier();
  const ProbePopulation pop = build_population(gen, clf, 300, {}, 21);
  const int label = 3;
  const Eigen::VectorXd s0 = class_mean_style(pop, label);
  const Eigen::VectorXd start_p = true_class_probs(gen, clf, Eigen::MatrixXd(s0.transpose()), {label});
  REQUIRE(start_p[0] > 0.6);

  ShiftOptions opt;
  opt.max_shift = default_shift_bound(pop, kNoiseAmp);
  const ShiftReference ref = find_shift_reference(s0, kNoiseAmp, 1, gen, clf, label, opt);
  CHECK(ref.converged);
  CHECK(ref.shift > 0);
  Eigen::MatrixXd at = s0.transpose();
  at(0, kNoiseAmp) += ref.shift;
  CHECK(std::abs(true_class_probs(gen, clf, at, {label})[0] - 0.5) <= 0.01);

  ShiftOptions pad = opt;
  pad.max_shift = default_shift_bound(pop, kAnalyticNamedDims + 2);
  CHECK(kind_of([&] { find_shift_reference(s0, kAnalyticNamedDims + 2, 1, gen, clf, label, pad); }) ==
        ErrorKind::kNoCrossingWithinBound);

  const auto fractions = default_fractions();
  const TraversalResult tr = traverse(s0, kNoiseAmp, 1, gen, clf, label, fractions, opt);
  REQUIRE(tr.frames.size() == fractions.size());
  CHECK(tr.shift_reference == ref.shift);
  for (std::size_t i = 0; i < fractions.size(); ++i) CHECK(tr.frames[i].shift == fractions[i] * tr.shift_reference);
  CHECK(tr.frames.front().shift == 0);
  CHECK(tr.frames.front().true_class_prob == doctest::Approx(start_p[0]).epsilon(1e-12));
  const Tensor<double> s0t({1, gen.style_dim()}, Buffer<double>(s0.array()));
  CHECK((tr.frames.front().image - to_image(gen.render(s0t, {label}))).abs().maxCoeff() == 0);
  CHECK(std::abs(tr.frames.back().true_class_prob - 0.5) <= 0.01);
  CHECK(tr.frames.back().true_class_prob < tr.frames.front().true_class_prob);

  bool noise_case = false;
  for (int k = 0; k < kNumClasses; ++k) {
    CornerCaseReport report;
    try {
      report = find_corner_cases(pop, k, gen, clf);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kStartBelowThreshold);
      continue;
    }
    CHECK(report.dims.size() == 10);
    for (const CornerCase& c : report.cases) {
      CHECK(c.dim < kAnalyticNamedDims);
      CHECK(std::abs(c.true_class_prob - 0.5) <= 0.01);
      CHECK(c.predicted_after != k);
      CHECK(c.true_prob_after < c.runner_up_prob_after);
      Eigen::MatrixXd again = report.start.transpose();
      again(0, c.dim) += c.shift;
      CHECK(std::abs(true_class_probs(gen, clf, again, {k})[0] - 0.5) <= 0.01);
      noise_case |= c.dim == kNoiseAmp;
    }
    for (const SkippedDim& sk : report.skipped) {
      if (sk.dim >= kAnalyticNamedDims) CHECK(sk.reason == "no crossing within bound");
    }
    std::size_t padding_tried = 0, padding_skipped = 0;
    for (Index d : report.dims) padding_tried += d >= kAnalyticNamedDims;
    for (const SkippedDim& sk : report.skipped) padding_skipped += sk.dim >= kAnalyticNamedDims;
    CHECK(padding_skipped == padding_tried);
  }
  CHECK(noise_case);

  // a start that is already misclassified
  Eigen::VectorXd bad = s0;
  bad[kNoiseAmp] += 2 * ref.shift;
  ShiftOptions o2 = opt;
  CHECK(kind_of([&] { find_shift_reference(bad, kNoiseAmp, 1, gen, clf, label, o2); }) ==
        ErrorKind::kStartBelowThreshold);
}

TEST_CASE("class mean style") {
  Eigen::MatrixXd s(3, 4);
  s << 1, -2, 3, 0.5, -1, 2, -3, -0.5, 7, 7, 7, 7;
  const auto pop = synthetic_population(s, {2, 2, 5}, {2, 1, 5});
  CHECK(class_mean_style(pop, 2).norm() == 0);
  CHECK(class_mean_style(pop, 5) == Eigen::VectorXd(s.row(2).transpose()));
  CHECK(class_mean_style(pop, 2, true) == Eigen::VectorXd(s.row(0).transpose()));
  CHECK(kind_of([&] { class_mean_style(pop, 4); }) == ErrorKind::kEmptySubset);
  CHECK(class_mean_style(pop, 5, true) == class_mean_style(pop, 5));
}

TEST_CASE("accuracy versus distance") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 1);
  const Index count = 3000, d = 6;
  Eigen::MatrixXd s(count, d);
  for (Index i = 0; i < count; ++i) {
    for (Index j = 0; j < d; ++j) s(i, j) = n(rng) * (j + 1);
  }
  std::vector<int> labels(count, 0), predicted(count, 0);
  std::uniform_real_distribution<double> u(0, 1);
  for (Index i = 0; i < count; ++i) {
    // farther samples are more often wrong
    const double r = std::abs(s(i, 0)) + std::abs(s(i, 1)) / 2;
    predicted[i] = u(rng) < std::min(0.9, 0.1 * r) ? 1 : 0;
  }
  const auto pop = synthetic_population(s, labels, predicted);
  const std::vector<Index> dims{0, 1};
  const Eigen::VectorXd center = Eigen::VectorXd::Zero(d);
  const AccuracyCurve curve = accuracy_vs_distance(pop, center, dims);

  // independent recount
  const Eigen::VectorXd scale = style_scale(pop);
  std::vector<double> dist(count);
  for (Index i = 0; i < count; ++i) dist[i] = std::hypot(s(i, 0) / scale[0], s(i, 1) / scale[1]);
  std::vector<double> sorted = dist;
  std::sort(sorted.begin(), sorted.end());
  const double pos = 0.95 * (count - 1);
  const double cutoff = sorted[std::size_t(pos)] + (pos - std::floor(pos)) * (sorted[std::size_t(pos) + 1] - sorted[std::size_t(pos)]);
  CHECK(curve.cutoff == doctest::Approx(cutoff).epsilon(1e-12));
  std::size_t kept = 0;
  for (double v : dist) kept += v <= cutoff;
  std::size_t total = 0;
  for (std::size_t b = 0; b < curve.bins.size(); ++b) {
    const CurveBin& bin = curve.bins[b];
    CHECK(bin.count >= 200);
    total += bin.count;
    std::size_t c = 0, ok = 0;
    for (Index i = 0; i < count; ++i) {
      const bool in = dist[i] >= bin.lo && (dist[i] < bin.hi || (b + 1 == curve.bins.size() && dist[i] <= bin.hi));
      if (in) {
        ++c;
        ok += predicted[i] == 0;
      }
    }
    CHECK(c == bin.count);
    CHECK(bin.accuracy == doctest::Approx(double(ok) / c));
    if (b > 0) CHECK(bin.lo == curve.bins[b - 1].hi);
  }
  CHECK(total == kept);
  CHECK(curve.bins.front().lo == 0);
  CHECK(curve.bins.back().hi == doctest::Approx(cutoff));
  CHECK(curve.bins.front().accuracy > curve.bins.back().accuracy);

  const auto all_right = synthetic_population(s, labels, labels);
  for (const CurveBin& b : accuracy_vs_distance(all_right, center, dims).bins) CHECK(b.accuracy == 1.0);

  // the center sample falls in the first bin and is counted once
  const Eigen::VectorXd at_sample = s.row(5).transpose();
  const AccuracyCurve around = accuracy_vs_distance(all_right, at_sample, dims);
  std::size_t sum = 0;
  for (const CurveBin& b : around.bins) sum += b.count;
  std::size_t expect = 0;
  std::vector<double> d5(count);
  for (Index i = 0; i < count; ++i) d5[i] = std::hypot((s(i, 0) - s(5, 0)) / scale[0], (s(i, 1) - s(5, 1)) / scale[1]);
  for (double v : d5) expect += v <= around.cutoff;
  CHECK(sum == expect);
  CHECK(around.bins.front().lo == 0);

  CurveOptions fixed;
  fixed.edges = {0, 0.5, 1, 2, 4};
  const AccuracyCurve explicit_curve = accuracy_vs_distance(pop, center, dims, fixed);
  CHECK(explicit_curve.cutoff == 4);
  CHECK(explicit_curve.bins.back().hi == 4);

  CurveOptions huge;
  huge.min_count = 10000;
  CHECK(kind_of([&] { accuracy_vs_distance(pop, center, dims, huge); }) == ErrorKind::kEmptySubset);
  const auto empty = synthetic_population(Eigen::MatrixXd(0, d), {}, {});
  CHECK(kind_of([&] { accuracy_vs_distance(empty, center, dims); }) == ErrorKind::kEmptySubset);
}

TEST_CASE("t-SNE") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd x(40, 5);
  std::vector<int> labels(40);
  for (Index i = 0; i < 40; ++i) {
    labels[i] = i < 20 ? 0 : 1;
    for (Index j = 0; j < 5; ++j) x(i, j) = n(rng) + (labels[i] ? 20.0 : 0.0);
  }
  const Eigen::MatrixXd p = conditional_affinities(x, 8);
  for (Index i = 0; i < 40; ++i) {
    CHECK(std::abs(p.row(i).sum() - 1) < 1e-5);
    CHECK(p(i, i) == 0);
    // perplexity of each row matches the target
    double h = 0;
    for (Index j = 0; j < 40; ++j) {
      if (p(i, j) > 0) h -= p(i, j) * std::log(p(i, j));
    }
    CHECK(std::exp(h) == doctest::Approx(8).epsilon(1e-3));
  }

  TsneOptions opt;
  opt.perplexity = 8;
  opt.iterations = 500;
  opt.seed = 3;
  const Eigen::MatrixXd y = tsne_project(x, opt);
  CHECK(y.rows() == 40);
  CHECK(y.cols() == 2);
  // least-squares linear classifier on the embedding
  Eigen::MatrixXd a(40, 3);
  a << y, Eigen::VectorXd::Ones(40);
  Eigen::VectorXd t(40);
  for (Index i = 0; i < 40; ++i) t[i] = labels[i] ? 1 : -1;
  const Eigen::VectorXd w = a.colPivHouseholderQr().solve(t);
  int correct = 0;
  for (Index i = 0; i < 40; ++i) correct += ((a.row(i) * w)(0) > 0) == (labels[i] == 1);
  CHECK(correct >= 38);
  CHECK(silhouette_score(y, labels) > 0.5);

  CHECK(tsne_project(x, opt) == y);
  // duplicating the point set keeps the result a pure function of the input
  Eigen::MatrixXd dup(80, 5);
  dup << x, x;
  opt.iterations = 100;
  CHECK(tsne_project(dup, opt) == tsne_project(dup, opt));

  CHECK(kind_of([&] { tsne_project(Eigen::MatrixXd::Zero(9, 2), opt); }) == ErrorKind::kTooManyPoints);
  CHECK(kind_of([&] { tsne_project(Eigen::MatrixXd::Zero(5001, 2), opt); }) == ErrorKind::kTooManyPoints);
  TsneOptions big = opt;
  big.perplexity = 40.0 / 3;
  CHECK(kind_of([&] { tsne_project(x, big); }) == ErrorKind::kBadPerplexity);
  big.perplexity = 0;
  CHECK(kind_of([&] { tsne_project(x, big); }) == ErrorKind::kBadPerplexity);
}

TEST_CASE("silhouette score") {
  Eigen::MatrixXd pts(4, 1);
  pts << 0, 1, 10, 12;
  const std::vector<int> labels{0, 0, 1, 1};
  // a(0)=1, b(0)=11 ; a(1)=1, b(1)=10 ; a(2)=2, b(2)=9.5 ; a(3)=2, b(3)=11.5
  const double expect = ((11 - 1) / 11.0 + (10 - 1) / 10.0 + (9.5 - 2) / 9.5 + (11.5 - 2) / 11.5) / 4;
  CHECK(silhouette_score(pts, labels) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(silhouette_score(pts, {0, 0, 0, 0}) == 0);
  CHECK(silhouette_score(pts, {0, 1, 1, 1}) < expect);
}

TEST_CASE("Frechet feature distance") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd a(500, 4);
  for (auto& v : a.reshaped()) v = n(rng);
  CHECK(std::abs(frechet_feature_distance(a, a).distance) < 1e-6);

  // whiten so the sample covariance is exactly the identity, then shift the mean
  const Eigen::RowVectorXd mu = a.colwise().mean();
  Eigen::MatrixXd c = a.rowwise() - mu;
  const Eigen::MatrixXd cov = c.transpose() * c / double(a.rows() - 1);
  const Eigen::MatrixXd l = cov.llt().matrixL();
  const Eigen::MatrixXd white = (l.triangularView<Eigen::Lower>().solve(c.transpose())).transpose();
  Eigen::RowVectorXd dvec(4);
  dvec << 1, -2, 0.5, 3;
  const Eigen::MatrixXd shifted = white.rowwise() + dvec;
  const FrechetResult r = frechet_feature_distance(white, shifted);
  CHECK(r.distance == doctest::Approx(dvec.squaredNorm()).epsilon(1e-9));
  CHECK_FALSE(r.shrinkage_applied);

  // scaled covariance: ||d||^2 + d (1 - sqrt(k))^2 for S_b = k S_a = k I
  const Eigen::MatrixXd scaled = 3.0 * white;
  CHECK(frechet_feature_distance(white, scaled).distance == doctest::Approx(4 * std::pow(1 - 3.0, 2)).epsilon(1e-9));

  const FrechetResult few = frechet_feature_distance(a.topRows(3), a.bottomRows(3));
  CHECK(few.shrinkage_applied);
  CHECK(std::isfinite(few.distance));
  CHECK(kind_of([&] { frechet_feature_distance(a, Eigen::MatrixXd::Zero(10, 3)); }) == ErrorKind::kShapeMismatch);

  // real halves are closer to each other than to uniform noise in classifier features
  const auto& clf = clean_classifier();
  const Dataset real = procedural_dataset(400, 90);
  const Dataset half_a(real.begin(), real.begin() + 200), half_b(real.begin() + 200, real.end());
  Dataset noise(200);
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& s : noise) {
    s.image = Image(kImageSize, kImageSize);
    for (auto& v : s.image.reshaped()) v = u(rng);
  }
  const Eigen::MatrixXd fa = penultimate_features(clf, half_a), fb = penultimate_features(clf, half_b),
                        fn = penultimate_features(clf, noise);
  CHECK(frechet_feature_distance(fa, fb).distance < frechet_feature_distance(fa, fn).distance);
}
