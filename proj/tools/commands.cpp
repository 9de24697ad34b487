#include "commands.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <random>

#include "lsp/analytic.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/classifier.hpp"
#include "lsp/generator.hpp"
#include "lsp/ops.hpp"
#include "lsp/report.hpp"

namespace lsp::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kInvalidClass:
    case ErrorKind::kScopeMismatch:
    case ErrorKind::kTooManyPoints:
    case ErrorKind::kBadPerplexity:
      return kExitConfig;
    case ErrorKind::kBadMagic:
    case ErrorKind::kCountMismatch:
    case ErrorKind::kTruncatedFile:
    case ErrorKind::kUnknownLabel:
    case ErrorKind::kEmptyDataset:
    case ErrorKind::kIoFailure:
    case ErrorKind::kShapeMismatch:
    case ErrorKind::kUnknownAttribute:
    case ErrorKind::kEmptySubset:
      return kExitData;
    case ErrorKind::kNotScalar:
    case ErrorKind::kDetachedOutput:
    case ErrorKind::kNonFiniteEvaluation:
    case ErrorKind::kDivergedTraining:
    case ErrorKind::kStartBelowThreshold:
    case ErrorKind::kNoCrossingWithinBound:
    case ErrorKind::kDegenerateCovariance:
    case ErrorKind::kGradientCheckFailed:
      return kExitNumeric;
  }
  return kExitNumeric;
}

namespace {

std::string file_digest(const fs::path& path) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : read_file(path)) h = (h ^ c) * 0x100000001b3ull;
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// Collects what a command read and wrote; finish() writes <out>/<command>.provenance.json.
class RunRecord {
 public:
  RunRecord(std::string command, const RunConfig& config) : command_(std::move(command)), config_(config) {}

  void seed(const std::string& role, std::uint64_t value) { seeds_[role] = value; }
  void input(const std::string& role, const fs::path& path, const std::string& id) {
    inputs_.push_back({{"role", role}, {"path", path.generic_string()}, {"id", id}});
  }
  void input(const std::string& role, const std::string& id) { inputs_.push_back({{"role", role}, {"id", id}}); }
  void write(const fs::path& path, const std::string& bytes) {
    write_file(path, bytes);
    written(path);
  }
  void write_json(const fs::path& path, const ojson& doc) { write(path, doc.dump(2) + "\n"); }
  void written(const fs::path& path) { outputs_.push_back(path.generic_string()); }

  ojson header() const {
    return {{"schema_version", kReportSchemaVersion},
            {"command", command_},
            {"provenance", provenance_path().filename().generic_string()}};
  }
  fs::path out(const std::string& name) const { return config_.out_dir() / name; }
  fs::path provenance_path() const { return out(command_ + ".provenance.json"); }

  void finish() const {
    const ojson doc = {{"schema_version", kReportSchemaVersion},
                       {"command", command_},
                       {"config", config_json(config_)},
                       {"seeds", seeds_},
                       {"inputs", inputs_},
                       {"outputs", outputs_}};
    write_file(provenance_path(), doc.dump(2) + "\n");
  }

 private:
  std::string command_;
  const RunConfig& config_;
  ojson seeds_ = ojson::object();
  ojson inputs_ = ojson::array();
  ojson outputs_ = ojson::array();
};

const char* arrow(int direction) { return direction > 0 ? "↑" : "↓"; }

ojson severity_json(const SeverityConfig& s) {
  return {{"noise_sigma", s.noise_sigma}, {"blur_sigma", s.blur_sigma}, {"blur_radius", s.blur_radius}};
}

Dataset clean_part(const Dataset& data) {
  Dataset out;
  for (const auto& sample : data) {
    if (!sample.corrupted) out.push_back(sample);
  }
  return out;
}

std::vector<double> column(const ProbePopulation& pop, Index dim) {
  std::vector<double> v(pop.size());
  for (std::size_t i = 0; i < pop.size(); ++i) v[i] = pop.styles(static_cast<Index>(i), dim);
  return v;
}

template <typename S>
struct Models {
  std::unique_ptr<Generator<S>> gen;
  Classifier<S> clf;
};

template <typename S>
std::unique_ptr<Generator<S>> load_recorded_generator(const RunConfig& c, RunRecord& rec) {
  auto gen = make_generator<S>(c);
  if (c.generator == "learned") {
    rec.input("generator", c.generator_stem(), gen->id());
  } else {
    rec.input("generator", gen->id());
  }
  return gen;
}

template <typename S>
Classifier<S> load_recorded_classifier(const fs::path& stem, RunRecord& rec) {
  Classifier<S> clf = load_classifier<S>(stem);
  rec.input("classifier", stem, classifier_id(clf));
  return clf;
}

template <typename S>
Models<S> load_models(const RunConfig& c, RunRecord& rec) {
  Models<S> m;
  m.gen = load_recorded_generator<S>(c, rec);
  m.clf = load_recorded_classifier<S>(c.classifier_stem(), rec);
  return m;
}

void make_dataset(const RunConfig& c, std::ostream& log) {
  RunRecord rec("make-dataset", c);
  const auto& d = c.make_dataset;
  const SeverityConfig severity = c.severity();
  Dataset train, test;
  if (d.source == "procedural") {
    if (d.count == 0 || d.test_count == 0) throw Error(ErrorKind::kEmptyDataset, "dataset counts must be positive");
    train = procedural_dataset(d.count, c.seed);
    test = procedural_dataset(d.test_count, c.seed + 2);
  } else {
    if (d.idx_images.empty() || d.idx_labels.empty() || d.idx_test_images.empty() || d.idx_test_labels.empty()) {
      throw Error(ErrorKind::kConfig, "idx source needs training and test image and label paths");
    }
    train = load_idx(d.idx_images, d.idx_labels);
    test = load_idx(d.idx_test_images, d.idx_test_labels);
    rec.input("idx-images", d.idx_images, file_digest(d.idx_images));
    rec.input("idx-labels", d.idx_labels, file_digest(d.idx_labels));
    rec.input("idx-test-images", d.idx_test_images, file_digest(d.idx_test_images));
    rec.input("idx-test-labels", d.idx_test_labels, file_digest(d.idx_test_labels));
    if (train.empty() || test.empty()) throw Error(ErrorKind::kEmptyDataset, "idx files contain no images");
  }
  rec.seed("train-images", c.seed);
  rec.seed("train-corruption", c.seed + 1);
  rec.seed("test-images", c.seed + 2);
  rec.seed("test-corruption", c.seed + 3);
  train = corrupt_dataset(train, severity, c.seed + 1);
  test = corrupt_dataset(test, severity, c.seed + 3);

  auto save = [&](const fs::path& stem, const Dataset& data) {
    const DatasetCacheInfo info{data.size(), clean_part(data).size(), severity, c.seed, d.source};
    save_dataset_cache(stem, data, info);
    rec.written(fs::path(stem).concat(".lpt"));
    rec.written(fs::path(stem).concat(".json"));
    log << stem.generic_string() << ": " << data.size() << " images, " << info.clean_count << " clean, "
        << data.size() - info.clean_count << " corrupted\n";
  };
  save(c.dataset_stem(), train);
  save(c.test_dataset_stem(), test);
  log << "severity " << severity_json(severity).dump() << "\n";
  rec.finish();
}

void train(const RunConfig& c, std::ostream& log) {
  RunRecord rec("train", c);
  const auto& t = c.train;
  Dataset data = load_dataset_cache(c.dataset_stem());
  Dataset test = load_dataset_cache(c.test_dataset_stem());
  rec.input("dataset", c.dataset_stem(), file_digest(fs::path(c.dataset_stem()).concat(".lpt")));
  rec.input("test-dataset", c.test_dataset_stem(), file_digest(fs::path(c.test_dataset_stem()).concat(".lpt")));
  if (t.data == "clean") {
    data = clean_part(data);
    test = clean_part(test);
  }
  rec.seed("training", c.seed);
  auto progress = [&](int epoch, double loss) { log << "epoch " << epoch + 1 << " loss " << loss << "\n"; };

  if (t.target == "classifier") {
    ClassifierTrainConfig tc;
    if (t.epochs >= 0) tc.epochs = t.epochs;
    if (t.lr > 0) tc.lr = t.lr;
    tc.batch = t.batch;
    tc.seed = c.seed;
    tc.trained_on = t.data;
    Classifier<float> model = train_classifier(data, tc, progress);
    model.info.final_accuracy = evaluate(model, test).accuracy;
    const fs::path stem = c.classifier.empty() ? c.out_dir() / ("classifier-" + t.data) : fs::path(c.classifier);
    save_classifier(stem, model);
    rec.written(fs::path(stem).concat(".lpt"));
    rec.written(fs::path(stem).concat(".json"));
    log << "held-out accuracy " << model.info.final_accuracy << " (" << classifier_id(model) << ")\n";
  } else {
    GeneratorTrainConfig gc;
    gc.regime = parse_regime(t.regime);
    if (t.epochs >= 0) gc.epochs = t.epochs;
    if (t.lr > 0) gc.lr = t.lr;
    gc.batch = t.batch;
    gc.seed = c.seed;
    gc.kl_weight = t.kl_weight;
    LearnedGenerator<float> gen = train_generator(data, gc, progress);
    gen.info.reconstruction_mse = reconstruction_mse(gen, test);
    save_generator(c.generator_stem(), gen);
    rec.written(fs::path(c.generator_stem()).concat(".lpt"));
    rec.written(fs::path(c.generator_stem()).concat(".json"));
    log << "held-out reconstruction mse " << gen.info.reconstruction_mse << " (" << gen.id() << ")\n";
  }
  rec.finish();
}

template <typename S>
void rank(const RunConfig& c, std::ostream& log) {
  RunRecord rec("rank", c);
  const Models<S> m = load_models<S>(c, rec);
  const Scope scope = parse_scope(c.rank.scope);
  rec.seed("population", c.seed);
  const ProbePopulation pop = build_population(*m.gen, m.clf, c.rank.count, scope, c.seed);
  const auto scores = score_dimensions(pop, *m.gen, m.clf, {scope});
  const PopulationSplit split = split_populations(pop);
  const std::size_t top = std::min(c.rank.top, scores.size());

  std::string csv = csv_row({"rank", "dim", "mean_grad", "direction", "scope"});
  ojson dims = ojson::array();
  for (std::size_t r = 0; r < top; ++r) {
    const DimensionScore& s = scores[r];
    csv += csv_row({std::to_string(r + 1), std::to_string(s.dim), format_number(s.mean_grad),
                    std::to_string(s.direction), scope.name()});
    ojson ks = nullptr;
    if (split.well.size() > 0 && split.mis.size() > 0) {
      ks = ks_statistic(column(split.well, s.dim), column(split.mis, s.dim));
    }
    dims.push_back({{"rank", r + 1},
                    {"dim", s.dim},
                    {"name", m.gen->dim_name(s.dim)},
                    {"mean_grad", s.mean_grad},
                    {"direction", s.direction},
                    {"sign_disagreement", s.sign_disagreement},
                    {"ks", ks}});
  }
  ojson doc = rec.header();
  doc["generator_id"] = m.gen->id();
  doc["classifier_id"] = classifier_id(m.clf);
  doc["d_s"] = m.gen->style_dim();
  doc["scope"] = scope.name();
  doc["count"] = pop.size();
  doc["seed"] = c.seed;
  doc["accuracy"] = pop.accuracy();
  doc["well_classified"] = split.well.size();
  doc["misclassified"] = split.mis.size();
  doc["dims"] = dims;
  rec.write(rec.out("rankings.csv"), csv);
  rec.write_json(rec.out("rankings.json"), doc);
  log << "ranked " << scores.size() << " dims over " << pop.size() << " samples (accuracy " << pop.accuracy()
      << "); top " << top << " written\n";
  rec.finish();
}

struct RankedDim {
  Index dim;
  int direction;
};

// Top dims with directions, from a rankings file made by the same models or by scoring `pop`.
template <typename S>
std::vector<RankedDim> ranked_dims(const RunConfig& c, const Models<S>& m, const ProbePopulation& pop, Scope scope,
                                   std::size_t top, RunRecord& rec) {
  std::vector<RankedDim> ranked;
  if (!c.rankings.empty()) {
    const auto doc = nlohmann::json::parse(read_file(c.rankings));
    if (doc.value("d_s", Index{-1}) != m.gen->style_dim() || doc.value("generator_id", "") != m.gen->id() ||
        doc.value("classifier_id", "") != classifier_id(m.clf)) {
      throw Error(ErrorKind::kShapeMismatch, c.rankings + " was ranked with different checkpoints");
    }
    rec.input("rankings", c.rankings, file_digest(c.rankings));
    for (const auto& d : doc.at("dims")) ranked.push_back({d.at("dim").get<Index>(), d.at("direction").get<int>()});
    return ranked;
  }
  for (const auto& s : score_dimensions(pop, *m.gen, m.clf, {scope})) ranked.push_back({s.dim, s.direction});
  if (top < ranked.size()) ranked.resize(top);
  return ranked;
}

ojson skip_entry(Index dim, const Error& e) {
  return {{"dim", dim}, {"error", std::string(to_string(e.kind()))}, {"reason", e.what()}};
}

bool probe_failure(const Error& e) {
  return e.kind() == ErrorKind::kStartBelowThreshold || e.kind() == ErrorKind::kNoCrossingWithinBound ||
         e.kind() == ErrorKind::kNonFiniteEvaluation;
}

template <typename S>
void traverse_cmd(const RunConfig& c, std::ostream& log) {
  RunRecord rec("traverse", c);
  const auto& t = c.traverse;
  if (t.fractions.empty()) throw Error(ErrorKind::kConfig, "traverse needs at least one fraction");
  const Models<S> m = load_models<S>(c, rec);
  const int k = t.start_class;
  rec.seed("population", c.seed);
  const ProbePopulation pop = build_population(*m.gen, m.clf, t.count, Scope::of_class(k), c.seed);
  Eigen::VectorXd s0;
  if (t.start == "class-mean") {
    s0 = class_mean_style(pop, k);
  } else {
    if (t.sample >= pop.size()) throw Error(ErrorKind::kConfig, "start sample index beyond the population");
    s0 = pop.styles.row(static_cast<Index>(t.sample)).transpose();
  }

  // With explicit dims every ranked dim is needed to look up directions.
  const auto ranked = ranked_dims(c, m, pop, Scope::of_class(k), t.dims.empty() ? t.top : pop.styles.cols(), rec);
  std::vector<RankedDim> chosen;
  if (t.dims.empty()) {
    chosen = ranked;
  } else {
    for (Index dim : t.dims) {
      const auto it = std::find_if(ranked.begin(), ranked.end(), [&](const RankedDim& r) { return r.dim == dim; });
      if (it == ranked.end()) throw Error(ErrorKind::kConfig, "dim " + std::to_string(dim) + " has no ranking");
      chosen.push_back(*it);
    }
  }

  std::vector<TraversalResult> done;
  ojson skipped = ojson::array();
  for (const RankedDim& r : chosen) {
    ShiftOptions options;
    options.max_shift = default_shift_bound(pop, r.dim, t.bound_factor);
    options.tolerance = t.tolerance;
    try {
      done.push_back(traverse(s0, r.dim, r.direction, *m.gen, m.clf, k, t.fractions, options));
    } catch (const Error& e) {
      if (!probe_failure(e)) throw;
      skipped.push_back(skip_entry(r.dim, e));
      log << "dim " << r.dim << " skipped: " << e.what() << "\n";
    }
  }

  ojson traversals = ojson::array();
  for (const TraversalResult& tr : done) {
    ojson frames = ojson::array();
    for (const Frame& f : tr.frames) {
      frames.push_back({{"fraction", f.fraction},
                        {"shift", f.shift},
                        {"true_class_prob", f.true_class_prob},
                        {"predicted", f.predicted}});
    }
    traversals.push_back({{"dim", tr.dim},
                          {"name", m.gen->dim_name(tr.dim)},
                          {"direction", tr.direction},
                          {"shift_reference", tr.shift_reference},
                          {"frames", frames}});
  }
  ojson doc = rec.header();
  doc["generator_id"] = m.gen->id();
  doc["classifier_id"] = classifier_id(m.clf);
  doc["label"] = k;
  doc["start"] = t.start;
  if (t.start == "sample") doc["sample"] = t.sample;
  doc["start_style"] = std::vector<double>(s0.data(), s0.data() + s0.size());
  doc["fractions"] = t.fractions;
  doc["traversals"] = traversals;
  doc["skipped"] = skipped;
  doc["grid"] = done.empty() ? ojson(nullptr) : ojson("traverse.json");
  rec.write_json(rec.out("frames.json"), doc);

  if (done.empty()) {
    rec.finish();
    throw Error(ErrorKind::kNoCrossingWithinBound, "no dimension could be traversed");
  }
  ImageGrid grid(static_cast<Index>(t.fractions.size()), static_cast<Index>(done.size()));
  for (double f : t.fractions) grid.row_labels.push_back("fraction " + format_number(f));
  for (std::size_t col = 0; col < done.size(); ++col) {
    const TraversalResult& tr = done[col];
    grid.col_labels.push_back("dim " + std::to_string(tr.dim) + " " + arrow(tr.direction));
    for (std::size_t row = 0; row < tr.frames.size(); ++row) {
      const Frame& f = tr.frames[row];
      const auto r = static_cast<Index>(row), cc = static_cast<Index>(col);
      grid.cell(r, cc) = f.image;
      grid.annotation(r, cc) = {{"dim", tr.dim},
                                {"direction", tr.direction},
                                {"arrow", arrow(tr.direction)},
                                {"fraction", f.fraction},
                                {"shift", f.shift},
                                {"true_class_prob", f.true_class_prob},
                                {"predicted", f.predicted},
                                {"label", k}};
    }
  }
  for (const auto& p : write_image_grid(grid, rec.out("traverse"), c.png)) rec.written(p);
  log << done.size() << " dims traversed, " << skipped.size() << " skipped\n";
  rec.finish();
}

template <typename S>
void corner_cases_cmd(const RunConfig& c, std::ostream& log) {
  RunRecord rec("corner-cases", c);
  const auto& cc = c.corner_cases;
  if (cc.classes.empty() || cc.top_m < 1) throw Error(ErrorKind::kConfig, "need classes and top_m >= 1");
  const Models<S> m = load_models<S>(c, rec);
  rec.seed("population", c.seed);
  const CornerCaseOptions options{cc.top_m, false, cc.bound_factor, cc.tolerance};

  std::vector<CornerCaseReport> reports;
  ojson classes = ojson::array();
  ojson skipped_classes = ojson::array();
  for (int k : cc.classes) {
    const ProbePopulation pop = build_population(*m.gen, m.clf, cc.count, Scope::of_class(k), c.seed);
    try {
      reports.push_back(find_corner_cases(pop, k, *m.gen, m.clf, options));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kStartBelowThreshold) throw;
      skipped_classes.push_back({{"label", k}, {"error", std::string(to_string(e.kind()))}, {"reason", e.what()}});
      log << "class " << k << " skipped: " << e.what() << "\n";
      continue;
    }
    const CornerCaseReport& rep = reports.back();
    ojson cases = ojson::array();
    for (const CornerCase& cs : rep.cases) {
      cases.push_back({{"dim", cs.dim},
                       {"name", m.gen->dim_name(cs.dim)},
                       {"direction", cs.direction},
                       {"shift", cs.shift},
                       {"true_class_prob", cs.true_class_prob},
                       {"predicted_after", cs.predicted_after},
                       {"true_prob_after", cs.true_prob_after},
                       {"runner_up_prob_after", cs.runner_up_prob_after}});
    }
    ojson skipped = ojson::array();
    for (const SkippedDim& s : rep.skipped) skipped.push_back({{"dim", s.dim}, {"reason", s.reason}});
    classes.push_back(
        {{"label", k}, {"start_prob", rep.start_prob}, {"dims", rep.dims}, {"cases", cases}, {"skipped", skipped}});
    log << "class " << k << ": " << rep.cases.size() << " corner cases, " << rep.skipped.size() << " dims skipped\n";
  }
  ojson doc = rec.header();
  doc["generator_id"] = m.gen->id();
  doc["classifier_id"] = classifier_id(m.clf);
  doc["top_m"] = cc.top_m;
  doc["tolerance"] = cc.tolerance;
  doc["classes"] = classes;
  doc["skipped_classes"] = skipped_classes;
  doc["grid"] = reports.empty() ? ojson(nullptr) : ojson("corner_cases_grid.json");
  rec.write_json(rec.out("corner_cases.json"), doc);
  if (reports.empty()) {
    rec.finish();
    throw Error(ErrorKind::kStartBelowThreshold, "no class mean is confidently classified");
  }

  ImageGrid grid(static_cast<Index>(reports.size()), 1 + cc.top_m);
  grid.col_labels.push_back("class mean");
  for (int j = 1; j <= cc.top_m; ++j) grid.col_labels.push_back("case " + std::to_string(j));
  for (std::size_t row = 0; row < reports.size(); ++row) {
    const CornerCaseReport& rep = reports[row];
    const auto r = static_cast<Index>(row);
    grid.row_labels.push_back("class " + std::to_string(rep.label));
    grid.cell(r, 0) = rep.start_image;
    grid.annotation(r, 0) = {{"label", rep.label}, {"start", "class-mean"}, {"true_class_prob", rep.start_prob}};
    for (std::size_t j = 0; j < rep.cases.size(); ++j) {
      const CornerCase& cs = rep.cases[j];
      const auto col = static_cast<Index>(j + 1);
      grid.cell(r, col) = cs.image;
      grid.annotation(r, col) = {{"label", rep.label},
                                 {"dim", cs.dim},
                                 {"direction", cs.direction},
                                 {"arrow", arrow(cs.direction)},
                                 {"true_class_prob", cs.true_class_prob},
                                 {"predicted_after", cs.predicted_after}};
    }
  }
  for (const auto& p : write_image_grid(grid, rec.out("corner_cases_grid"), c.png)) rec.written(p);
  rec.finish();
}

template <typename S>
void accuracy_curve_cmd(const RunConfig& c, std::ostream& log) {
  RunRecord rec("accuracy-curve", c);
  const auto gen = load_recorded_generator<S>(c, rec);
  std::vector<fs::path> paths;
  for (const auto& p : c.accuracy_curve.classifiers) paths.emplace_back(p);
  if (paths.empty()) paths.push_back(c.classifier_stem());
  std::vector<Classifier<S>> classifiers;
  for (const auto& p : paths) classifiers.push_back(load_recorded_classifier<S>(p, rec));
  rec.seed("population", c.seed);
  const CurveFamily family = matched_curves(*gen, classifiers, c.accuracy_curve, c.seed);

  std::string csv = csv_row({"classifier_id", "scope", "bin_lo", "bin_hi", "count", "accuracy"});
  ojson curves = ojson::array();
  for (const LabelledCurve& lc : family.curves) {
    ojson bins = ojson::array();
    for (const CurveBin& b : lc.curve.bins) {
      csv += csv_row({lc.classifier_id, lc.scope.name(), format_number(b.lo), format_number(b.hi),
                      std::to_string(b.count), format_number(b.accuracy)});
      bins.push_back(
          {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"correct", b.correct}, {"accuracy", b.accuracy}});
    }
    const Eigen::VectorXd& center = lc.curve.center;
    curves.push_back({{"classifier_id", lc.classifier_id},
                      {"scope", lc.scope.name()},
                      {"population_accuracy", lc.population_accuracy},
                      {"cutoff", lc.curve.cutoff},
                      {"center", std::vector<double>(center.data(), center.data() + center.size())},
                      {"bins", bins}});
  }
  ojson doc = rec.header();
  doc["generator_id"] = gen->id();
  doc["count"] = c.accuracy_curve.count;
  doc["k"] = family.dims.size();
  doc["dims"] = family.dims;
  doc["scale"] = std::vector<double>(family.scale.data(), family.scale.data() + family.scale.size());
  doc["curves"] = curves;
  rec.write(rec.out("curve.csv"), csv);
  rec.write_json(rec.out("curve.json"), doc);
  log << family.curves.size() << " curves over " << family.dims.size() << " dims\n";
  rec.finish();
}

template <typename S>
Eigen::MatrixXd mapped_latents(const LearnedGenerator<S>& gen, const ProbePopulation& pop) {
  Eigen::MatrixXd w(static_cast<Index>(pop.size()), kMappedDim);
  const Index n = static_cast<Index>(pop.size());
  for (Index b = 0; b < n; b += 256) {
    const Index e = std::min(n, b + 256);
    Buffer<S> z((e - b) * kLatentDim);
    for (Index i = b; i < e; ++i) {
      for (Index j = 0; j < kLatentDim; ++j) z[(i - b) * kLatentDim + j] = static_cast<S>(pop.latents(i, j));
    }
    const std::vector<int> cls(pop.labels.begin() + b, pop.labels.begin() + e);
    const Tensor<S> out = mapping_forward(gen.params, Tensor<S>({e - b, kLatentDim}, std::move(z)), cls);
    for (Index i = b; i < e; ++i) {
      for (Index j = 0; j < kMappedDim; ++j) w(i, j) = static_cast<double>(out.values()[(i - b) * kMappedDim + j]);
    }
  }
  return w;
}

inline constexpr std::size_t kMaxProjectedPoints = 5000;

template <typename S>
void project_cmd(const RunConfig& c, std::ostream& log) {
  RunRecord rec("project", c);
  const auto& p = c.project;
  if (p.spaces.empty()) throw Error(ErrorKind::kConfig, "no latent space requested");
  if (p.count > kMaxProjectedPoints) {
    throw Error(ErrorKind::kTooManyPoints, std::to_string(p.count) + " points exceed the exact t-SNE limit of " +
                                               std::to_string(kMaxProjectedPoints));
  }
  const Models<S> m = load_models<S>(c, rec);
  const auto* learned = dynamic_cast<const LearnedGenerator<S>*>(m.gen.get());
  for (const auto& space : p.spaces) {
    if (space == "W" && !learned) throw Error(ErrorKind::kConfig, "the W space exists only for the learned generator");
  }
  rec.seed("population", c.seed);
  rec.seed("tsne", c.seed);
  const ProbePopulation pop = build_population(*m.gen, m.clf, p.count, Scope::global(), c.seed);

  ojson spaces = ojson::array();
  for (const auto& space : p.spaces) {
    const Eigen::MatrixXd x = space == "Z" ? pop.latents : space == "S" ? pop.styles : mapped_latents(*learned, pop);
    const Eigen::MatrixXd pts = tsne_project(x, {p.perplexity, p.iterations, c.seed});
    std::string csv = csv_row({"x", "y", "class", "well_classified"});
    for (std::size_t i = 0; i < pop.size(); ++i) {
      const auto r = static_cast<Index>(i);
      csv += csv_row({format_number(pts(r, 0)), format_number(pts(r, 1)), std::to_string(pop.labels[i]),
                      pop.well_classified(i) ? "1" : "0"});
    }
    const std::string file = "points_" + space + ".csv";
    rec.write(rec.out(file), csv);
    const double silhouette = silhouette_score(pts, pop.labels);
    spaces.push_back({{"space", space}, {"file", file}, {"dim", x.cols()}, {"silhouette", silhouette}});
    log << space << " space (" << x.cols() << " dims): silhouette " << silhouette << "\n";
  }
  ojson doc = rec.header();
  doc["generator_id"] = m.gen->id();
  doc["classifier_id"] = classifier_id(m.clf);
  doc["count"] = pop.size();
  doc["accuracy"] = pop.accuracy();
  doc["perplexity"] = p.perplexity;
  doc["iterations"] = p.iterations;
  doc["spaces"] = spaces;
  rec.write_json(rec.out("project.json"), doc);
  rec.finish();
}

template <typename S>
void gradcheck_cmd(const RunConfig& c, std::ostream& log) {
  RunRecord rec("gradcheck", c);
  const auto& g = c.gradcheck;
  if (g.seeds < 1 || !(g.step > 0)) throw Error(ErrorKind::kConfig, "gradcheck needs seeds >= 1 and a positive step");
  const Models<S> m = load_models<S>(c, rec);
  ojson runs = ojson::array();
  double worst = 0;
  for (int i = 0; i < g.seeds; ++i) {
    const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(i);
    const int label = i % kNumClasses;
    const GradCheckReport r = style_gradcheck(*m.gen, m.clf, seed, label, g.step);
    worst = std::max(worst, r.max_relative_error);
    runs.push_back({{"seed", seed},
                    {"label", label},
                    {"max_relative_error", r.max_relative_error},
                    {"worst_coordinate", r.worst_coordinate},
                    {"analytic", r.analytic},
                    {"numeric", r.numeric}});
  }
  rec.seed("first-latent", c.seed);
  const bool passed = worst < g.threshold;
  ojson doc = rec.header();
  doc["generator_id"] = m.gen->id();
  doc["classifier_id"] = classifier_id(m.clf);
  doc["precision"] = c.precision;
  doc["step"] = g.step;
  doc["threshold"] = g.threshold;
  doc["max_relative_error"] = worst;
  doc["passed"] = passed;
  doc["runs"] = runs;
  rec.write_json(rec.out("gradcheck.json"), doc);
  rec.finish();
  log << "max relative error " << worst << " over " << g.seeds << " seeds\n";
  if (!passed) {
    throw Error(ErrorKind::kGradientCheckFailed,
                "max relative error " + format_number(worst) + " >= " + format_number(g.threshold));
  }
}

template <template <typename> class Body>
void dispatch(const RunConfig& c, std::ostream& log) {
  if (c.precision == "double") {
    Body<double>::run(c, log);
  } else {
    Body<float>::run(c, log);
  }
}

template <typename S>
struct Rank {
  static void run(const RunConfig& c, std::ostream& l) { rank<S>(c, l); }
};
template <typename S>
struct Traverse {
  static void run(const RunConfig& c, std::ostream& l) { traverse_cmd<S>(c, l); }
};
template <typename S>
struct Corners {
  static void run(const RunConfig& c, std::ostream& l) { corner_cases_cmd<S>(c, l); }
};
template <typename S>
struct Curve {
  static void run(const RunConfig& c, std::ostream& l) { accuracy_curve_cmd<S>(c, l); }
};
template <typename S>
struct Project {
  static void run(const RunConfig& c, std::ostream& l) { project_cmd<S>(c, l); }
};
template <typename S>
struct Gradcheck {
  static void run(const RunConfig& c, std::ostream& l) { gradcheck_cmd<S>(c, l); }
};

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"make-dataset", "train",          "rank",    "traverse",
                                              "corner-cases", "accuracy-curve", "project", "gradcheck"};
  return names;
}

void run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  config.validate();
  if (name == "make-dataset") {
    make_dataset(config, log);
  } else if (name == "train") {
    train(config, log);
  } else if (name == "rank") {
    dispatch<Rank>(config, log);
  } else if (name == "traverse") {
    dispatch<Traverse>(config, log);
  } else if (name == "corner-cases") {
    dispatch<Corners>(config, log);
  } else if (name == "accuracy-curve") {
    dispatch<Curve>(config, log);
  } else if (name == "project") {
    dispatch<Project>(config, log);
  } else if (name == "gradcheck") {
    dispatch<Gradcheck>(config, log);
  } else {
    throw Error(ErrorKind::kConfig, "unknown command '" + name + "'");
  }
}

int run_command_guarded(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    run_command(name, config, log);
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON input: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

template <typename S>
std::unique_ptr<Generator<S>> make_generator(const RunConfig& config) {
  if (config.generator == "analytic") return std::make_unique<AnalyticGenerator<S>>(config.analytic_seed);
  return std::make_unique<LearnedGenerator<S>>(load_generator<S>(config.generator_stem()));
}

template <typename S>
GradCheckReport style_gradcheck(const Generator<S>& gen, const Classifier<S>& clf, std::uint64_t seed, int label,
                                double step) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Buffer<S> z(gen.latent_dim());
  for (Index j = 0; j < z.size(); ++j) z[j] = static_cast<S>(normal(rng));
  const Tensor<S> s = gen.styles(Tensor<S>({1, gen.latent_dim()}, std::move(z)), {label});
  const ScalarFunction<S> f = [&](const Tensor<S>& x) {
    return select(classifier_forward(clf.params, gen.render(x, {label})).probs, {label});
  };
  return finite_diff_check(f, s, step);
}

template <typename S>
CurveFamily matched_curves(const Generator<S>& gen, const std::vector<Classifier<S>>& classifiers,
                           const CurveSection& options, std::uint64_t seed) {
  if (classifiers.empty()) throw Error(ErrorKind::kConfig, "accuracy curves need at least one classifier");
  if (options.k == 0) throw Error(ErrorKind::kConfig, "accuracy curves need k >= 1");
  std::vector<ProbePopulation> pops;
  for (const auto& clf : classifiers) pops.push_back(build_population(gen, clf, options.count, Scope::global(), seed));

  CurveFamily family;
  const auto scores = score_dimensions(pops[0], gen, classifiers[0]);
  family.dims = top_dims(scores, std::min<std::size_t>(options.k, scores.size()));
  family.scale = style_scale(pops[0]);

  std::vector<Scope> scopes{Scope::global()};
  if (options.per_class) {
    for (int k = 0; k < kNumClasses; ++k) scopes.push_back(Scope::of_class(k));
  }
  std::map<std::string, std::pair<Eigen::VectorXd, std::vector<double>>> reference;  // scope -> center, edges
  for (std::size_t j = 0; j < classifiers.size(); ++j) {
    for (const Scope& scope : scopes) {
      ProbePopulation sub = pops[j];
      if (scope.cls) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < pops[j].size(); ++i) {
          if (scope.contains(pops[j].labels[i])) rows.push_back(i);
        }
        sub = subset(pops[j], rows);
      }
      CurveOptions co;
      co.min_count = options.min_count;
      co.cutoff_quantile = options.cutoff_quantile;
      co.initial_bins = options.initial_bins;
      co.scale = family.scale;
      LabelledCurve lc;
      lc.classifier_id = classifier_id(classifiers[j]);
      lc.scope = scope;
      lc.population_accuracy = sub.accuracy();
      if (j == 0) {
        const Eigen::VectorXd center = well_classified_center(pops[0], scope);
        lc.curve = accuracy_vs_distance(sub, center, family.dims, co);
        std::vector<double> edges{lc.curve.bins.front().lo};
        for (const CurveBin& b : lc.curve.bins) edges.push_back(b.hi);
        reference[scope.name()] = {center, edges};
      } else {
        const auto& [center, edges] = reference.at(scope.name());
        co.edges = edges;
        lc.curve = accuracy_vs_distance(sub, center, family.dims, co);
      }
      family.curves.push_back(std::move(lc));
    }
  }
  return family;
}

#define LSP_INSTANTIATE_CLI(S)                                                                                     \
  template std::unique_ptr<Generator<S>> make_generator(const RunConfig&);                                         \
  template GradCheckReport style_gradcheck(const Generator<S>&, const Classifier<S>&, std::uint64_t, int, double); \
  template CurveFamily matched_curves(const Generator<S>&, const std::vector<Classifier<S>>&, const CurveSection&, \
                                      std::uint64_t);

LSP_INSTANTIATE_CLI(float)
LSP_INSTANTIATE_CLI(double)

}  // namespace lsp::cli
