#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lsp/analysis.hpp"
#include "lsp/data.hpp"

namespace lsp::cli {

struct DatasetSection {
  std::string source = "procedural";  // procedural | idx
  std::size_t count = 12000;
  std::size_t test_count = 2000;
  std::string idx_images;
  std::string idx_labels;
  std::string idx_test_images;
  std::string idx_test_labels;
  std::vector<double> noise_sigma{0.08, 0.12, 0.18};
  std::vector<double> blur_sigma{0.5, 1.0, 1.5};
  std::vector<int> blur_radius{1, 2, 3};
};

struct TrainSection {
  std::string target = "classifier";  // classifier | generator
  std::string data = "corrupted";     // corrupted | clean
  std::string regime = "reconstruction";
  int epochs = -1;  // -1: 3 for a classifier, 6 for a generator
  double lr = -1;   // -1: the trainer's default
  int batch = 32;
  double kl_weight = 0.1;
};

struct RankSection {
  std::string scope = "global";  // global | class<k>
  std::size_t count = 10000;
  std::size_t top = 10;
};

struct TraverseSection {
  std::string start = "class-mean";  // class-mean | sample
  int start_class = 0;
  std::size_t sample = 0;  // index into the class population when start = sample
  std::size_t count = 2000;
  std::vector<Index> dims;  // empty: the top dims of the class ranking
  std::size_t top = 10;
  std::vector<double> fractions = default_fractions();
  double bound_factor = 20;
  double tolerance = 0.01;
};

struct CornerSection {
  std::vector<int> classes{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  int top_m = 10;
  std::size_t count = 1000;  // per class
  double bound_factor = 20;
  double tolerance = 0.01;
};

struct CurveSection {
  std::vector<std::string> classifiers;  // empty: the run's classifier
  bool per_class = false;
  std::size_t k = 100;
  std::size_t count = 20000;
  std::size_t min_count = 200;
  double cutoff_quantile = 0.95;
  int initial_bins = 20;
};

struct ProjectSection {
  std::vector<std::string> spaces{"S"};  // Z | W | S
  std::size_t count = 1000;
  double perplexity = 30;
  int iterations = 1000;
};

struct GradcheckSection {
  int seeds = 20;
  double step = 1e-5;
  double threshold = 1e-3;
};

/// Everything a run depends on. Empty checkpoint paths resolve under `out`.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string precision = "single";  // single | double
  std::string out = "out";
  std::string generator = "learned";  // learned | analytic
  std::uint64_t analytic_seed = 0;
  bool png = false;
  std::string dataset;               // <out>/dataset
  std::string classifier;            // <out>/classifier-corrupted
  std::string generator_checkpoint;  // <out>/generator
  std::string rankings;              // optional rankings.json reused by traverse

  DatasetSection make_dataset;
  TrainSection train;
  RankSection rank;
  TraverseSection traverse;
  CornerSection corner_cases;
  CurveSection accuracy_curve;
  ProjectSection project;
  GradcheckSection gradcheck;

  std::filesystem::path out_dir() const { return out; }
  std::filesystem::path dataset_stem() const;
  std::filesystem::path test_dataset_stem() const;
  std::filesystem::path classifier_stem() const;
  std::filesystem::path generator_stem() const;
  SeverityConfig severity() const;
  /// Throws ConfigError on unknown enumerators.
  void validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DatasetSection, source, count, test_count, idx_images, idx_labels,
                                                idx_test_images, idx_test_labels, noise_sigma, blur_sigma, blur_radius)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainSection, target, data, regime, epochs, lr, batch, kl_weight)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RankSection, scope, count, top)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TraverseSection, start, start_class, sample, count, dims, top,
                                                fractions, bound_factor, tolerance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CornerSection, classes, top_m, count, bound_factor, tolerance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(CurveSection, classifiers, per_class, k, count, min_count,
                                                cutoff_quantile, initial_bins)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProjectSection, spaces, count, perplexity, iterations)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(GradcheckSection, seeds, step, threshold)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, precision, out, generator, analytic_seed, png, dataset,
                                                classifier, generator_checkpoint, rankings, make_dataset, train, rank,
                                                traverse, corner_cases, accuracy_curve, project, gradcheck)

/// Parses a config document; keys this version does not know are a ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Keys sorted, so equal configs serialise identically.
nlohmann::ordered_json config_json(const RunConfig& config);

/// "global" or "class<k>".
Scope parse_scope(const std::string& name);

}  // namespace lsp::cli
