#include <functional>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "commands.hpp"

namespace {

using lsp::cli::RunConfig;
using Overrides = std::vector<std::function<void(RunConfig&)>>;

// Flags land in scratch storage and are copied onto the loaded config only when given.
template <typename Access>
CLI::Option* override_flag(CLI::App* app, Overrides& overrides, const std::string& name, Access access,
                           const std::string& help) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  RunConfig defaults;
  auto value = std::make_shared<T>(access(defaults));
  CLI::Option* opt;
  if constexpr (std::is_same_v<T, bool>) {
    opt = app->add_flag(name, *value, help);
  } else {
    opt = app->add_option(name, *value, help);
  }
  overrides.push_back([opt, value, access](RunConfig& c) {
    if (opt->count() > 0) access(c) = *value;
  });
  return opt;
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latentprobe: probe a classifier through the style space of a generator"};
  app.require_subcommand(1);
  Overrides overrides;

  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override it")->check(CLI::ExistingFile);
  override_flag(&app, overrides, "--seed", FIELD(seed), "Seed for every random draw of the run");
  override_flag(&app, overrides, "--precision", FIELD(precision), "single or double")
      ->check(CLI::IsMember({"single", "double"}));
  override_flag(&app, overrides, "--out", FIELD(out), "Output directory");
  override_flag(&app, overrides, "--generator", FIELD(generator), "learned or analytic")
      ->check(CLI::IsMember({"learned", "analytic"}));
  override_flag(&app, overrides, "--analytic-seed", FIELD(analytic_seed), "Noise field seed of the analytic generator");
  override_flag(&app, overrides, "--png", FIELD(png), "Also write PNG grids");
  override_flag(&app, overrides, "--dataset", FIELD(dataset), "Dataset cache stem");
  override_flag(&app, overrides, "--classifier", FIELD(classifier), "Classifier checkpoint stem");
  override_flag(&app, overrides, "--generator-checkpoint", FIELD(generator_checkpoint), "Generator checkpoint stem");

  auto* make = app.add_subcommand("make-dataset", "Build the half-clean, half-corrupted training and test caches");
  override_flag(make, overrides, "--source", FIELD(make_dataset.source), "procedural or idx");
  override_flag(make, overrides, "--count", FIELD(make_dataset.count), "Training images");
  override_flag(make, overrides, "--test-count", FIELD(make_dataset.test_count), "Held-out images");
  override_flag(make, overrides, "--idx-images", FIELD(make_dataset.idx_images), "IDX training images");
  override_flag(make, overrides, "--idx-labels", FIELD(make_dataset.idx_labels), "IDX training labels");
  override_flag(make, overrides, "--idx-test-images", FIELD(make_dataset.idx_test_images), "IDX test images");
  override_flag(make, overrides, "--idx-test-labels", FIELD(make_dataset.idx_test_labels), "IDX test labels");
  override_flag(make, overrides, "--noise-sigma", FIELD(make_dataset.noise_sigma), "Noise sigma per severity")
      ->expected(3);
  override_flag(make, overrides, "--blur-sigma", FIELD(make_dataset.blur_sigma), "Blur sigma per severity")
      ->expected(3);
  override_flag(make, overrides, "--blur-radius", FIELD(make_dataset.blur_radius), "Blur radius per severity")
      ->expected(3);

  auto* train = app.add_subcommand("train", "Train a classifier or a generator on the dataset cache");
  override_flag(train, overrides, "--target", FIELD(train.target), "classifier or generator")
      ->check(CLI::IsMember({"classifier", "generator"}));
  override_flag(train, overrides, "--data", FIELD(train.data), "corrupted or clean")
      ->check(CLI::IsMember({"corrupted", "clean"}));
  override_flag(train, overrides, "--regime", FIELD(train.regime), "reconstruction or adversarial");
  override_flag(train, overrides, "--epochs", FIELD(train.epochs), "Epochs");
  override_flag(train, overrides, "--lr", FIELD(train.lr), "Learning rate");
  override_flag(train, overrides, "--batch", FIELD(train.batch), "Batch size");
  override_flag(train, overrides, "--kl-weight", FIELD(train.kl_weight), "KL weight of the reconstruction regime");

  auto* rank = app.add_subcommand("rank", "Rank style dimensions by their effect on the true-class output");
  override_flag(rank, overrides, "--scope", FIELD(rank.scope), "global or class<k>");
  override_flag(rank, overrides, "--count", FIELD(rank.count), "Population size");
  override_flag(rank, overrides, "--top", FIELD(rank.top), "Rows to write");

  auto* trav = app.add_subcommand("traverse", "Shift one style dimension at a time towards the decision boundary");
  override_flag(trav, overrides, "--start", FIELD(traverse.start), "class-mean or sample")
      ->check(CLI::IsMember({"class-mean", "sample"}));
  override_flag(trav, overrides, "--class", FIELD(traverse.start_class), "Class of the start point");
  override_flag(trav, overrides, "--sample", FIELD(traverse.sample), "Sample index when starting from a sample");
  override_flag(trav, overrides, "--count", FIELD(traverse.count), "Class population size");
  override_flag(trav, overrides, "--dims", FIELD(traverse.dims), "Dimensions to traverse (default: top ranked)");
  override_flag(trav, overrides, "--top", FIELD(traverse.top), "Top ranked dimensions to traverse");
  override_flag(trav, overrides, "--fractions", FIELD(traverse.fractions), "Fractions of the threshold shift");
  override_flag(trav, overrides, "--rankings", FIELD(rankings), "rankings.json to take dimensions from");

  auto* corner = app.add_subcommand("corner-cases", "Find per-class corner cases at the decision boundary");
  override_flag(corner, overrides, "--classes", FIELD(corner_cases.classes), "Classes to probe");
  override_flag(corner, overrides, "--top-m", FIELD(corner_cases.top_m), "Dimensions tried per class");
  override_flag(corner, overrides, "--count", FIELD(corner_cases.count), "Population size per class");

  auto* curve = app.add_subcommand("accuracy-curve", "Accuracy against distance from the well-classified center");
  override_flag(curve, overrides, "--classifiers", FIELD(accuracy_curve.classifiers), "Classifier checkpoint stems");
  override_flag(curve, overrides, "--per-class", FIELD(accuracy_curve.per_class), "Add one curve per class");
  override_flag(curve, overrides, "--k", FIELD(accuracy_curve.k), "Top dimensions in the distance");
  override_flag(curve, overrides, "--count", FIELD(accuracy_curve.count), "Population size");
  override_flag(curve, overrides, "--min-count", FIELD(accuracy_curve.min_count), "Minimum samples per bin");

  auto* project = app.add_subcommand("project", "t-SNE of generated samples in a latent space");
  override_flag(project, overrides, "--space", FIELD(project.spaces), "Z, W and/or S");
  override_flag(project, overrides, "--count", FIELD(project.count), "Samples");
  override_flag(project, overrides, "--perplexity", FIELD(project.perplexity), "t-SNE perplexity");
  override_flag(project, overrides, "--iterations", FIELD(project.iterations), "t-SNE iterations");

  auto* grad = app.add_subcommand("gradcheck", "Compare style gradients with finite differences");
  override_flag(grad, overrides, "--seeds", FIELD(gradcheck.seeds), "Number of latent draws");
  override_flag(grad, overrides, "--step", FIELD(gradcheck.step), "Central-difference step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : lsp::cli::kExitConfig;
  }

  RunConfig config;
  try {
    if (!config_path.empty()) config = lsp::cli::load_config(config_path);
  } catch (const lsp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lsp::cli::exit_code(e.kind());
  }
  for (const auto& apply : overrides) apply(config);
  return lsp::cli::run_command_guarded(app.get_subcommands().front()->get_name(), config, std::cout, std::cerr);
}
