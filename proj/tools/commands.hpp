#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "lsp/analysis.hpp"
#include "lsp/error.hpp"
#include "lsp/gradcheck.hpp"
#include "run_config.hpp"

namespace lsp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

int exit_code(ErrorKind kind);

const std::vector<std::string>& command_names();

/// Runs one subcommand with progress on `log`; errors propagate as lsp::Error.
void run_command(const std::string& name, const RunConfig& config, std::ostream& log);

/// run_command with errors reported on `err` and mapped to an exit code.
int run_command_guarded(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err);

template <typename Scalar>
std::unique_ptr<Generator<Scalar>> make_generator(const RunConfig& config);

/// C_label(G(s)) at one style drawn from latent seed `seed`, checked against
/// central differences.
template <typename Scalar>
GradCheckReport style_gradcheck(const Generator<Scalar>& gen, const Classifier<Scalar>& clf, std::uint64_t seed,
                                int label, double step);

struct LabelledCurve {
  std::string classifier_id;
  Scope scope;
  double population_accuracy = 0;
  AccuracyCurve curve;
};

struct CurveFamily {
  std::vector<Index> dims;
  Eigen::VectorXd scale;
  std::vector<LabelledCurve> curves;  // classifier-major, global scope first
};

/// Curves of several classifiers over one population (same seed, so the same
/// styles). Dims, center, scale and bin edges come from the first classifier;
/// the others are binned on its edges so bins line up.
template <typename Scalar>
CurveFamily matched_curves(const Generator<Scalar>& gen, const std::vector<Classifier<Scalar>>& classifiers,
                           const CurveSection& options, std::uint64_t seed);

}  // namespace lsp::cli
