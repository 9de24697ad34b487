#include "run_config.hpp"

#include "lsp/checkpoint.hpp"
#include "lsp/error.hpp"

namespace lsp::cli {

namespace {

void reject_unknown_keys(const nlohmann::json& given, const nlohmann::ordered_json& known, const std::string& where) {
  if (!given.is_object()) throw Error(ErrorKind::kConfig, "expected an object at " + where);
  for (const auto& [key, value] : given.items()) {
    if (!known.contains(key)) throw Error(ErrorKind::kConfig, "unknown config key " + where + key);
    if (known.at(key).is_object()) reject_unknown_keys(value, known.at(key), where + key + ".");
  }
}

template <typename T>
bool one_of(const T& value, std::initializer_list<T> allowed) {
  return std::find(allowed.begin(), allowed.end(), value) != allowed.end();
}

}  // namespace

std::filesystem::path RunConfig::dataset_stem() const {
  return dataset.empty() ? out_dir() / "dataset" : std::filesystem::path(dataset);
}

std::filesystem::path RunConfig::test_dataset_stem() const {
  return std::filesystem::path(dataset_stem()).concat("-test");
}

std::filesystem::path RunConfig::classifier_stem() const {
  return classifier.empty() ? out_dir() / "classifier-corrupted" : std::filesystem::path(classifier);
}

std::filesystem::path RunConfig::generator_stem() const {
  return generator_checkpoint.empty() ? out_dir() / "generator" : std::filesystem::path(generator_checkpoint);
}

SeverityConfig RunConfig::severity() const {
  const auto& d = make_dataset;
  if (d.noise_sigma.size() != 3 || d.blur_sigma.size() != 3 || d.blur_radius.size() != 3) {
    throw Error(ErrorKind::kConfig, "severity overrides need exactly three levels");
  }
  SeverityConfig s;
  for (int i = 0; i < 3; ++i) {
    s.noise_sigma[i] = d.noise_sigma[i];
    s.blur_sigma[i] = d.blur_sigma[i];
    s.blur_radius[i] = d.blur_radius[i];
  }
  s.validate();
  return s;
}

void RunConfig::validate() const {
  using namespace std::string_literals;
  if (!one_of(precision, {"single"s, "double"s})) throw Error(ErrorKind::kConfig, "precision must be single or double");
  if (!one_of(generator, {"learned"s, "analytic"s})) {
    throw Error(ErrorKind::kConfig, "generator must be learned or analytic");
  }
  if (!one_of(make_dataset.source, {"procedural"s, "idx"s})) {
    throw Error(ErrorKind::kConfig, "dataset source must be procedural or idx");
  }
  if (!one_of(train.target, {"classifier"s, "generator"s})) {
    throw Error(ErrorKind::kConfig, "train target must be classifier or generator");
  }
  if (!one_of(train.data, {"corrupted"s, "clean"s}))
    throw Error(ErrorKind::kConfig, "train data must be corrupted or clean");
  if (!one_of(traverse.start, {"class-mean"s, "sample"s})) {
    throw Error(ErrorKind::kConfig, "traverse start must be class-mean or sample");
  }
  for (const auto& space : project.spaces) {
    if (!one_of(space, {"Z"s, "W"s, "S"s})) throw Error(ErrorKind::kConfig, "unknown latent space '" + space + "'");
  }
  parse_scope(rank.scope);
  severity();
}

RunConfig parse_config(const std::string& text) {
  nlohmann::json given;
  try {
    given = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(given, config_json(RunConfig{}), "");
  try {
    return given.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("config value has the wrong type: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error&) {
    throw Error(ErrorKind::kConfig, "cannot read config " + path.string());
  }
  return parse_config(text);
}

nlohmann::ordered_json config_json(const RunConfig& config) {
  const nlohmann::json j = config;
  return nlohmann::ordered_json::parse(j.dump());
}

Scope parse_scope(const std::string& name) {
  if (name == "global") return Scope::global();
  if (name.rfind("class", 0) == 0 && name.size() == 6 && name[5] >= '0' && name[5] <= '9') {
    return Scope::of_class(name[5] - '0');
  }
  throw Error(ErrorKind::kConfig, "scope must be global or class0 .. class9, not '" + name + "'");
}

}  // namespace lsp::cli
