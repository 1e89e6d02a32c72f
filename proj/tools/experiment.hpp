#pragma once

#include "psvn/diagnostics.hpp"
#include "psvn/transport.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace psvn::cli {

constexpr int kManifestVersion = 1;

struct OracleOptions {
  int chains = 4;
  Index steps = 200000;
  double beta = 0.2;
  std::uint64_t seed = 11;
};

/// Everything a reproduction run needs. See docs/formats.md for the JSON schema.
struct ExperimentConfig {
  std::string problem = "linear1d";  // linear1d | lognormal1d
  std::vector<transport::Method> methods = {transport::Method::psvn};
  std::vector<Index> dims = {65};
  std::vector<Index> particles = {64};
  int trials = 1;
  std::uint64_t seed = 1;       // trial t runs with seed + t
  std::uint64_t data_seed = 0;  // synthetic truth and noise
  Index observations = 15;
  double noise_pct = 0.01;
  double eps_lambda = 0.01;
  int workers = 1;
  std::string output = "psvn_out";
  diag::NormKind norm = diag::NormKind::mass;
  /// Write moment errors after every iteration, not only the final ones.
  bool record_iterations = true;
  /// Phase wall times in the iteration CSVs; zeros when off, which makes reruns
  /// byte-identical.
  bool record_timings = true;
  transport::TransportConfig transport;
  Index eigen_samples = 1;
  OracleOptions oracle;
  /// "index,mean,variance" CSV from the oracle subcommand; lognormal1d only. When
  /// empty the reference is sampled with `oracle`.
  std::string reference;

  /// Throws ConfigInvalid.
  void validate() const;
};

/// Strict parse: unknown keys, wrong types and bad values throw ConfigInvalid.
/// A manifest written by a previous run is accepted and its resolved config used.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Command-line values that take precedence over the file.
struct Overrides {
  std::optional<std::vector<std::string>> methods;
  std::optional<std::vector<Index>> dims;
  std::optional<std::vector<Index>> particles;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<double> eps_lambda;
  std::optional<std::string> output;
};
void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

/// Subcommands. Each writes its CSVs and manifest.json into config.output and
/// prints a short summary to `log`.
void run_experiment(const ExperimentConfig& config, std::ostream& log);
void run_eigen(const ExperimentConfig& config, std::ostream& log);
void run_oracle(const ExperimentConfig& config, std::ostream& log);
/// Invariant smoke suite; returns true when every check passes.
bool run_check(std::ostream& log);

}  // namespace psvn::cli
