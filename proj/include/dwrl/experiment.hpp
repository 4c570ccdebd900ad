#pragma once

// Experiment orchestration behind the command-line tool: four-room data
// generation, JSON experiment configs, run fan-out with a manifest, and the
// report / distribution-figure outputs.

#include "dwrl/dataset.hpp"
#include "dwrl/eval.hpp"
#include "dwrl/mdp.hpp"
#include "dwrl/offline_rl.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace dwrl {

struct EnvSpec {
  int width = 11;
  int height = 11;
  double slip = 0.0;
  double gamma = 0.99;
  int horizon = 200;
};

GridWorld make_four_room(const EnvSpec &env);

/// `fourroom-WxH-slip<p>`; datasets and configs are matched on it.
std::string env_name(const EnvSpec &env);

enum class Behavior {
  /// Uniform random walk; trajectories that reach the goal along a shortest
  /// path are rejected and redrawn.
  kRandom,
  /// (1 - epsilon) optimal + epsilon uniform.
  kExpert,
  /// (1 - epsilon) shortest-path policy towards the bottom-right corner +
  /// epsilon uniform: consistent, low-return behavior.
  kDetour,
};

Behavior parse_behavior(const std::string &name);
std::string to_string(Behavior behavior);

struct GenConfig {
  EnvSpec env;
  Behavior behavior = Behavior::kRandom;
  double epsilon = 0.2;
  int n_trajectories = 1000;
  std::uint64_t seed = 0;
};

/// Behavior dataset on the four-room grid with anchors score_low = value of
/// the uniform policy and score_high = optimal value. kRandom aborts with
/// ConfigError after 10 n attempts or when no kept trajectory reaches the
/// goal.
TransitionDataset generate_four_room(const GenConfig &cfg);

struct MixSpec {
  GenConfig low;
  GenConfig high;
  double sigma = 0.05;
  MixMode mode = MixMode::kFull;
  std::optional<std::size_t> budget;
  std::uint64_t seed = 0;
};

struct DatasetSpec {
  std::string id;
  /// Reporting group; runs are aggregated per group.
  std::string group = "all";
  /// Exactly one of path / mix.
  std::optional<std::string> path;
  std::optional<MixSpec> mix;
};

struct MethodSpec {
  std::string id;
  AlgoConfig algo;
  WeightingConfig weighting;
};

struct ExperimentConfig {
  EnvSpec env;
  std::vector<DatasetSpec> datasets;
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs";

  void validate() const;
};

/// Parses the JSON config; unknown keys are errors. Relative dataset paths
/// resolve against `base_dir`.
ExperimentConfig parse_experiment(const nlohmann::json &j, const std::string &base_dir = ".");
ExperimentConfig load_experiment(const std::string &path);

/// Fully expanded config, every default written out. Hashing this makes the
/// hash independent of how the input file was formatted.
nlohmann::json to_json(const ExperimentConfig &cfg);

/// FNV-1a 64-bit of the canonical dump, as 16 hex digits.
std::string config_hash(const nlohmann::json &canonical);

TransitionDataset materialize(const DatasetSpec &spec, const EnvSpec &env);

struct RunRecord {
  std::string dataset;
  std::string group;
  std::string method;
  std::string weighting;
  std::uint64_t seed = 0;
  std::string file;
  bool ok = false;
  std::string error;
  double final_score = 0.0;
  double score_low = 0.0;
  double score_high = 1.0;
};

struct ExperimentOutcome {
  std::vector<RunRecord> runs;
  bool all_ok() const;
};

/// Trains every (dataset x method x seed) cell on up to `jobs` threads and
/// writes under cfg.output_dir:
///   datasets/<id>.txt, runs/<dataset>__<method>__s<seed>.csv (+ .policy.csv,
///   .weights.csv), manifest.json.
/// A failing run is recorded in the manifest and leaves no partial files.
ExperimentOutcome run_experiment(const ExperimentConfig &cfg, int jobs = 0);

/// Manifest rows of a run directory; ConfigError when there is none.
std::vector<RunRecord> read_manifest(const std::string &run_dir);

/// Reads the successful runs of `run_dir` and writes report.csv (all cells),
/// report_<group>.csv per group and plot.csv (long format, every group).
/// Returns the pooled report.
AggregateReport write_reports(const std::string &run_dir, const std::string &out_dir, int n_resamples = 2000,
                              std::uint64_t seed = 0);

/// Per-pair ratio D_w(s,a) / D(s,a) realized by a trained run: the sampler
/// mass times the loss multiplier, normalized to a distribution and divided
/// by the empirical frequency. Pairs absent from the data get 0.
std::vector<double> effective_weights(const TransitionDataset &ds, const SamplerWeights &sampler,
                                      std::span<const double> multiplier_table);

struct DistributionColumn {
  std::string name;
  std::vector<double> d;
  double J = 0.0;
  double tv_to_optimal = 0.0;
};

/// Behavior, oracle optimal (gamma = 1 restart chain of pi*) and one column
/// per weighted method of the first dataset / first seed in `run_dir`.
/// ConfigError naming the missing weightings when dw, aw or pf is absent.
std::vector<DistributionColumn> four_room_distributions(const std::string &run_dir);

/// `method,s,a,prob` rows and a `method,J,tv_to_optimal` summary.
void write_distributions_csv(std::ostream &os, const std::vector<DistributionColumn> &columns, int num_actions);
void write_distribution_summary_csv(std::ostream &os, const std::vector<DistributionColumn> &columns);

double total_variation(std::span<const double> p, std::span<const double> q);

} // namespace dwrl
