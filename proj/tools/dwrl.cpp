// Command-line front end: dataset generation, mixing, statistics, training
// sweeps, reporting and the four-room distribution figure.

#include "dwrl/dataset.hpp"
#include "dwrl/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace dwrl;
namespace fs = std::filesystem;

void add_env_flags(CLI::App *cmd, EnvSpec &env) {
  cmd->add_option("--width", env.width, "Grid width")->capture_default_str();
  cmd->add_option("--height", env.height, "Grid height")->capture_default_str();
  cmd->add_option("--slip", env.slip, "Probability of a random move")->capture_default_str();
  cmd->add_option("--gamma", env.gamma, "Discount")->capture_default_str();
  cmd->add_option("--horizon", env.horizon, "Episode cutoff")->capture_default_str();
}

void write_file(const std::string &path, const std::function<void(std::ostream &)> &body) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  body(os);
}

void print_stats(const TransitionDataset &ds, int bins, bool undiscounted) {
  const bool discounted = !undiscounted;
  std::cout << "metric,value\n"
            << "trajectories," << ds.num_trajectories() << '\n'
            << "transitions," << ds.size() << '\n'
            << "rpsv," << format_double(rpsv(ds, discounted)) << '\n'
            << "mean_return," << format_double(dataset_mean_return(ds, discounted)) << '\n'
            << "mean_step_reward," << format_double(mean_step_reward(ds)) << '\n'
            << '\n'
            << "bin_lo,bin_hi,count\n";
  const std::vector<std::size_t> hist = return_histogram(ds, bins);
  for (int b = 0; b < bins; ++b)
    std::cout << format_double(static_cast<double>(b) / bins) << ',' << format_double(static_cast<double>(b + 1) / bins)
              << ',' << hist[b] << '\n';
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Density-ratio weighting for imbalanced offline RL datasets"};
  app.require_subcommand(1);

  GenConfig gen;
  std::string gen_out;
  std::string behavior = "random";
  auto *gen_cmd = app.add_subcommand("fourroom-gen", "Generate a four-room behavior dataset");
  gen_cmd->add_option("--n", gen.n_trajectories, "Trajectories")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Seed")->capture_default_str();
  gen_cmd->add_option("--behavior", behavior, "random, expert or detour")->capture_default_str();
  gen_cmd->add_option("--epsilon", gen.epsilon, "Uniform mixing for expert/detour")->capture_default_str();
  gen_cmd->add_option("--out", gen_out, "Dataset file")->required();
  add_env_flags(gen_cmd, gen.env);

  std::string mix_low, mix_high, mix_mode = "full", mix_out;
  double mix_sigma = 0.0;
  std::size_t mix_budget = 0;
  std::uint64_t mix_seed = 0;
  auto *mix_cmd = app.add_subcommand("mix", "Mix a low- and a high-return dataset");
  mix_cmd->add_option("--low", mix_low, "Low-return dataset")->required()->check(CLI::ExistingFile);
  mix_cmd->add_option("--high", mix_high, "High-return dataset")->required()->check(CLI::ExistingFile);
  mix_cmd->add_option("--sigma", mix_sigma, "Fraction of trajectories from --high, e.g. 0.05")->required();
  mix_cmd->add_option("--mode", mix_mode, "full, diverse or small")->capture_default_str();
  auto *budget_opt = mix_cmd->add_option("--budget", mix_budget, "Transition cap for small mode");
  mix_cmd->add_option("--seed", mix_seed, "Seed")->capture_default_str();
  mix_cmd->add_option("--out", mix_out, "Dataset file")->required();

  std::string stats_data;
  int stats_bins = 10;
  bool stats_undiscounted = false;
  auto *stats_cmd = app.add_subcommand("stats", "Print RPSV, mean return and a return histogram as CSV");
  stats_cmd->add_option("data", stats_data, "Dataset file")->required()->check(CLI::ExistingFile);
  stats_cmd->add_option("--bins", stats_bins, "Histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  stats_cmd->add_flag("--undiscounted", stats_undiscounted, "Use undiscounted trajectory returns");

  std::string train_config;
  int train_jobs = 1;
  auto *train_cmd = app.add_subcommand("train", "Run every dataset x method x seed cell of a config");
  train_cmd->add_option("--config", train_config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--jobs", train_jobs, "Parallel runs")->capture_default_str()->check(CLI::PositiveNumber);

  std::string report_runs, report_out;
  int report_resamples = 2000;
  std::uint64_t report_seed = 0;
  auto *report_cmd = app.add_subcommand("report", "Aggregate a run directory into IQM reports");
  report_cmd->add_option("--runs", report_runs, "Run directory")->required();
  report_cmd->add_option("--out", report_out, "Report directory")->required();
  report_cmd->add_option("--resamples", report_resamples, "Bootstrap resamples")->capture_default_str();
  report_cmd->add_option("--seed", report_seed, "Bootstrap seed")->capture_default_str();

  std::string fig_runs, fig_out;
  auto *fig_cmd = app.add_subcommand("fourroom-figure", "Weighted state-action distributions of a four-room run");
  fig_cmd->add_option("--runs", fig_runs, "Run directory")->required();
  fig_cmd->add_option("--out", fig_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      gen.behavior = parse_behavior(behavior);
      const TransitionDataset ds = generate_four_room(gen);
      write_file(gen_out, [&](std::ostream &os) { write_dataset(os, ds); });
    } else if (*mix_cmd) {
      const MixMode mode = parse_mix_mode(mix_mode);
      std::optional<std::size_t> budget;
      if (*budget_opt) budget = mix_budget;
      if (mode == MixMode::kSmall && !budget) throw ConfigError("--mode small needs --budget");
      const TransitionDataset out =
          mix(load_dataset(mix_low), load_dataset(mix_high), mix_sigma, mode, budget, mix_seed);
      write_file(mix_out, [&](std::ostream &os) { write_dataset(os, out); });
    } else if (*stats_cmd) {
      print_stats(load_dataset(stats_data), stats_bins, stats_undiscounted);
    } else if (*train_cmd) {
      const ExperimentOutcome outcome = run_experiment(load_experiment(train_config), train_jobs);
      for (const RunRecord &r : outcome.runs)
        if (!r.ok) std::cerr << "run " << r.dataset << '/' << r.method << "/s" << r.seed << " failed: " << r.error << '\n';
      if (!outcome.all_ok()) return 2;
    } else if (*report_cmd) {
      write_reports(report_runs, report_out, report_resamples, report_seed);
    } else if (*fig_cmd) {
      const std::vector<DistributionColumn> columns = four_room_distributions(fig_runs);
      const int actions = 4;
      write_file((fs::path(fig_out) / "distributions.csv").string(),
                 [&](std::ostream &os) { write_distributions_csv(os, columns, actions); });
      write_file((fs::path(fig_out) / "summary.csv").string(),
                 [&](std::ostream &os) { write_distribution_summary_csv(os, columns); });
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
