#pragma once

#include "dwrl/common.hpp"
#include "dwrl/mdp.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dwrl {

struct TransitionRecord {
  int traj_id = 0;
  int t = 0;
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool terminal = false;
  bool timeout = false;

  friend bool operator==(const TransitionRecord &, const TransitionRecord &) = default;
};

struct DatasetMeta {
  std::string env_name = "unknown";
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.99;
  /// Normalization anchors: score_low maps to 0, score_high to 1.
  double score_low = 0.0;
  double score_high = 1.0;
  std::string curation = "raw";

  friend bool operator==(const DatasetMeta &, const DatasetMeta &) = default;
};

/// Half-open record range [begin, end) of one trajectory.
struct TrajectorySpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct TrajectorySummary {
  int traj_id = 0;
  int length = 0;
  double discounted_return = 0.0;
  double undiscounted_return = 0.0;
  int initial_state = 0;
};

/// Immutable offline dataset: trajectories stored as contiguous, time-ordered
/// record blocks. Construction validates every invariant.
class TransitionDataset {
public:
  TransitionDataset() = default;
  TransitionDataset(DatasetMeta meta, std::vector<TransitionRecord> records);

  const DatasetMeta &meta() const { return meta_; }
  std::span<const TransitionRecord> records() const { return records_; }
  std::span<const TrajectorySpan> trajectories() const { return spans_; }
  std::size_t size() const { return records_.size(); }
  std::size_t num_trajectories() const { return spans_.size(); }
  const TransitionRecord &operator[](std::size_t i) const { return records_[i]; }
  /// Trajectory index of every record.
  std::span<const int> trajectory_of_record() const { return traj_of_record_; }

  std::span<const TransitionRecord> trajectory(std::size_t k) const {
    return std::span<const TransitionRecord>(records_).subspan(spans_[k].begin, spans_[k].size());
  }

private:
  DatasetMeta meta_;
  std::vector<TransitionRecord> records_;
  std::vector<TrajectorySpan> spans_;
  std::vector<int> traj_of_record_;
};

/// Discounted return sum_t gamma^t r_t of a record range.
double trajectory_return(std::span<const TransitionRecord> traj, double gamma);

std::vector<TrajectorySummary> summarize(const TransitionDataset &ds);

/// Rolls out `policy` n times (horizon from the MDP); trajectory k uses
/// derive_seed(seed, k).
TransitionDataset collect(const TabularMDP &mdp, const TabularPolicy &policy, int n_trajectories,
                          std::uint64_t seed, std::string env_name = "mdp");

/// Converts rollouts into a dataset, ids assigned in order.
TransitionDataset from_trajectories(DatasetMeta meta, std::span<const Trajectory> trajectories);

enum class MixMode { kFull, kDiverse, kSmall };

MixMode parse_mix_mode(const std::string &name);
std::string to_string(MixMode mode);

/// Imbalanced mixture: round((1-sigma)|low|) trajectories from `low` and
/// round(sigma |high|) from `high`, shuffled and re-indexed. Diverse mode
/// keeps one random segment of 10..50 steps per trajectory; small mode caps
/// the total transition count at `budget` using whole trajectories.
TransitionDataset mix(const TransitionDataset &low, const TransitionDataset &high, double sigma, MixMode mode,
                      std::optional<std::size_t> budget, std::uint64_t seed);

/// Return positive-sided variance: mean over trajectories of max(G - mean G, 0)^2.
double rpsv(const TransitionDataset &ds, bool discounted = true);

/// Mean trajectory return.
double dataset_mean_return(const TransitionDataset &ds, bool discounted = true);

/// Mean per-transition reward.
double mean_step_reward(const TransitionDataset &ds);

/// (score - score_low) / (score_high - score_low); ConfigError on degenerate anchors.
double normalized_return(double score, const DatasetMeta &meta);

/// Counts of normalized discounted trajectory returns over `bins` equal
/// bins of [0, 1] (values clamped). Falls back to min/max anchors from the
/// data when the meta anchors are degenerate.
std::vector<std::size_t> return_histogram(const TransitionDataset &ds, int bins);

/// Dataset occurrence counts n(s,a), stored [s][a].
std::vector<double> pair_counts(const TransitionDataset &ds);

/// Empirical behavior policy; unvisited states get the uniform row.
TabularPolicy empirical_policy(const TransitionDataset &ds);

/// Line format: one `#dwrl-dataset key=value ...` header then one
/// `traj_id t s a r s_next terminal timeout` line per record.
void write_dataset(std::ostream &os, const TransitionDataset &ds);
TransitionDataset read_dataset(std::istream &is);
void save_dataset(const std::string &path, const TransitionDataset &ds);
TransitionDataset load_dataset(const std::string &path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);

} // namespace dwrl
