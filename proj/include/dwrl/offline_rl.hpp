#pragma once

#include "dwrl/common.hpp"
#include "dwrl/dataset.hpp"
#include "dwrl/eval.hpp"
#include "dwrl/mdp.hpp"
#include "dwrl/sampling.hpp"
#include "dwrl/weighting.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dwrl {

struct QTable {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> q;

  static QTable zeros(int num_states, int num_actions);
  double operator()(int s, int a) const { return q[static_cast<std::size_t>(s) * num_actions + a]; }
  double &operator()(int s, int a) { return q[static_cast<std::size_t>(s) * num_actions + a]; }
  double max(int s) const;
};

struct VTable {
  std::vector<double> v;

  static VTable zeros(int num_states) { return {std::vector<double>(num_states, 0.0)}; }
};

enum class Algo { kCQL, kIQL, kBC };

Algo parse_algo(const std::string &name);
std::string to_string(Algo algo);

struct AlgoConfig {
  Algo algo = Algo::kCQL;
  double gamma = 0.99;
  double alpha_cql = 1.0;
  double tau_expectile = 0.7;
  double beta_awr = 3.0;
  /// Adam step size for the Q and V tables.
  double step_size = 0.01;
  int batch_size = 256;
  int steps = 50000;
  int eval_every = 500;
  int eval_episodes = 20;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Which loss terms the per-sample weights multiply.
enum class WeightTarget {
  kAll,
  /// Only the conservative/constraint term: the CQL logsumexp penalty, the
  /// IQL policy extraction. BC has no other term, so it is unaffected.
  kRegularizerOnly,
};

/// One minibatch with its loss multipliers; `w_state` is used by the IQL
/// value loss.
struct WeightedBatch {
  std::vector<TransitionRecord> records;
  std::vector<double> w;
  std::vector<double> w_state;

  static WeightedBatch unit(std::vector<TransitionRecord> records);
};

/// Adam state for a tabular learner.
struct TableOptimizer {
  Adam q;
  Adam v;

  TableOptimizer(int num_states, int num_actions, double step_size);
};

/// Weighted tabular CQL: one Adam step on
/// mean_i w_i [alpha (logsumexp_a q(s_i,.) - q(s_i,a_i)) + (y_i - q(s_i,a_i))^2]
/// with y_i = r_i + gamma (1 - terminal_i) max_a' q(s'_i,a') held fixed.
void cql_update(QTable &q, TableOptimizer &opt, const WeightedBatch &batch, const AlgoConfig &cfg,
                WeightTarget target = WeightTarget::kAll);

/// Per-(s,a) policy scores; pi(a|s) is proportional to them.
struct PolicyAccumulator {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> score;
  /// Advantage exponents clipped at +10.
  long long clipped = 0;

  static PolicyAccumulator zeros(int num_states, int num_actions);
  /// Normalized rows; all-zero rows become uniform.
  TabularPolicy policy() const;
};

/// Weighted tabular IQL step: expectile V toward q (weights w_state), TD
/// regression of q toward r + gamma v(s'), and the advantage-weighted
/// accumulator score[s,a] += w exp(min(beta (q - v), 10)).
void iql_update(QTable &q, VTable &v, PolicyAccumulator &acc, TableOptimizer &opt, const WeightedBatch &batch,
                const AlgoConfig &cfg, WeightTarget target = WeightTarget::kAll);

/// score[s,a] += w for every sample.
void bc_update(PolicyAccumulator &acc, const WeightedBatch &batch);

/// Unweighted references the weighted learners must reproduce at w = 1.
namespace reference {
void cql_update(QTable &q, TableOptimizer &opt, std::span<const TransitionRecord> batch, const AlgoConfig &cfg);
void iql_update(QTable &q, VTable &v, PolicyAccumulator &acc, TableOptimizer &opt,
                std::span<const TransitionRecord> batch, const AlgoConfig &cfg);
void bc_update(PolicyAccumulator &acc, std::span<const TransitionRecord> batch);
} // namespace reference

/// Weighted behavior cloning in closed form: pi(a|s) proportional to the sum
/// of record weights at (s,a); unvisited states uniform.
TabularPolicy weighted_bc_policy(const TransitionDataset &ds, std::span<const double> record_w);

enum class Weighting { kUniform, kAW, kPF, kDW, kDWAW, kOptDice };

Weighting parse_weighting(const std::string &name);
std::string to_string(Weighting weighting);

struct WeightingConfig {
  Weighting scheme = Weighting::kUniform;
  double aw_eta = 0.1;
  double pf_percent = 10.0;
  DWConfig dw;
  OptDiceConfig optdice;
  WeightTarget target = WeightTarget::kAll;
};

struct TrainOutput {
  QTable q;
  VTable v;
  PolicyAccumulator accumulator;
  /// Policy evaluated at the last round: greedy in q (CQL), or the
  /// accumulator scores normalized per state (IQL, BC).
  TabularPolicy policy;
  RunResult run;
  /// Final per-(s,a) loss multipliers, stored [s][a]; ones when unweighted.
  std::vector<double> multipliers;
  /// Final DW model when the scheme learns one.
  std::optional<WeightModel> dw_model;
  long long dw_saturated = 0;
};

/// Minibatch distribution of the learner: AW for aw and dw-aw, PF for pf,
/// uniform otherwise.
SamplerWeights rl_sampler(const TransitionDataset &ds, const WeightingConfig &weighting);

/// The policy the learner would deploy now.
TabularPolicy current_policy(const AlgoConfig &cfg, const QTable &q, const PolicyAccumulator &acc);

/// Mean discounted return of `policy` over `episodes` rollouts on `env`
/// (episode k seeded with derive_seed(seed, k)).
double evaluate_policy(const TabularMDP &env, const TabularPolicy &policy, int episodes, std::uint64_t seed);

/// Offline training on `ds`, evaluated on `env` every eval_every steps.
/// DW schemes interleave one weight update with one learner update.
TrainOutput train(const TransitionDataset &ds, const TabularMDP &env, const AlgoConfig &cfg,
                  const WeightingConfig &weighting);

/// `s,a,prob` CSV.
void write_policy_csv(std::ostream &os, const TabularPolicy &policy);

} // namespace dwrl
