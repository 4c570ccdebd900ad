#pragma once

#include "dwrl/common.hpp"
#include "dwrl/dataset.hpp"
#include "dwrl/sampling.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dwrl {

/// How the flow penalty measures weights.
enum class FlowScale {
  /// Raw exp outputs.
  kRaw,
  /// Divided by the squared batch mean of w. L_R and L_K do not change when
  /// every weight is multiplied by one constant, while the raw penalty
  /// shrinks with the square of that constant, so under kRaw the optimizer
  /// can drive the penalty to zero by scaling all weights down.
  kBatchMean,
};

/// How the flow penalty is estimated from a batch.
enum class FlowForm {
  /// (1/B) sum_i (w_state(s'_i) - w(s_i,a_i))^2 over non-timeout samples.
  kPerSample,
  /// Per-state balance of out-flow and in-flow inside the batch:
  ///   R(s) = sum_{i: s_i = s} w_state(s)
  ///        - sum_{i: s'_i = s} w(s_i,a_i) - rho0(s) sum_{i terminal} w(s_i,a_i)
  /// and the penalty is (1/B) sum_s R(s)^2 / n(s), n(s) counting the samples
  /// on either side of R(s). Timeouts keep their out-flow and drop their
  /// successor. Requires TerminalTarget::kRestart.
  kBalance,
};

/// Successor weight used for transitions that reach a terminal state.
enum class TerminalTarget {
  /// exp of the rho0-weighted mean of phi over initial states (episode restart).
  kRestart,
  /// exp(phi) of the terminal state itself.
  kAbsorbing,
};

/// Tabular density-ratio model w(s,a) = exp(phi[s] + psi[s,a] - c[s]).
///
/// When `log_behavior` is set, c[s] = log sum_a exp(log_behavior[s,a] + psi[s,a])
/// so that sum_a pi_D(a|s) exp(psi[s,a] - c[s]) = 1 and exp(phi[s]) is the
/// state marginal of w. Without it c = 0 and psi is used as is.
struct WeightModel {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> phi;
  std::vector<double> psi;
  std::vector<double> log_behavior;
  /// rho0 over states for TerminalTarget::kRestart.
  std::vector<double> restart_dist;

  static WeightModel zeros(int num_states, int num_actions);

  bool conditional() const { return !log_behavior.empty(); }
  /// c[s]; zero without a behavior reference.
  double log_normalizer(int s) const;
  double log_weight(int s, int a) const { return phi[s] + psi[static_cast<std::size_t>(s) * num_actions + a] - log_normalizer(s); }
  double log_restart_weight() const;
  /// Unclamped log w(s,a) for every pair, stored [s][a].
  std::vector<double> log_weight_table() const;
};

struct DWConfig {
  double lambda_F = 0.1;
  double lambda_K = 0.2;
  double step_size = 1e-4;
  int batch_size = 256;
  int steps = 1000;
  std::uint64_t seed = 0;
  FlowScale flow_scale = FlowScale::kRaw;
  FlowForm flow_form = FlowForm::kPerSample;
  TerminalTarget terminal_target = TerminalTarget::kRestart;
  bool conditional = true;
  /// Every step uses the whole dataset as one batch, each record counted
  /// N p_i times under the sampler; batch_size is then ignored.
  bool full_batch = false;
  /// Log-weights are clamped to [-clamp, clamp] before exponentiation.
  double clamp = 30.0;
  /// Loss trace stride for train_dw.
  int trace_every = 100;

  void validate() const;
};

struct BatchLosses {
  double L_R = 0.0;
  double L_F = 0.0;
  double L_K = 0.0;
  double L_total = 0.0;
  /// Log-weights that hit the clamp in this evaluation.
  int saturated = 0;
};

struct BatchWeights {
  std::vector<double> w;
  std::vector<double> w_state_next;
  std::vector<double> w_bar;
  int saturated = 0;
};

/// Raw weights, successor state weights and batch-normalized weights.
/// Terminal successors follow `target`; timeouts still report exp(phi[s']).
BatchWeights weights(const WeightModel &model, std::span<const TransitionRecord> batch,
                     TerminalTarget target = TerminalTarget::kRestart, double clamp = 30.0);

/// L_R = -sum w_bar r, L_F = mean over non-timeout samples' squared
/// successor/pair weight gap, L_K = sum w_bar log w_bar.
///
/// `multiplicity`, when non-empty, counts sample i that many times (it need
/// not be an integer); the batch size becomes the sum of multiplicities.
BatchLosses dw_losses(const WeightModel &model, std::span<const TransitionRecord> batch, const DWConfig &cfg,
                      std::span<const double> multiplicity = {});

struct DWGradients {
  std::vector<double> dphi;
  std::vector<double> dpsi;
};

/// Exact gradient of L_total, including the coupling through the batch
/// normalizer and the conditional normalizer c[s].
DWGradients dw_gradients(const WeightModel &model, std::span<const TransitionRecord> batch, const DWConfig &cfg,
                         BatchLosses *losses = nullptr, std::span<const double> multiplicity = {});

/// Adam over a flat parameter vector.
class Adam {
public:
  Adam(std::size_t size, double step_size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  long long iterations() const { return t_; }

private:
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

/// Incremental DW training: one minibatch update per step(). Minibatches
/// come from `sampler`; the conditional reference pi_D is the sampler's
/// per-state action distribution.
class DWTrainer {
public:
  DWTrainer(const TransitionDataset &ds, DWConfig cfg, std::optional<SamplerWeights> sampler = std::nullopt);

  BatchLosses step();
  const WeightModel &model() const { return model_; }
  const DWConfig &config() const { return cfg_; }
  long long saturated() const { return saturated_; }

private:
  const TransitionDataset *ds_;
  DWConfig cfg_;
  SamplerWeights sampler_;
  WeightModel model_;
  Adam adam_;
  Rng rng_;
  std::vector<TransitionRecord> batch_;
  std::vector<double> flat_;
  std::vector<double> grad_;
  std::vector<double> multiplicity_;
  long long saturated_ = 0;
};

struct DWResult {
  WeightModel model;
  std::vector<std::pair<int, BatchLosses>> trace;
  long long saturated = 0;
};

/// Runs cfg.steps DWTrainer updates; NumericalError on a non-finite loss.
DWResult train_dw(const TransitionDataset &ds, const DWConfig &cfg, std::optional<SamplerWeights> sampler = std::nullopt);

/// The model with its conditional reference and restart distribution fitted
/// to `ds` (optionally under sampling probabilities).
WeightModel initial_model(const TransitionDataset &ds, const DWConfig &cfg, const SamplerWeights *sampler = nullptr);

/// Per-record weights w(s_i, a_i) over the whole dataset.
std::vector<double> record_weights(const WeightModel &model, const TransitionDataset &ds, double clamp = 30.0);

/// Per-(s,a) weight table [s][a].
std::vector<double> weight_table(const WeightModel &model, double clamp = 30.0);

/// E_D[w r] with w rescaled to unit mean over `record_w`.
double reweighted_step_reward(const TransitionDataset &ds, std::span<const double> record_w);

/// Empirical KL of the reweighted dataset: sum w_bar log(w_bar N).
double reweighted_kl(std::span<const double> record_w);

/// `s,a,w` CSV of a weight table.
void write_weight_csv(std::ostream &os, std::span<const double> table, int num_states, int num_actions);

struct OptDiceConfig {
  double alpha = 1.0;
  double step_size = 1e-2;
  int steps = 2000;
};

/// OptDiCE-style weights with f(x) = x log x: full-batch Adam on
/// alpha E[exp(e_nu/alpha - 1)] + (1-gamma) E_{s0}[nu(s0)] over a state table
/// nu, e_nu = r + gamma nu(s') (1 - terminal) - nu(s), s0 drawn from the
/// trajectory heads; then returns the
/// per-(s,a) average of max(0, exp(e_nu/alpha - 1)) over dataset occurrences.
struct OptDiceResult {
  std::vector<double> nu;
  std::vector<double> weights;
};
OptDiceResult optdice_weights(const TransitionDataset &ds, const OptDiceConfig &cfg);

/// The OptDiCE objective and its gradient over the full dataset.
double optdice_objective(const TransitionDataset &ds, std::span<const double> nu, double alpha,
                         std::vector<double> *grad = nullptr);

} // namespace dwrl
