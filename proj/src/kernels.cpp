#include "dwrl/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dwrl::kernels {

namespace {

struct LossSums {
  double total = 0.0;
  double weighted_reward = 0.0;
  double weighted_log = 0.0;
  double gap = 0.0;
  int saturated = 0;
  /// Balance form: per-state out-flow minus in-flow, sample counts, and the
  /// weight and count of restarting samples.
  std::vector<double> residual, count;
  double restart_w = 0.0;
  double restart_n = 0.0;

  void add(const LossSums &o) {
    total += o.total;
    weighted_reward += o.weighted_reward;
    weighted_log += o.weighted_log;
    gap += o.gap;
    saturated += o.saturated;
    for (std::size_t s = 0; s < residual.size(); ++s) {
      residual[s] += o.residual[s];
      count[s] += o.count[s];
    }
    restart_w += o.restart_w;
    restart_n += o.restart_n;
  }
};

double clamped(double x, double limit, int &saturated) {
  if (x > limit || x < -limit) {
    ++saturated;
    return std::clamp(x, -limit, limit);
  }
  return x;
}

LossSums loss_sums(const WeightModel &model, std::span<const double> table, std::span<const TransitionRecord> records,
                   const DWConfig &cfg, std::size_t begin, std::size_t end) {
  LossSums acc;
  const bool balance = cfg.flow_form == FlowForm::kBalance;
  if (balance) {
    acc.residual.assign(model.phi.size(), 0.0);
    acc.count.assign(model.phi.size(), 0.0);
  }
  const double restart = model.log_restart_weight();
  for (std::size_t i = begin; i < end; ++i) {
    const TransitionRecord &rec = records[i];
    const double logw = clamped(table[static_cast<std::size_t>(rec.s) * model.num_actions + rec.a], cfg.clamp, acc.saturated);
    const double w = std::exp(logw);
    acc.total += w;
    acc.weighted_reward += w * rec.r;
    acc.weighted_log += w * logw;
    if (balance) {
      acc.residual[rec.s] += std::exp(clamped(model.phi[rec.s], cfg.clamp, acc.saturated));
      acc.count[rec.s] += 1.0;
      if (rec.timeout) continue;
      if (rec.terminal) {
        acc.restart_w += w;
        acc.restart_n += 1.0;
      } else {
        acc.residual[rec.s_next] -= w;
        acc.count[rec.s_next] += 1.0;
      }
      continue;
    }
    const bool restarts = rec.terminal && cfg.terminal_target == TerminalTarget::kRestart;
    const double u = std::exp(clamped(restarts ? restart : model.phi[rec.s_next], cfg.clamp, acc.saturated));
    if (!rec.timeout) acc.gap += (u - w) * (u - w);
  }
  return acc;
}

BatchLosses finish_losses(const WeightModel &model, const LossSums &acc, std::size_t n, const DWConfig &cfg) {
  const double B = static_cast<double>(n);
  BatchLosses out;
  out.L_R = -acc.weighted_reward / acc.total;
  out.L_K = acc.weighted_log / acc.total - std::log(acc.total);
  double gap = acc.gap;
  if (cfg.flow_form == FlowForm::kBalance) {
    for (std::size_t s = 0; s < acc.residual.size(); ++s) {
      const double r = acc.residual[s] - model.restart_dist[s] * acc.restart_w;
      const double c = acc.count[s] + model.restart_dist[s] * acc.restart_n;
      if (c > 0.0) gap += r * r / c;
    }
  }
  out.L_F = gap / B;
  if (cfg.flow_scale == FlowScale::kBatchMean) {
    const double mean = acc.total / B;
    out.L_F /= mean * mean;
  }
  out.L_total = out.L_R + cfg.lambda_F * out.L_F + cfg.lambda_K * out.L_K;
  out.saturated = acc.saturated;
  return out;
}

std::size_t num_blocks(std::size_t n) { return (n + kBlock - 1) / kBlock; }

double optdice_block(std::span<const TransitionRecord> records, std::span<const double> nu, double alpha, double gamma,
                     std::size_t begin, std::size_t end, double *grad) {
  double acc = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const TransitionRecord &rec = records[i];
    const double next = rec.terminal ? 0.0 : nu[rec.s_next];
    const double e = rec.r + gamma * next - nu[rec.s];
    const double expo = std::exp(e / alpha - 1.0);
    acc += alpha * expo;
    if (grad) {
      grad[rec.s] -= expo;
      if (!rec.terminal) grad[rec.s_next] += gamma * expo;
    }
  }
  return acc;
}

double optdice_finish(double block_sum, std::size_t n, std::span<const double> rho0, std::span<const double> nu,
                      double gamma, std::vector<double> *grad) {
  const double inv_n = 1.0 / static_cast<double>(n);
  double value = block_sum * inv_n;
  for (std::size_t s = 0; s < nu.size(); ++s) value += (1.0 - gamma) * rho0[s] * nu[s];
  if (grad) {
    for (std::size_t s = 0; s < nu.size(); ++s) (*grad)[s] = (*grad)[s] * inv_n + (1.0 - gamma) * rho0[s];
  }
  return value;
}

double discounted_return(const Trajectory &traj, double gamma) {
  double g = 0.0;
  double discount = 1.0;
  for (const Step &step : traj) {
    g += discount * step.r;
    discount *= gamma;
  }
  return g;
}

double bootstrap_replicate(std::span<const double> xs, const Statistic &stat, std::uint64_t seed,
                           std::vector<double> &scratch) {
  Rng rng(seed);
  scratch.resize(xs.size());
  for (double &v : scratch) v = xs[uniform_index(rng, xs.size())];
  return stat(scratch);
}

} // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

BatchLosses dataset_losses_serial(const WeightModel &model, std::span<const TransitionRecord> records, const DWConfig &cfg) {
  if (records.size() < 2) throw ConfigError("DW losses need at least 2 records");
  cfg.validate();
  const std::vector<double> table = model.log_weight_table();
  return finish_losses(model, loss_sums(model, table, records, cfg, 0, records.size()), records.size(), cfg);
}

BatchLosses dataset_losses_parallel(const WeightModel &model, std::span<const TransitionRecord> records,
                                    const DWConfig &cfg) {
  if (records.size() < 2) throw ConfigError("DW losses need at least 2 records");
  cfg.validate();
  const std::size_t blocks = num_blocks(records.size());
  const std::vector<double> table = model.log_weight_table();
  std::vector<LossSums> partial(blocks);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kBlock;
    partial[b] = loss_sums(model, table, records, cfg, begin, std::min(begin + kBlock, records.size()));
  }
  LossSums acc = partial.front();
  for (std::size_t b = 1; b < partial.size(); ++b) acc.add(partial[b]);
  return finish_losses(model, acc, records.size(), cfg);
}

double optdice_objective_serial(std::span<const TransitionRecord> records, std::span<const double> rho0,
                                std::span<const double> nu, double alpha, double gamma, std::vector<double> *grad) {
  if (records.empty()) throw ConfigError("OptDiCE objective over an empty dataset");
  if (grad) grad->assign(nu.size(), 0.0);
  const double sum = optdice_block(records, nu, alpha, gamma, 0, records.size(), grad ? grad->data() : nullptr);
  return optdice_finish(sum, records.size(), rho0, nu, gamma, grad);
}

double optdice_objective_parallel(std::span<const TransitionRecord> records, std::span<const double> rho0,
                                  std::span<const double> nu, double alpha, double gamma, std::vector<double> *grad) {
  if (records.empty()) throw ConfigError("OptDiCE objective over an empty dataset");
  const std::size_t blocks = num_blocks(records.size());
  std::vector<double> sums(blocks, 0.0);
  std::vector<double> grads(grad ? blocks * nu.size() : 0, 0.0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
    const std::size_t begin = static_cast<std::size_t>(b) * kBlock;
    sums[b] = optdice_block(records, nu, alpha, gamma, begin, std::min(begin + kBlock, records.size()),
                            grad ? grads.data() + static_cast<std::size_t>(b) * nu.size() : nullptr);
  }
  double sum = 0.0;
  for (double v : sums) sum += v;
  if (grad) {
    grad->assign(nu.size(), 0.0);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t s = 0; s < nu.size(); ++s) (*grad)[s] += grads[b * nu.size() + s];
  }
  return optdice_finish(sum, records.size(), rho0, nu, gamma, grad);
}

std::vector<double> mc_returns_serial(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int n,
                                      int max_steps, double gamma) {
  std::vector<double> out(std::max(n, 0));
  for (int k = 0; k < n; ++k) out[k] = discounted_return(rollout(mdp, policy, derive_seed(seed, k), max_steps), gamma);
  return out;
}

std::vector<double> mc_returns_parallel(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int n,
                                        int max_steps, double gamma) {
  std::vector<double> out(std::max(n, 0));
#pragma omp parallel for schedule(dynamic, 16)
  for (int k = 0; k < n; ++k) out[k] = discounted_return(rollout(mdp, policy, derive_seed(seed, k), max_steps), gamma);
  return out;
}

std::vector<double> bootstrap_serial(std::span<const double> xs, const Statistic &stat, int n, std::uint64_t seed) {
  if (xs.empty()) throw ConfigError("bootstrap of an empty sample");
  std::vector<double> out(std::max(n, 0));
  std::vector<double> scratch;
  for (int k = 0; k < n; ++k) out[k] = bootstrap_replicate(xs, stat, derive_seed(seed, k), scratch);
  return out;
}

std::vector<double> bootstrap_parallel(std::span<const double> xs, const Statistic &stat, int n, std::uint64_t seed) {
  if (xs.empty()) throw ConfigError("bootstrap of an empty sample");
  std::vector<double> out(std::max(n, 0));
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (int k = 0; k < n; ++k) out[k] = bootstrap_replicate(xs, stat, derive_seed(seed, k), scratch);
  }
  return out;
}

} // namespace dwrl::kernels
