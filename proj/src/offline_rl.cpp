#include "dwrl/offline_rl.hpp"
#include "dwrl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace dwrl {

QTable QTable::zeros(int num_states, int num_actions) {
  return {num_states, num_actions, std::vector<double>(static_cast<std::size_t>(num_states) * num_actions, 0.0)};
}

double QTable::max(int s) const {
  const auto row = q.begin() + static_cast<std::ptrdiff_t>(s) * num_actions;
  return *std::max_element(row, row + num_actions);
}

Algo parse_algo(const std::string &name) {
  if (name == "cql") return Algo::kCQL;
  if (name == "iql") return Algo::kIQL;
  if (name == "bc") return Algo::kBC;
  throw ConfigError("unknown algo '" + name + "' (expected cql, iql or bc)");
}

std::string to_string(Algo algo) {
  switch (algo) {
  case Algo::kCQL: return "cql";
  case Algo::kIQL: return "iql";
  case Algo::kBC: return "bc";
  }
  return "?";
}

void AlgoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (!(tau_expectile > 0.5 && tau_expectile < 1.0)) throw ConfigError("tau_expectile must lie in (0.5, 1)");
  if (!(alpha_cql >= 0.0)) throw ConfigError("alpha_cql must be >= 0");
  if (!(beta_awr >= 0.0)) throw ConfigError("beta_awr must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (steps < 0) throw ConfigError("steps must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
}

WeightedBatch WeightedBatch::unit(std::vector<TransitionRecord> records) {
  WeightedBatch b;
  b.w.assign(records.size(), 1.0);
  b.w_state.assign(records.size(), 1.0);
  b.records = std::move(records);
  return b;
}

TableOptimizer::TableOptimizer(int num_states, int num_actions, double step_size)
    : q(static_cast<std::size_t>(num_states) * num_actions, step_size), v(static_cast<std::size_t>(num_states), step_size) {}

namespace {

void check_finite(std::span<const double> table, const char *what) {
  for (double x : table)
    if (!std::isfinite(x)) throw NumericalError(std::string("non-finite entry in ") + what);
}

double logsumexp_row(const QTable &q, int s, std::vector<double> &softmax) {
  const int A = q.num_actions;
  double top = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < A; ++a) top = std::max(top, q(s, a));
  double total = 0.0;
  softmax.resize(A);
  for (int a = 0; a < A; ++a) {
    softmax[a] = std::exp(q(s, a) - top);
    total += softmax[a];
  }
  for (double &p : softmax) p /= total;
  return top + std::log(total);
}

double expectile_weight(double u, double tau) { return u < 0.0 ? 1.0 - tau : tau; }

} // namespace

void cql_update(QTable &q, TableOptimizer &opt, const WeightedBatch &batch, const AlgoConfig &cfg, WeightTarget target) {
  const std::size_t n = batch.records.size();
  const double inv_b = 1.0 / static_cast<double>(n);
  std::vector<double> grad(q.q.size(), 0.0);
  std::vector<double> softmax;
  for (std::size_t i = 0; i < n; ++i) {
    const TransitionRecord &rec = batch.records[i];
    const double w_reg = batch.w[i];
    const double w_td = target == WeightTarget::kAll ? batch.w[i] : 1.0;
    const double y = rec.r + (rec.terminal ? 0.0 : cfg.gamma * q.max(rec.s_next));
    logsumexp_row(q, rec.s, softmax);
    const std::size_t row = static_cast<std::size_t>(rec.s) * q.num_actions;
    for (int b = 0; b < q.num_actions; ++b) grad[row + b] += w_reg * cfg.alpha_cql * softmax[b] * inv_b;
    grad[row + rec.a] -= w_reg * cfg.alpha_cql * inv_b;
    grad[row + rec.a] -= w_td * 2.0 * (y - q(rec.s, rec.a)) * inv_b;
  }
  opt.q.step(q.q, grad);
  check_finite(q.q, "Q table");
}

PolicyAccumulator PolicyAccumulator::zeros(int num_states, int num_actions) {
  return {num_states, num_actions, std::vector<double>(static_cast<std::size_t>(num_states) * num_actions, 0.0), 0};
}

TabularPolicy PolicyAccumulator::policy() const {
  TabularPolicy pi = TabularPolicy::uniform(num_states, num_actions);
  for (int s = 0; s < num_states; ++s) {
    const std::size_t row = static_cast<std::size_t>(s) * num_actions;
    double total = 0.0;
    for (int a = 0; a < num_actions; ++a) total += score[row + a];
    if (!(total > 0.0)) continue;
    for (int a = 0; a < num_actions; ++a) pi(s, a) = score[row + a] / total;
  }
  return pi;
}

void iql_update(QTable &q, VTable &v, PolicyAccumulator &acc, TableOptimizer &opt, const WeightedBatch &batch,
                const AlgoConfig &cfg, WeightTarget target) {
  const std::size_t n = batch.records.size();
  const double inv_b = 1.0 / static_cast<double>(n);
  const bool all = target == WeightTarget::kAll;
  std::vector<double> grad_v(v.v.size(), 0.0);
  std::vector<double> grad_q(q.q.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const TransitionRecord &rec = batch.records[i];
    const double u = q(rec.s, rec.a) - v.v[rec.s];
    const double w_v = all ? batch.w_state[i] : 1.0;
    grad_v[rec.s] -= w_v * 2.0 * expectile_weight(u, cfg.tau_expectile) * u * inv_b;
    const double y = rec.r + (rec.terminal ? 0.0 : cfg.gamma * v.v[rec.s_next]);
    const double w_q = all ? batch.w[i] : 1.0;
    grad_q[static_cast<std::size_t>(rec.s) * q.num_actions + rec.a] -= w_q * 2.0 * (y - q(rec.s, rec.a)) * inv_b;
    double expo = cfg.beta_awr * u;
    if (expo > 10.0) {
      expo = 10.0;
      ++acc.clipped;
    }
    acc.score[static_cast<std::size_t>(rec.s) * acc.num_actions + rec.a] += batch.w[i] * std::exp(expo);
  }
  opt.v.step(v.v, grad_v);
  opt.q.step(q.q, grad_q);
  check_finite(v.v, "V table");
  check_finite(q.q, "Q table");
}

void bc_update(PolicyAccumulator &acc, const WeightedBatch &batch) {
  for (std::size_t i = 0; i < batch.records.size(); ++i) {
    const TransitionRecord &rec = batch.records[i];
    acc.score[static_cast<std::size_t>(rec.s) * acc.num_actions + rec.a] += batch.w[i];
  }
}

namespace reference {

void cql_update(QTable &q, TableOptimizer &opt, std::span<const TransitionRecord> batch, const AlgoConfig &cfg) {
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad(q.q.size(), 0.0);
  std::vector<double> softmax;
  for (const TransitionRecord &rec : batch) {
    const double y = rec.r + (rec.terminal ? 0.0 : cfg.gamma * q.max(rec.s_next));
    logsumexp_row(q, rec.s, softmax);
    const std::size_t row = static_cast<std::size_t>(rec.s) * q.num_actions;
    for (int b = 0; b < q.num_actions; ++b) grad[row + b] += cfg.alpha_cql * softmax[b] * inv_b;
    grad[row + rec.a] -= cfg.alpha_cql * inv_b;
    grad[row + rec.a] -= 2.0 * (y - q(rec.s, rec.a)) * inv_b;
  }
  opt.q.step(q.q, grad);
}

void iql_update(QTable &q, VTable &v, PolicyAccumulator &acc, TableOptimizer &opt,
                std::span<const TransitionRecord> batch, const AlgoConfig &cfg) {
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad_v(v.v.size(), 0.0);
  std::vector<double> grad_q(q.q.size(), 0.0);
  for (const TransitionRecord &rec : batch) {
    const double u = q(rec.s, rec.a) - v.v[rec.s];
    grad_v[rec.s] -= 2.0 * expectile_weight(u, cfg.tau_expectile) * u * inv_b;
    const double y = rec.r + (rec.terminal ? 0.0 : cfg.gamma * v.v[rec.s_next]);
    grad_q[static_cast<std::size_t>(rec.s) * q.num_actions + rec.a] -= 2.0 * (y - q(rec.s, rec.a)) * inv_b;
    acc.score[static_cast<std::size_t>(rec.s) * acc.num_actions + rec.a] += std::exp(std::min(cfg.beta_awr * u, 10.0));
  }
  opt.v.step(v.v, grad_v);
  opt.q.step(q.q, grad_q);
}

void bc_update(PolicyAccumulator &acc, std::span<const TransitionRecord> batch) {
  for (const TransitionRecord &rec : batch) acc.score[static_cast<std::size_t>(rec.s) * acc.num_actions + rec.a] += 1.0;
}

} // namespace reference

TabularPolicy weighted_bc_policy(const TransitionDataset &ds, std::span<const double> record_w) {
  if (record_w.size() != ds.size()) throw ConfigError("one weight per record required");
  PolicyAccumulator acc = PolicyAccumulator::zeros(ds.meta().num_states, ds.meta().num_actions);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!(record_w[i] >= 0.0)) throw ConfigError("BC weights must be non-negative");
    acc.score[static_cast<std::size_t>(ds[i].s) * acc.num_actions + ds[i].a] += record_w[i];
  }
  return acc.policy();
}

Weighting parse_weighting(const std::string &name) {
  if (name == "uniform") return Weighting::kUniform;
  if (name == "aw") return Weighting::kAW;
  if (name == "pf") return Weighting::kPF;
  if (name == "dw") return Weighting::kDW;
  if (name == "dw-aw") return Weighting::kDWAW;
  if (name == "optdice") return Weighting::kOptDice;
  throw ConfigError("unknown weighting '" + name + "' (expected uniform, aw, pf, dw, dw-aw or optdice)");
}

std::string to_string(Weighting weighting) {
  switch (weighting) {
  case Weighting::kUniform: return "uniform";
  case Weighting::kAW: return "aw";
  case Weighting::kPF: return "pf";
  case Weighting::kDW: return "dw";
  case Weighting::kDWAW: return "dw-aw";
  case Weighting::kOptDice: return "optdice";
  }
  return "?";
}

TabularPolicy current_policy(const AlgoConfig &cfg, const QTable &q, const PolicyAccumulator &acc) {
  if (cfg.algo == Algo::kCQL) return TabularPolicy::greedy(q.q, q.num_states, q.num_actions);
  return acc.policy();
}

double evaluate_policy(const TabularMDP &env, const TabularPolicy &policy, int episodes, std::uint64_t seed) {
  const std::vector<double> returns = kernels::mc_returns_parallel(env, policy, seed, episodes, env.horizon, env.gamma);
  return mean(returns);
}

namespace {

/// Static per-(s,a) multipliers with the matching state weights
/// w_state(s) = sum_a pi_D(a|s) w(s,a).
struct StaticWeights {
  std::vector<double> pair;
  std::vector<double> state;
};

StaticWeights static_weights(const TransitionDataset &ds, std::vector<double> pair) {
  const TabularPolicy pi = empirical_policy(ds);
  StaticWeights out{std::move(pair), std::vector<double>(ds.meta().num_states, 0.0)};
  for (int s = 0; s < pi.num_states; ++s)
    for (int a = 0; a < pi.num_actions; ++a)
      out.state[s] += pi(s, a) * out.pair[static_cast<std::size_t>(s) * pi.num_actions + a];
  return out;
}

} // namespace

SamplerWeights rl_sampler(const TransitionDataset &ds, const WeightingConfig &weighting) {
  switch (weighting.scheme) {
  case Weighting::kAW:
  case Weighting::kDWAW: return aw_sampler(ds, weighting.aw_eta);
  case Weighting::kPF: return pf_sampler(ds, weighting.pf_percent);
  default: return uniform_sampler(ds);
  }
}

TrainOutput train(const TransitionDataset &ds, const TabularMDP &env, const AlgoConfig &cfg,
                  const WeightingConfig &weighting) {
  cfg.validate();
  const int S = ds.meta().num_states;
  const int A = ds.meta().num_actions;
  if (S != env.num_states || A != env.num_actions) throw ConfigError("dataset and environment sizes differ");
  if (ds.size() == 0) throw ConfigError("cannot train on an empty dataset");

  const bool learns_dw = weighting.scheme == Weighting::kDW || weighting.scheme == Weighting::kDWAW;
  const SamplerWeights sampler = rl_sampler(ds, weighting);

  std::optional<DWTrainer> dw;
  if (learns_dw) {
    DWConfig dcfg = weighting.dw;
    dcfg.seed = derive_seed(cfg.seed, 2);
    dw.emplace(ds, dcfg, sampler);
  }
  std::optional<StaticWeights> fixed;
  if (weighting.scheme == Weighting::kOptDice) fixed = static_weights(ds, optdice_weights(ds, weighting.optdice).weights);

  TrainOutput out{QTable::zeros(S, A), VTable::zeros(S), PolicyAccumulator::zeros(S, A), {}, {}, {}, std::nullopt, 0};
  TableOptimizer opt(S, A, cfg.step_size);
  Rng rng(derive_seed(cfg.seed, 1));
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 3);
  out.run.seed = cfg.seed;
  out.run.score_low = ds.meta().score_low;
  out.run.score_high = ds.meta().score_high;

  WeightedBatch batch;
  std::vector<double> table;
  for (int step = 1; step <= cfg.steps; ++step) {
    if (dw) {
      dw->step();
      table = weight_table(dw->model(), dw->config().clamp);
    }
    batch.records.clear();
    batch.w.clear();
    batch.w_state.clear();
    for (std::size_t i : draw_minibatch(sampler, cfg.batch_size, rng)) {
      const TransitionRecord &rec = ds[i];
      batch.records.push_back(rec);
      const std::size_t pair = static_cast<std::size_t>(rec.s) * A + rec.a;
      if (dw) {
        batch.w.push_back(table[pair]);
        batch.w_state.push_back(std::exp(std::clamp(dw->model().phi[rec.s], -dw->config().clamp, dw->config().clamp)));
      } else if (fixed) {
        batch.w.push_back(fixed->pair[pair]);
        batch.w_state.push_back(fixed->state[rec.s]);
      } else {
        batch.w.push_back(1.0);
        batch.w_state.push_back(1.0);
      }
    }
    switch (cfg.algo) {
    case Algo::kCQL: cql_update(out.q, opt, batch, cfg, weighting.target); break;
    case Algo::kIQL: iql_update(out.q, out.v, out.accumulator, opt, batch, cfg, weighting.target); break;
    case Algo::kBC: bc_update(out.accumulator, batch); break;
    }
    if (step % cfg.eval_every == 0) {
      const TabularPolicy pi = current_policy(cfg, out.q, out.accumulator);
      out.run.trace.push_back({step, evaluate_policy(env, pi, cfg.eval_episodes, derive_seed(eval_seed, step))});
    }
  }
  out.policy = current_policy(cfg, out.q, out.accumulator);
  if (dw) {
    out.dw_model = dw->model();
    out.dw_saturated = dw->saturated();
    out.multipliers = weight_table(dw->model(), dw->config().clamp);
  } else if (fixed) {
    out.multipliers = fixed->pair;
  } else {
    out.multipliers.assign(static_cast<std::size_t>(S) * A, 1.0);
  }
  out.run.finalize();
  return out;
}

void write_policy_csv(std::ostream &os, const TabularPolicy &policy) {
  os << "s,a,prob\n";
  for (int s = 0; s < policy.num_states; ++s)
    for (int a = 0; a < policy.num_actions; ++a) os << s << ',' << a << ',' << format_double(policy(s, a)) << '\n';
}

} // namespace dwrl
