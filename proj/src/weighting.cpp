#include "dwrl/weighting.hpp"
#include "dwrl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace dwrl {

namespace {

double clamp_log(double x, double limit, int &saturated) {
  if (x > limit) {
    ++saturated;
    return limit;
  }
  if (x < -limit) {
    ++saturated;
    return -limit;
  }
  return x;
}

double successor_log_weight(const WeightModel &model, const TransitionRecord &rec, TerminalTarget target) {
  if (rec.terminal && target == TerminalTarget::kRestart) return model.log_restart_weight();
  return model.phi[rec.s_next];
}

bool restarts(const TransitionRecord &rec, TerminalTarget target) {
  return rec.terminal && target == TerminalTarget::kRestart;
}

/// Sum of squared flow gaps over a batch and its derivatives with respect to
/// every log pair weight and every phi entry.
struct FlowGap {
  double gap = 0.0;
  std::vector<double> d_logw;
  std::vector<double> d_phi;
};

/// Multiplicity of sample i; an empty span means one each.
double mult_of(std::span<const double> mult, std::size_t i) { return mult.empty() ? 1.0 : mult[i]; }

FlowGap per_sample_gap(const WeightModel &model, std::span<const TransitionRecord> batch, std::span<const double> w,
                       std::span<const double> mult, std::span<const std::uint8_t> w_live, const DWConfig &cfg,
                       int &saturated) {
  FlowGap out{0.0, std::vector<double>(batch.size(), 0.0), std::vector<double>(model.phi.size(), 0.0)};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionRecord &rec = batch[i];
    int sat = 0;
    const double u = std::exp(clamp_log(successor_log_weight(model, rec, cfg.terminal_target), cfg.clamp, sat));
    saturated += sat;
    if (rec.timeout) continue;
    const double m = mult_of(mult, i);
    const double d = u - w[i];
    out.gap += m * d * d;
    if (w_live[i]) out.d_logw[i] = -2.0 * m * d * w[i];
    if (sat) continue;
    if (restarts(rec, cfg.terminal_target)) {
      for (std::size_t s = 0; s < model.restart_dist.size(); ++s) out.d_phi[s] += 2.0 * m * d * u * model.restart_dist[s];
    } else {
      out.d_phi[rec.s_next] += 2.0 * m * d * u;
    }
  }
  return out;
}

FlowGap balance_gap(const WeightModel &model, std::span<const TransitionRecord> batch, std::span<const double> w,
                    std::span<const double> mult, std::span<const std::uint8_t> w_live, const DWConfig &cfg,
                    int &saturated) {
  if (cfg.terminal_target != TerminalTarget::kRestart)
    throw ConfigError("the balance flow form needs the restart terminal target");
  const std::size_t S = model.phi.size();
  std::vector<double> residual(S, 0.0), count(S, 0.0), u(batch.size());
  std::vector<std::uint8_t> u_live(batch.size());
  double restart_w = 0.0;
  double restart_n = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionRecord &rec = batch[i];
    int sat = 0;
    u[i] = std::exp(clamp_log(model.phi[rec.s], cfg.clamp, sat));
    u_live[i] = sat == 0;
    saturated += sat;
    const double m = mult_of(mult, i);
    residual[rec.s] += m * u[i];
    count[rec.s] += m;
    if (rec.timeout) continue;
    if (rec.terminal) {
      restart_w += m * w[i];
      restart_n += m;
    } else {
      residual[rec.s_next] -= m * w[i];
      count[rec.s_next] += m;
    }
  }
  FlowGap out{0.0, std::vector<double>(batch.size(), 0.0), std::vector<double>(S, 0.0)};
  std::vector<double> scaled(S, 0.0);
  double restart_scaled = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    residual[s] -= model.restart_dist[s] * restart_w;
    count[s] += model.restart_dist[s] * restart_n;
    if (count[s] == 0.0) continue;
    scaled[s] = residual[s] / count[s];
    out.gap += residual[s] * scaled[s];
    restart_scaled += model.restart_dist[s] * scaled[s];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionRecord &rec = batch[i];
    const double m = mult_of(mult, i);
    if (u_live[i]) out.d_phi[rec.s] += 2.0 * m * scaled[rec.s] * u[i];
    if (rec.timeout || !w_live[i]) continue;
    out.d_logw[i] = -2.0 * m * w[i] * (rec.terminal ? restart_scaled : scaled[rec.s_next]);
  }
  return out;
}

/// Losses and, when `grad` is given, their exact gradient.
BatchLosses evaluate(const WeightModel &model, std::span<const TransitionRecord> batch, const DWConfig &cfg,
                     std::span<const double> mult, DWGradients *grad) {
  const std::size_t n = batch.size();
  if (n < 2) throw ConfigError("DW losses need a batch of at least 2");
  if (!mult.empty() && mult.size() != n) throw ConfigError("one multiplicity per batch sample expected");
  double B = 0.0;
  for (std::size_t i = 0; i < n; ++i) B += mult_of(mult, i);
  const int A = model.num_actions;

  const std::vector<double> table = model.log_weight_table();
  std::vector<double> logw(n), w(n);
  std::vector<std::uint8_t> w_live(n);
  int saturated = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    int sat = 0;
    logw[i] = clamp_log(table[static_cast<std::size_t>(batch[i].s) * A + batch[i].a], cfg.clamp, sat);
    w_live[i] = sat == 0;
    saturated += sat;
    w[i] = std::exp(logw[i]);
    total += mult_of(mult, i) * w[i];
  }
  const double log_total = std::log(total);
  const FlowGap flow = cfg.flow_form == FlowForm::kBalance
                           ? balance_gap(model, batch, w, mult, w_live, cfg, saturated)
                           : per_sample_gap(model, batch, w, mult, w_live, cfg, saturated);

  double reward_mean = 0.0;
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double wb = mult_of(mult, i) * w[i] / total;
    reward_mean += wb * batch[i].r;
    kl += wb * (logw[i] - log_total);
  }
  const double raw_flow = flow.gap / B;
  const double mean = total / B;
  const bool scaled = cfg.flow_scale == FlowScale::kBatchMean;
  const double flow_scale = scaled ? 1.0 / (mean * mean) : 1.0;
  BatchLosses losses;
  losses.L_R = -reward_mean;
  losses.L_F = raw_flow * flow_scale;
  losses.L_K = kl;
  losses.L_total = losses.L_R + cfg.lambda_F * losses.L_F + cfg.lambda_K * kl;
  losses.saturated = saturated;
  if (!grad) return losses;

  DWGradients &g = *grad;
  g.dphi.assign(model.phi.size(), 0.0);
  g.dpsi.assign(model.psi.size(), 0.0);
  for (std::size_t s = 0; s < g.dphi.size(); ++s) g.dphi[s] = cfg.lambda_F * flow_scale * flow.d_phi[s] / B;
  // Each pair gradient also flows through c[s] into every psi[s,.] in
  // proportion to the reweighted behavior policy; summed per state first.
  std::vector<double> state_grad(model.conditional() ? model.phi.size() : 0, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!w_live[i]) continue;
    const TransitionRecord &rec = batch[i];
    const double m = mult_of(mult, i);
    const double wb = m * w[i] / total;
    double g_log = -wb * (rec.r - reward_mean);
    g_log += cfg.lambda_K * wb * ((logw[i] - log_total) - kl);
    double g_flow = flow.d_logw[i] / B * flow_scale;
    if (scaled) g_flow -= 2.0 * raw_flow / (mean * mean * mean) * m * w[i] / B;
    g_log += cfg.lambda_F * g_flow;

    g.dphi[rec.s] += g_log;
    g.dpsi[static_cast<std::size_t>(rec.s) * A + rec.a] += g_log;
    if (model.conditional()) state_grad[rec.s] += g_log;
  }
  for (std::size_t s = 0; s < state_grad.size(); ++s) {
    if (state_grad[s] == 0.0) continue;
    const std::size_t row = s * A;
    for (int b = 0; b < A; ++b)
      g.dpsi[row + b] -= state_grad[s] * std::exp(model.log_behavior[row + b] + table[row + b] - model.phi[s]);
  }
  return losses;
}

} // namespace

WeightModel WeightModel::zeros(int num_states, int num_actions) {
  WeightModel m;
  m.num_states = num_states;
  m.num_actions = num_actions;
  m.phi.assign(num_states, 0.0);
  m.psi.assign(static_cast<std::size_t>(num_states) * num_actions, 0.0);
  return m;
}

double WeightModel::log_normalizer(int s) const {
  if (log_behavior.empty()) return 0.0;
  const std::size_t row = static_cast<std::size_t>(s) * num_actions;
  double top = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < num_actions; ++a) top = std::max(top, log_behavior[row + a] + psi[row + a]);
  double acc = 0.0;
  for (int a = 0; a < num_actions; ++a) acc += std::exp(log_behavior[row + a] + psi[row + a] - top);
  return top + std::log(acc);
}

std::vector<double> WeightModel::log_weight_table() const {
  std::vector<double> table(psi.size());
  for (int s = 0; s < num_states; ++s) {
    const double c = log_normalizer(s);
    const std::size_t row = static_cast<std::size_t>(s) * num_actions;
    for (int a = 0; a < num_actions; ++a) table[row + a] = phi[s] + psi[row + a] - c;
  }
  return table;
}

double WeightModel::log_restart_weight() const {
  double v = 0.0;
  for (std::size_t s = 0; s < restart_dist.size(); ++s) v += restart_dist[s] * phi[s];
  return v;
}

void DWConfig::validate() const {
  if (!(lambda_F >= 0.0) || !(lambda_K >= 0.0)) throw ConfigError("lambda_F and lambda_K must be >= 0");
  if (batch_size < 2) throw ConfigError("DW batch_size must be >= 2");
  if (steps < 0) throw ConfigError("DW steps must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("DW step_size must be positive");
  if (!(clamp > 0.0)) throw ConfigError("DW clamp must be positive");
  if (flow_form == FlowForm::kBalance && terminal_target != TerminalTarget::kRestart)
    throw ConfigError("the balance flow form needs the restart terminal target");
}

BatchWeights weights(const WeightModel &model, std::span<const TransitionRecord> batch, TerminalTarget target,
                     double clamp) {
  if (batch.empty()) throw ConfigError("weights() needs a non-empty batch");
  BatchWeights out;
  out.w.resize(batch.size());
  out.w_state_next.resize(batch.size());
  out.w_bar.resize(batch.size());
  const std::vector<double> table = model.log_weight_table();
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TransitionRecord &rec = batch[i];
    out.w[i] = std::exp(clamp_log(table[static_cast<std::size_t>(rec.s) * model.num_actions + rec.a], clamp, out.saturated));
    out.w_state_next[i] = std::exp(clamp_log(successor_log_weight(model, rec, target), clamp, out.saturated));
    total += out.w[i];
  }
  for (std::size_t i = 0; i < batch.size(); ++i) out.w_bar[i] = out.w[i] / total;
  return out;
}

BatchLosses dw_losses(const WeightModel &model, std::span<const TransitionRecord> batch, const DWConfig &cfg,
                      std::span<const double> multiplicity) {
  return evaluate(model, batch, cfg, multiplicity, nullptr);
}

DWGradients dw_gradients(const WeightModel &model, std::span<const TransitionRecord> batch, const DWConfig &cfg,
                         BatchLosses *losses, std::span<const double> multiplicity) {
  DWGradients g;
  const BatchLosses l = evaluate(model, batch, cfg, multiplicity, &g);
  if (losses) *losses = l;
  return g;
}

Adam::Adam(std::size_t size, double step_size, double beta1, double beta2, double eps)
    : lr_(step_size), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

WeightModel initial_model(const TransitionDataset &ds, const DWConfig &cfg, const SamplerWeights *sampler) {
  const int S = ds.meta().num_states;
  const int A = ds.meta().num_actions;
  WeightModel model = WeightModel::zeros(S, A);

  model.restart_dist.assign(S, 0.0);
  double heads = 0.0;
  for (const TrajectorySpan &span : ds.trajectories()) {
    model.restart_dist[ds[span.begin].s] += 1.0;
    heads += 1.0;
  }
  if (heads > 0.0)
    for (double &p : model.restart_dist) p /= heads;

  if (cfg.conditional) {
    std::vector<double> mass(static_cast<std::size_t>(S) * A, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i)
      mass[static_cast<std::size_t>(ds[i].s) * A + ds[i].a] += sampler ? sampler->p()[i] : 1.0;
    model.log_behavior.assign(mass.size(), 0.0);
    for (int s = 0; s < S; ++s) {
      const std::size_t row = static_cast<std::size_t>(s) * A;
      double total = 0.0;
      for (int a = 0; a < A; ++a) total += mass[row + a];
      for (int a = 0; a < A; ++a)
        model.log_behavior[row + a] = total > 0.0 ? std::log(mass[row + a] / total) : -std::log(static_cast<double>(A));
    }
  }
  return model;
}

DWTrainer::DWTrainer(const TransitionDataset &ds, DWConfig cfg, std::optional<SamplerWeights> sampler)
    : ds_(&ds), cfg_(cfg), sampler_(sampler ? std::move(*sampler) : uniform_sampler(ds)),
      model_(initial_model(ds, cfg, &sampler_)), adam_(model_.phi.size() + model_.psi.size(), cfg.step_size),
      rng_(cfg.seed) {
  cfg_.validate();
  if (sampler_.size() != ds.size()) throw ConfigError("sampler does not match the dataset");
  if (cfg_.full_batch && sampler_.tag() != "uniform") {
    const double n = static_cast<double>(ds.size());
    multiplicity_.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) multiplicity_[i] = n * sampler_.p()[i];
  }
  flat_.resize(model_.phi.size() + model_.psi.size());
  grad_.resize(flat_.size());
}

BatchLosses DWTrainer::step() {
  std::span<const TransitionRecord> batch = ds_->records();
  if (!cfg_.full_batch) {
    batch_.clear();
    for (std::size_t i : draw_minibatch(sampler_, cfg_.batch_size, rng_)) batch_.push_back((*ds_)[i]);
    batch = batch_;
  }
  BatchLosses losses;
  const DWGradients g = dw_gradients(model_, batch, cfg_, &losses, cfg_.full_batch ? multiplicity_ : std::span<const double>());
  if (!std::isfinite(losses.L_total)) {
    std::ostringstream msg;
    msg << "non-finite DW loss at step " << adam_.iterations() << ": L_R=" << losses.L_R << " L_F=" << losses.L_F
        << " L_K=" << losses.L_K;
    throw NumericalError(msg.str());
  }
  saturated_ += losses.saturated;
  const std::size_t S = model_.phi.size();
  std::copy(model_.phi.begin(), model_.phi.end(), flat_.begin());
  std::copy(model_.psi.begin(), model_.psi.end(), flat_.begin() + static_cast<std::ptrdiff_t>(S));
  std::copy(g.dphi.begin(), g.dphi.end(), grad_.begin());
  std::copy(g.dpsi.begin(), g.dpsi.end(), grad_.begin() + static_cast<std::ptrdiff_t>(S));
  adam_.step(flat_, grad_);
  std::copy(flat_.begin(), flat_.begin() + static_cast<std::ptrdiff_t>(S), model_.phi.begin());
  std::copy(flat_.begin() + static_cast<std::ptrdiff_t>(S), flat_.end(), model_.psi.begin());
  return losses;
}

DWResult train_dw(const TransitionDataset &ds, const DWConfig &cfg, std::optional<SamplerWeights> sampler) {
  cfg.validate();
  DWTrainer trainer(ds, cfg, std::move(sampler));
  DWResult result;
  for (int step = 0; step < cfg.steps; ++step) {
    const BatchLosses losses = trainer.step();
    if (cfg.trace_every > 0 && step % cfg.trace_every == 0) result.trace.emplace_back(step, losses);
  }
  result.model = trainer.model();
  result.saturated = trainer.saturated();
  return result;
}

std::vector<double> record_weights(const WeightModel &model, const TransitionDataset &ds, double clamp) {
  const std::vector<double> table = weight_table(model, clamp);
  std::vector<double> w(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) w[i] = table[static_cast<std::size_t>(ds[i].s) * model.num_actions + ds[i].a];
  return w;
}

std::vector<double> weight_table(const WeightModel &model, double clamp) {
  std::vector<double> table(model.psi.size());
  for (int s = 0; s < model.num_states; ++s) {
    const double c = model.log_normalizer(s);
    for (int a = 0; a < model.num_actions; ++a) {
      const std::size_t i = static_cast<std::size_t>(s) * model.num_actions + a;
      table[i] = std::exp(std::clamp(model.phi[s] + model.psi[i] - c, -clamp, clamp));
    }
  }
  return table;
}

double reweighted_step_reward(const TransitionDataset &ds, std::span<const double> record_w) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    num += record_w[i] * ds[i].r;
    den += record_w[i];
  }
  return num / den;
}

double reweighted_kl(std::span<const double> record_w) {
  double total = 0.0;
  for (double v : record_w) total += v;
  const double n = static_cast<double>(record_w.size());
  double kl = 0.0;
  for (double v : record_w) {
    const double wb = v / total;
    if (wb > 0.0) kl += wb * std::log(wb * n);
  }
  return kl;
}

void write_weight_csv(std::ostream &os, std::span<const double> table, int num_states, int num_actions) {
  os << "s,a,w\n";
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a)
      os << s << ',' << a << ',' << format_double(table[static_cast<std::size_t>(s) * num_actions + a]) << '\n';
}

namespace {

std::vector<double> head_distribution(const TransitionDataset &ds) {
  std::vector<double> rho(ds.meta().num_states, 0.0);
  for (const TrajectorySpan &span : ds.trajectories()) rho[ds[span.begin].s] += 1.0;
  for (double &p : rho) p /= static_cast<double>(ds.num_trajectories());
  return rho;
}

} // namespace

double optdice_objective(const TransitionDataset &ds, std::span<const double> nu, double alpha, std::vector<double> *grad) {
  return kernels::optdice_objective_parallel(ds.records(), head_distribution(ds), nu, alpha, ds.meta().gamma, grad);
}

OptDiceResult optdice_weights(const TransitionDataset &ds, const OptDiceConfig &cfg) {
  if (!(cfg.alpha > 0.0)) throw ConfigError("OptDiCE alpha must be positive");
  if (cfg.steps < 0) throw ConfigError("OptDiCE steps must be >= 0");
  if (ds.size() == 0) throw ConfigError("OptDiCE needs a non-empty dataset");
  const int S = ds.meta().num_states;
  const int A = ds.meta().num_actions;
  const double gamma = ds.meta().gamma;
  const std::vector<double> rho0 = head_distribution(ds);
  std::vector<double> nu(S, 0.0);
  std::vector<double> grad;
  Adam adam(nu.size(), cfg.step_size);
  for (int step = 0; step < cfg.steps; ++step) {
    const double value = kernels::optdice_objective_parallel(ds.records(), rho0, nu, cfg.alpha, gamma, &grad);
    if (!std::isfinite(value)) throw NumericalError("non-finite OptDiCE objective at step " + std::to_string(step));
    adam.step(nu, grad);
  }
  for (double v : nu)
    if (!std::isfinite(v)) throw NumericalError("non-finite nu in OptDiCE");

  std::vector<double> sum(static_cast<std::size_t>(S) * A, 0.0);
  std::vector<double> count(sum.size(), 0.0);
  for (const auto &rec : ds.records()) {
    const double next = rec.terminal ? 0.0 : nu[rec.s_next];
    const double e = rec.r + gamma * next - nu[rec.s];
    const std::size_t i = static_cast<std::size_t>(rec.s) * A + rec.a;
    sum[i] += std::max(0.0, std::exp(e / cfg.alpha - 1.0));
    count[i] += 1.0;
  }
  OptDiceResult out{std::move(nu), std::vector<double>(sum.size(), 0.0)};
  for (std::size_t i = 0; i < sum.size(); ++i) out.weights[i] = count[i] > 0.0 ? sum[i] / count[i] : 0.0;
  return out;
}

} // namespace dwrl
