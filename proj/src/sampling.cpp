#include "dwrl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace dwrl {

SamplerWeights::SamplerWeights(std::vector<double> weights, std::string tag) : p_(std::move(weights)), tag_(std::move(tag)) {
  if (p_.empty()) throw ConfigError("sampler over an empty dataset");
  double total = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("sampler weights must be finite and non-negative");
    total += v;
  }
  if (!(total > 0.0)) throw ConfigError("sampler weights have zero total mass");
  cdf_.resize(p_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p_.size(); ++i) {
    p_[i] /= total;
    acc += p_[i];
    cdf_[i] = acc;
  }
}

std::size_t SamplerWeights::draw(Rng &rng) const {
  const double u = uniform01(rng) * cdf_.back();
  auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
  std::size_t i = it == cdf_.end() ? cdf_.size() - 1 : static_cast<std::size_t>(it - cdf_.begin());
  // Skip zero-mass records that share a cdf value with their successor.
  while (p_[i] == 0.0 && i > 0) --i;
  return i;
}

SamplerWeights uniform_sampler(const TransitionDataset &ds) {
  return {std::vector<double>(ds.size(), 1.0), "uniform"};
}

namespace {

SamplerWeights spread_over_records(const TransitionDataset &ds, const std::vector<double> &traj_mass, std::string tag) {
  std::vector<double> w(ds.size(), 0.0);
  for (std::size_t k = 0; k < ds.num_trajectories(); ++k) {
    const TrajectorySpan span = ds.trajectories()[k];
    const double each = traj_mass[k] / static_cast<double>(span.size());
    for (std::size_t i = span.begin; i < span.end; ++i) w[i] = each;
  }
  return {std::move(w), std::move(tag)};
}

std::vector<double> discounted_returns(const TransitionDataset &ds) {
  std::vector<double> g(ds.num_trajectories());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = trajectory_return(ds.trajectory(k), ds.meta().gamma);
  return g;
}

} // namespace

SamplerWeights aw_sampler(const TransitionDataset &ds, double eta) {
  if (!(eta > 0.0)) throw ConfigError("AW temperature must be positive");
  if (ds.num_trajectories() == 0) throw ConfigError("AW sampler needs at least one trajectory");
  const std::vector<double> g = discounted_returns(ds);
  std::map<int, std::pair<double, int>> by_start;
  for (std::size_t k = 0; k < g.size(); ++k) {
    auto &acc = by_start[ds.trajectory(k).front().s];
    acc.first += g[k];
    acc.second += 1;
  }
  std::vector<double> logits(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto &acc = by_start[ds.trajectory(k).front().s];
    logits[k] = (g[k] - acc.first / acc.second) / eta;
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> mass(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) mass[k] = std::exp(logits[k] - top);
  return spread_over_records(ds, mass, "aw(" + format_double(eta) + ")");
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SamplerWeights pf_sampler(const TransitionDataset &ds, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ConfigError("PF percentage must lie in (0, 100]");
  if (ds.num_trajectories() == 0) throw ConfigError("PF sampler needs at least one trajectory");
  const std::vector<double> g = discounted_returns(ds);
  const double threshold = percentile(g, 100.0 - k_percent);
  std::vector<double> mass(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) mass[k] = g[k] >= threshold ? 1.0 : 0.0;
  return spread_over_records(ds, mass, "pf(" + format_double(k_percent) + ")");
}

SamplerWeights weighted_sampler(std::span<const double> record_weights, std::string tag) {
  return {std::vector<double>(record_weights.begin(), record_weights.end()), std::move(tag)};
}

std::vector<double> trajectory_probabilities(const TransitionDataset &ds, const SamplerWeights &sw) {
  std::vector<double> out(ds.num_trajectories(), 0.0);
  for (std::size_t k = 0; k < ds.num_trajectories(); ++k) {
    const TrajectorySpan span = ds.trajectories()[k];
    for (std::size_t i = span.begin; i < span.end; ++i) out[k] += sw.p()[i];
  }
  return out;
}

std::vector<std::size_t> draw_minibatch(const SamplerWeights &sw, int batch_size, Rng &rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> idx(batch_size);
  for (auto &i : idx) i = sw.draw(rng);
  return idx;
}

double aw_temperature_preset(const std::string &preset, const std::string &algo) {
  const bool iql = algo == "iql";
  if (preset == "L") return 0.01;
  if (preset == "M") return iql ? 0.2 : 0.1;
  if (preset == "H") return 1.0;
  if (preset == "XH") return 5.0;
  throw ConfigError("unknown AW preset '" + preset + "' (expected L, M, H or XH)");
}

} // namespace dwrl
