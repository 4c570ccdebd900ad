#pragma once

#include "dwrl/common.hpp"
#include "dwrl/dataset.hpp"

#include <span>
#include <string>
#include <vector>

namespace dwrl {

/// Per-record sampling distribution over a dataset.
class SamplerWeights {
public:
  SamplerWeights() = default;
  /// Normalizes `weights` (non-negative, positive total) into probabilities.
  SamplerWeights(std::vector<double> weights, std::string tag);

  std::span<const double> p() const { return p_; }
  const std::string &tag() const { return tag_; }
  std::size_t size() const { return p_.size(); }

  /// Index i with probability p[i].
  std::size_t draw(Rng &rng) const;

private:
  std::vector<double> p_;
  std::vector<double> cdf_;
  std::string tag_;
};

SamplerWeights uniform_sampler(const TransitionDataset &ds);

/// Trajectory-level exp((G - V0(s0)) / eta) with V0 the mean return of the
/// trajectories sharing the exact initial state, split evenly over each
/// trajectory's records.
SamplerWeights aw_sampler(const TransitionDataset &ds, double eta);

/// Trajectory-level top-K% filter: returns at or above the (100-K)th
/// percentile (linear interpolation) share the mass evenly.
SamplerWeights pf_sampler(const TransitionDataset &ds, double k_percent);

/// Record-level weights, e.g. learned density ratios, as a sampler.
SamplerWeights weighted_sampler(std::span<const double> record_weights, std::string tag);

/// Per-trajectory probabilities (sum of record probabilities per trajectory).
std::vector<double> trajectory_probabilities(const TransitionDataset &ds, const SamplerWeights &sw);

/// i.i.d. draws with replacement.
std::vector<std::size_t> draw_minibatch(const SamplerWeights &sw, int batch_size, Rng &rng);

/// Named AW temperatures: L, M, H, XH per offline-RL algorithm.
double aw_temperature_preset(const std::string &preset, const std::string &algo);

/// Linear-interpolation percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

} // namespace dwrl
