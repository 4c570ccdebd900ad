#pragma once

// Data-parallel inner loops. Every kernel has a plain serial reference with
// the same signature; the *_parallel variants split work into fixed-size
// blocks and combine block partials in order, so their results do not
// depend on the thread count.

#include "dwrl/dataset.hpp"
#include "dwrl/mdp.hpp"
#include "dwrl/weighting.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace dwrl::kernels {

inline constexpr std::size_t kBlock = 4096;

/// Threads OpenMP would use (1 without OpenMP).
int max_threads();

/// DW losses with the whole record range as a single batch.
BatchLosses dataset_losses_serial(const WeightModel &model, std::span<const TransitionRecord> records, const DWConfig &cfg);
BatchLosses dataset_losses_parallel(const WeightModel &model, std::span<const TransitionRecord> records, const DWConfig &cfg);

/// alpha mean exp(e/alpha - 1) + (1-gamma) rho0 . nu and, when `grad` is
/// given, its gradient with respect to nu.
double optdice_objective_serial(std::span<const TransitionRecord> records, std::span<const double> rho0,
                                std::span<const double> nu, double alpha, double gamma, std::vector<double> *grad);
double optdice_objective_parallel(std::span<const TransitionRecord> records, std::span<const double> rho0,
                                  std::span<const double> nu, double alpha, double gamma, std::vector<double> *grad);

/// Discounted returns of `n` independent episodes; episode k uses
/// derive_seed(seed, k).
std::vector<double> mc_returns_serial(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int n,
                                      int max_steps, double gamma);
std::vector<double> mc_returns_parallel(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int n,
                                        int max_steps, double gamma);

using Statistic = std::function<double(std::span<const double>)>;

/// `n` bootstrap replicates of `stat`; replicate k resamples with
/// derive_seed(seed, k).
std::vector<double> bootstrap_serial(std::span<const double> xs, const Statistic &stat, int n, std::uint64_t seed);
std::vector<double> bootstrap_parallel(std::span<const double> xs, const Statistic &stat, int n, std::uint64_t seed);

} // namespace dwrl::kernels
