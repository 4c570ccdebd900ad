#pragma once

#include "dwrl/common.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dwrl {

/// Finite MDP with dense tensors.
///
/// `transition` is indexed [s][a][s'] and `reward` [s][a], both row-major.
/// Terminal states are absorbing with zero reward; `horizon` is the timeout
/// cutoff used by rollouts.
struct TabularMDP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> transition;
  std::vector<double> reward;
  std::vector<double> initial_dist;
  std::vector<std::uint8_t> terminal;
  double gamma = 0.99;
  int horizon = 100;

  double T(int s, int a, int next) const {
    return transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states + next];
  }
  double &T(int s, int a, int next) {
    return transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states + next];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * num_actions + a]; }
  bool is_terminal(int s) const { return terminal[s] != 0; }
  std::size_t num_pairs() const { return static_cast<std::size_t>(num_states) * num_actions; }

  /// Throws ConfigError when any structural invariant is violated.
  void validate() const;
};

/// Row-stochastic pi(a|s), stored [s][a].
struct TabularPolicy {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> probs;

  double operator()(int s, int a) const { return probs[static_cast<std::size_t>(s) * num_actions + a]; }
  double &operator()(int s, int a) { return probs[static_cast<std::size_t>(s) * num_actions + a]; }

  static TabularPolicy uniform(int num_states, int num_actions);
  /// Deterministic policy from one action per state.
  static TabularPolicy deterministic(std::span<const int> actions, int num_actions);
  /// Greedy over a [s][a] table, lowest action index on ties.
  static TabularPolicy greedy(std::span<const double> table, int num_states, int num_actions);

  void validate() const;
};

/// Occupancy over (s,a) pairs, stored [s][a].
struct StationaryDistribution {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> d;

  double operator()(int s, int a) const { return d[static_cast<std::size_t>(s) * num_actions + a]; }
  /// Marginal over actions.
  std::vector<double> state_marginal() const;
};

struct Step {
  int s = 0;
  int a = 0;
  double r = 0.0;
  int s_next = 0;
  bool terminal = false;
  bool timeout = false;
};

using Trajectory = std::vector<Step>;

/// Four-room grid: the MDP plus the cell geometry needed for rendering.
struct GridWorld {
  TabularMDP mdp;
  int width = 0;
  int height = 0;
  /// state id per cell (row-major, row 0 at the top); -1 for walls.
  std::vector<int> state_of_cell;
  std::vector<int> row_of_state;
  std::vector<int> col_of_state;
  int start = 0;
  int goal = 0;

  /// ASCII map: '#' wall, 'S' start, 'G' goal, '.' free.
  std::string render() const;
};

enum Action : int { kUp = 0, kDown = 1, kLeft = 2, kRight = 3 };

/// Four rooms split by one vertical and one horizontal wall through the
/// middle, each half-wall with a doorway at its centre. Start is the
/// bottom-left corner, goal the top-right corner (terminal, +1 on entry).
GridWorld build_four_room(int width, int height, double slip, double gamma = 0.99, int horizon = 200);

/// Rolls out `policy` from rho0. Stops at a terminal state or after
/// `max_steps` transitions (timeout flag on the last step in that case).
Trajectory rollout(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int max_steps);

struct ValueIterationResult {
  std::vector<double> q;
  TabularPolicy greedy;
  double residual = 0.0;
  int iterations = 0;
};

/// Q-value iteration to max-norm Bellman residual <= tol.
ValueIterationResult value_iteration(const TabularMDP &mdp, double tol, int max_iterations = 1'000'000);

/// Max-norm Bellman optimality residual of a Q table.
double bellman_residual(const TabularMDP &mdp, std::span<const double> q);

/// Normalized occupancy d(s,a) of `policy`.
///
/// For gamma < 1 solves d(s') = (1-gamma) rho0(s') + gamma sum T(s'|s,a) d(s,a).
/// For gamma == 1 terminal states are rewired to restart from rho0 and the
/// stationary distribution of the recurrent class reached from rho0 is
/// returned. Throws NumericalError when the system is singular or the
/// solution misses the 1e-9 residual bound.
StationaryDistribution stationary_distribution(const TabularMDP &mdp, const TabularPolicy &policy, double gamma);

/// Max-norm violation of the flow equations for `d`.
double flow_residual(const TabularMDP &mdp, const StationaryDistribution &d, double gamma);

/// sum_{s,a} d(s,a) r(s,a).
double expected_return(const TabularMDP &mdp, const StationaryDistribution &d);

/// Exact discounted return of `policy` from rho0 (policy evaluation, no horizon).
double policy_value(const TabularMDP &mdp, const TabularPolicy &policy, double gamma);

} // namespace dwrl
