#include "dwrl/mdp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace dwrl {

namespace {

int sample_categorical(Rng &rng, std::span<const double> probs) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;
}

// P'(s'|s) under `policy`; terminal rows restart from rho0 when `restart`.
Eigen::MatrixXd state_kernel(const TabularMDP &mdp, const TabularPolicy &policy, bool restart) {
  const int n = mdp.num_states;
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  for (int s = 0; s < n; ++s) {
    if (restart && mdp.is_terminal(s)) {
      for (int next = 0; next < n; ++next) P(s, next) = mdp.initial_dist[next];
      continue;
    }
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double p = policy(s, a);
      if (p == 0.0) continue;
      for (int next = 0; next < n; ++next) P(s, next) += p * mdp.T(s, a, next);
    }
  }
  return P;
}

StationaryDistribution expand(const TabularMDP &mdp, const TabularPolicy &policy, const Eigen::VectorXd &ds) {
  StationaryDistribution out{mdp.num_states, mdp.num_actions, std::vector<double>(mdp.num_pairs(), 0.0)};
  for (int s = 0; s < mdp.num_states; ++s) {
    const double mass = std::max(ds(s), 0.0);
    for (int a = 0; a < mdp.num_actions; ++a)
      out.d[static_cast<std::size_t>(s) * mdp.num_actions + a] = mass * policy(s, a);
  }
  double total = 0.0;
  for (double v : out.d) total += v;
  for (double &v : out.d) v /= total;
  return out;
}

} // namespace

void TabularMDP::validate() const {
  if (num_states <= 0 || num_actions <= 0) throw ConfigError("MDP needs at least one state and one action");
  if (transition.size() != num_pairs() * num_states || reward.size() != num_pairs() ||
      initial_dist.size() != static_cast<std::size_t>(num_states) ||
      terminal.size() != static_cast<std::size_t>(num_states))
    throw ConfigError("MDP tensor sizes do not match num_states/num_actions");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) {
      double row = 0.0;
      for (int next = 0; next < num_states; ++next) {
        const double p = T(s, a, next);
        if (p < 0.0) throw ConfigError("negative transition probability");
        row += p;
      }
      if (std::abs(row - 1.0) > 1e-12) throw ConfigError("transition row does not sum to one");
      if (is_terminal(s) && T(s, a, s) != 1.0) throw ConfigError("terminal state is not absorbing");
    }
  }
  double mass = 0.0;
  for (int s = 0; s < num_states; ++s) {
    if (initial_dist[s] < 0.0) throw ConfigError("negative initial probability");
    if (is_terminal(s) && initial_dist[s] != 0.0) throw ConfigError("initial distribution covers a terminal state");
    mass += initial_dist[s];
  }
  if (std::abs(mass - 1.0) > 1e-12) throw ConfigError("initial distribution does not sum to one");
}

TabularPolicy TabularPolicy::uniform(int num_states, int num_actions) {
  return {num_states, num_actions,
          std::vector<double>(static_cast<std::size_t>(num_states) * num_actions, 1.0 / num_actions)};
}

TabularPolicy TabularPolicy::deterministic(std::span<const int> actions, int num_actions) {
  TabularPolicy pi{static_cast<int>(actions.size()), num_actions,
                   std::vector<double>(actions.size() * num_actions, 0.0)};
  for (std::size_t s = 0; s < actions.size(); ++s) pi(static_cast<int>(s), actions[s]) = 1.0;
  return pi;
}

TabularPolicy TabularPolicy::greedy(std::span<const double> table, int num_states, int num_actions) {
  std::vector<int> actions(num_states, 0);
  for (int s = 0; s < num_states; ++s) {
    const double *row = table.data() + static_cast<std::size_t>(s) * num_actions;
    int best = 0;
    for (int a = 1; a < num_actions; ++a)
      if (row[a] > row[best] + 1e-12 * std::max(1.0, std::abs(row[best]))) best = a;
    actions[s] = best;
  }
  return deterministic(actions, num_actions);
}

void TabularPolicy::validate() const {
  if (probs.size() != static_cast<std::size_t>(num_states) * num_actions)
    throw ConfigError("policy table has the wrong size");
  for (int s = 0; s < num_states; ++s) {
    double row = 0.0;
    for (int a = 0; a < num_actions; ++a) {
      if (!((*this)(s, a) >= 0.0)) throw ConfigError("negative policy probability");
      row += (*this)(s, a);
    }
    if (std::abs(row - 1.0) > 1e-12) throw ConfigError("policy row does not sum to one");
  }
}

std::vector<double> StationaryDistribution::state_marginal() const {
  std::vector<double> m(num_states, 0.0);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) m[s] += (*this)(s, a);
  return m;
}

std::string GridWorld::render() const {
  std::ostringstream os;
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      const int s = state_of_cell[static_cast<std::size_t>(row) * width + col];
      os << (s < 0 ? '#' : s == start ? 'S' : s == goal ? 'G' : '.');
    }
    os << '\n';
  }
  return os.str();
}

GridWorld build_four_room(int width, int height, double slip, double gamma, int horizon) {
  if (width < 7 || height < 7) throw ConfigError("four-room grid needs width and height >= 7");
  if (width % 2 == 0 || height % 2 == 0) throw ConfigError("four-room grid needs odd width and height");
  if (!(slip >= 0.0 && slip < 0.5)) throw ConfigError("slip must lie in [0, 0.5)");

  GridWorld g;
  g.width = width;
  g.height = height;
  const int mid_row = height / 2;
  const int mid_col = width / 2;
  std::vector<bool> wall(static_cast<std::size_t>(width) * height, false);
  auto cell = [width](int row, int col) { return static_cast<std::size_t>(row) * width + col; };
  for (int row = 0; row < height; ++row) wall[cell(row, mid_col)] = true;
  for (int col = 0; col < width; ++col) wall[cell(mid_row, col)] = true;
  wall[cell((mid_row - 1) / 2, mid_col)] = false;
  wall[cell(mid_row + 1 + (height - mid_row - 2) / 2, mid_col)] = false;
  wall[cell(mid_row, (mid_col - 1) / 2)] = false;
  wall[cell(mid_row, mid_col + 1 + (width - mid_col - 2) / 2)] = false;

  g.state_of_cell.assign(wall.size(), -1);
  for (int row = 0; row < height; ++row) {
    for (int col = 0; col < width; ++col) {
      if (wall[cell(row, col)]) continue;
      g.state_of_cell[cell(row, col)] = static_cast<int>(g.row_of_state.size());
      g.row_of_state.push_back(row);
      g.col_of_state.push_back(col);
    }
  }
  g.start = g.state_of_cell[cell(height - 1, 0)];
  g.goal = g.state_of_cell[cell(0, width - 1)];

  TabularMDP &m = g.mdp;
  m.num_states = static_cast<int>(g.row_of_state.size());
  m.num_actions = 4;
  m.gamma = gamma;
  m.horizon = horizon;
  m.transition.assign(m.num_pairs() * m.num_states, 0.0);
  m.reward.assign(m.num_pairs(), 0.0);
  m.initial_dist.assign(m.num_states, 0.0);
  m.initial_dist[g.start] = 1.0;
  m.terminal.assign(m.num_states, 0);
  m.terminal[g.goal] = 1;

  constexpr int d_row[4] = {-1, 1, 0, 0};
  constexpr int d_col[4] = {0, 0, -1, 1};
  auto move = [&](int s, int dir) {
    const int row = g.row_of_state[s] + d_row[dir];
    const int col = g.col_of_state[s] + d_col[dir];
    if (row < 0 || row >= height || col < 0 || col >= width) return s;
    const int next = g.state_of_cell[cell(row, col)];
    return next < 0 ? s : next;
  };
  for (int s = 0; s < m.num_states; ++s) {
    for (int a = 0; a < 4; ++a) {
      if (m.is_terminal(s)) {
        m.T(s, a, s) = 1.0;
        continue;
      }
      for (int dir = 0; dir < 4; ++dir) {
        const double p = dir == a ? 1.0 - slip : slip / 3.0;
        if (p > 0.0) m.T(s, a, move(s, dir)) += p;
      }
      m.reward[static_cast<std::size_t>(s) * 4 + a] = m.T(s, a, g.goal);
    }
  }
  m.validate();
  return g;
}

Trajectory rollout(const TabularMDP &mdp, const TabularPolicy &policy, std::uint64_t seed, int max_steps) {
  if (max_steps < 1) throw ConfigError("rollout needs max_steps >= 1");
  Rng rng(seed);
  Trajectory traj;
  int s = sample_categorical(rng, mdp.initial_dist);
  std::vector<double> next_probs(mdp.num_states);
  for (int t = 0; t < max_steps; ++t) {
    const std::span<const double> pi_row(policy.probs.data() + static_cast<std::size_t>(s) * mdp.num_actions,
                                         static_cast<std::size_t>(mdp.num_actions));
    const int a = sample_categorical(rng, pi_row);
    const std::span<const double> t_row(
        mdp.transition.data() + (static_cast<std::size_t>(s) * mdp.num_actions + a) * mdp.num_states,
        static_cast<std::size_t>(mdp.num_states));
    const int next = sample_categorical(rng, t_row);
    Step step{s, a, mdp.r(s, a), next, mdp.is_terminal(next), false};
    if (!step.terminal && t == max_steps - 1) step.timeout = true;
    traj.push_back(step);
    if (step.terminal) break;
    s = next;
  }
  return traj;
}

double bellman_residual(const TabularMDP &mdp, std::span<const double> q) {
  const int A = mdp.num_actions;
  std::vector<double> v(mdp.num_states, 0.0);
  for (int s = 0; s < mdp.num_states; ++s) {
    if (mdp.is_terminal(s)) continue;
    v[s] = *std::max_element(q.begin() + static_cast<std::ptrdiff_t>(s) * A,
                             q.begin() + static_cast<std::ptrdiff_t>(s + 1) * A);
  }
  double res = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) {
    for (int a = 0; a < A; ++a) {
      double target = 0.0;
      if (!mdp.is_terminal(s)) {
        double ev = 0.0;
        for (int next = 0; next < mdp.num_states; ++next) ev += mdp.T(s, a, next) * v[next];
        target = mdp.r(s, a) + mdp.gamma * ev;
      }
      res = std::max(res, std::abs(target - q[static_cast<std::size_t>(s) * A + a]));
    }
  }
  return res;
}

ValueIterationResult value_iteration(const TabularMDP &mdp, double tol, int max_iterations) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  std::vector<double> q(mdp.num_pairs(), 0.0);
  std::vector<double> next_q(q.size(), 0.0);
  std::vector<double> v(S, 0.0);
  double residual = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    for (int s = 0; s < S; ++s)
      v[s] = mdp.is_terminal(s) ? 0.0 : *std::max_element(q.begin() + s * A, q.begin() + (s + 1) * A);
    residual = 0.0;
    for (int s = 0; s < S; ++s) {
      for (int a = 0; a < A; ++a) {
        double target = 0.0;
        if (!mdp.is_terminal(s)) {
          double ev = 0.0;
          for (int next = 0; next < S; ++next) ev += mdp.T(s, a, next) * v[next];
          target = mdp.r(s, a) + mdp.gamma * ev;
        }
        const std::size_t i = static_cast<std::size_t>(s) * A + a;
        next_q[i] = target;
        residual = std::max(residual, std::abs(target - q[i]));
      }
    }
    // `residual` is the Bellman residual of q, the table we return.
    if (residual <= tol) return {q, TabularPolicy::greedy(q, S, A), residual, it};
    q.swap(next_q);
  }
  std::ostringstream msg;
  msg << "value iteration did not converge: residual " << residual << " after " << max_iterations << " iterations";
  throw NumericalError(msg.str());
}

StationaryDistribution stationary_distribution(const TabularMDP &mdp, const TabularPolicy &policy, double gamma) {
  policy.validate();
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  const int n = mdp.num_states;
  const bool undiscounted = gamma == 1.0;
  const Eigen::MatrixXd P = state_kernel(mdp, policy, undiscounted);

  if (!undiscounted) {
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * P.transpose();
    Eigen::VectorXd b(n);
    for (int s = 0; s < n; ++s) b(s) = (1.0 - gamma) * mdp.initial_dist[s];
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) throw NumericalError("discounted flow system is singular");
    const Eigen::VectorXd ds = lu.solve(b);
    StationaryDistribution d = expand(mdp, policy, ds);
    if (flow_residual(mdp, d, gamma) >= 1e-9) throw NumericalError("discounted flow solution is ill-conditioned");
    return d;
  }

  // Recurrent class reached from rho0 on the restart-rewired chain.
  std::vector<int> reach;
  std::vector<int> index(n, -1);
  std::deque<int> frontier;
  for (int s = 0; s < n; ++s)
    if (mdp.initial_dist[s] > 0.0) {
      index[s] = static_cast<int>(reach.size());
      reach.push_back(s);
      frontier.push_back(s);
    }
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop_front();
    for (int next = 0; next < n; ++next)
      if (P(s, next) > 0.0 && index[next] < 0) {
        index[next] = static_cast<int>(reach.size());
        reach.push_back(next);
        frontier.push_back(next);
      }
  }
  const int m = static_cast<int>(reach.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) A(j, i) -= P(reach[i], reach[j]);
  A.row(m - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m);
  b(m - 1) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw NumericalError("undiscounted flow system is singular (several closed classes)");
  const Eigen::VectorXd sub = lu.solve(b);
  Eigen::VectorXd ds = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < m; ++i) ds(reach[i]) = sub(i);
  if (ds.minCoeff() < -1e-9) throw NumericalError("undiscounted flow solution has negative mass");
  StationaryDistribution d = expand(mdp, policy, ds);
  if (flow_residual(mdp, d, gamma) >= 1e-9) throw NumericalError("undiscounted flow solution is ill-conditioned");
  return d;
}

double flow_residual(const TabularMDP &mdp, const StationaryDistribution &d, double gamma) {
  const int n = mdp.num_states;
  const bool undiscounted = gamma == 1.0;
  std::vector<double> inflow(n, 0.0);
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < mdp.num_actions; ++a) {
      const double mass = d(s, a);
      if (mass == 0.0) continue;
      if (undiscounted && mdp.is_terminal(s)) {
        for (int next = 0; next < n; ++next) inflow[next] += mass * mdp.initial_dist[next];
      } else {
        for (int next = 0; next < n; ++next) inflow[next] += mass * mdp.T(s, a, next);
      }
    }
  }
  const std::vector<double> marginal = d.state_marginal();
  double res = 0.0;
  for (int s = 0; s < n; ++s) {
    const double rhs = undiscounted ? inflow[s] : (1.0 - gamma) * mdp.initial_dist[s] + gamma * inflow[s];
    res = std::max(res, std::abs(marginal[s] - rhs));
  }
  return res;
}

double expected_return(const TabularMDP &mdp, const StationaryDistribution &d) {
  double total = 0.0;
  for (std::size_t i = 0; i < d.d.size(); ++i) total += d.d[i] * mdp.reward[i];
  return total;
}

double policy_value(const TabularMDP &mdp, const TabularPolicy &policy, double gamma) {
  const int n = mdp.num_states;
  const Eigen::MatrixXd P = state_kernel(mdp, policy, false);
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - gamma * P;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    if (mdp.is_terminal(s)) {
      A.row(s).setZero();
      A(s, s) = 1.0;
      continue;
    }
    for (int a = 0; a < mdp.num_actions; ++a) b(s) += policy(s, a) * mdp.r(s, a);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
  if (!lu.isInvertible()) throw NumericalError("policy evaluation system is singular");
  const Eigen::VectorXd v = lu.solve(b);
  double value = 0.0;
  for (int s = 0; s < n; ++s) value += mdp.initial_dist[s] * v(s);
  return value;
}

} // namespace dwrl
