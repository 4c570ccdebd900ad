#pragma once

// Shared fixtures and independent oracles for the unit tests.

#include "dwrl/dataset.hpp"
#include "dwrl/mdp.hpp"

#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace dwrl::test {

inline std::string read_text(const std::string &path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Shortest move count from 'S' to 'G' on a character grid ('#' = wall),
/// found by breadth-first search over the text itself.
inline int grid_bfs(const std::vector<std::string> &rows) {
  const int h = static_cast<int>(rows.size());
  const int w = static_cast<int>(rows[0].size());
  std::vector<int> dist(static_cast<std::size_t>(h) * w, -1);
  std::deque<std::pair<int, int>> queue;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      if (rows[r][c] == 'S') {
        dist[r * w + c] = 0;
        queue.emplace_back(r, c);
      }
  const int dr[] = {-1, 1, 0, 0};
  const int dc[] = {0, 0, -1, 1};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    if (rows[r][c] == 'G') return dist[r * w + c];
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k];
      const int nc = c + dc[k];
      if (nr < 0 || nr >= h || nc < 0 || nc >= w || rows[nr][nc] == '#' || dist[nr * w + nc] >= 0) continue;
      dist[nr * w + nc] = dist[r * w + c] + 1;
      queue.emplace_back(nr, nc);
    }
  }
  return -1;
}

inline std::vector<std::string> split_lines(const std::string &text) {
  std::vector<std::string> rows;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) rows.push_back(line);
  return rows;
}

/// Empty MDP shell with zero transitions; callers fill T and rewards.
inline TabularMDP blank_mdp(int S, int A, double gamma) {
  TabularMDP m;
  m.num_states = S;
  m.num_actions = A;
  m.transition.assign(static_cast<std::size_t>(S) * A * S, 0.0);
  m.reward.assign(static_cast<std::size_t>(S) * A, 0.0);
  m.initial_dist.assign(S, 0.0);
  m.terminal.assign(S, 0);
  m.gamma = gamma;
  return m;
}

/// Chain 0 -> 1 -> ... -> n-1 (terminal) under action 1; action 0 stays.
/// Reward 1 on entering the last state; random start in {0, 1}.
inline TabularMDP chain_mdp(int n, double gamma = 0.9) {
  TabularMDP m = blank_mdp(n, 2, gamma);
  for (int s = 0; s < n; ++s) {
    if (s == n - 1) {
      m.T(s, 0, s) = m.T(s, 1, s) = 1.0;
      continue;
    }
    m.T(s, 0, s) = 1.0;
    m.T(s, 1, s + 1) = 1.0;
    if (s + 1 == n - 1) m.reward[static_cast<std::size_t>(s) * 2 + 1] = 1.0;
  }
  m.terminal[n - 1] = 1;
  m.initial_dist[0] = 0.5;
  m.initial_dist[1] = 0.5;
  m.horizon = 4 * n;
  return m;
}

inline DatasetMeta meta_for(int S, int A, double gamma = 0.99) {
  DatasetMeta meta;
  meta.env_name = "test";
  meta.num_states = S;
  meta.num_actions = A;
  meta.gamma = gamma;
  return meta;
}

/// One trajectory per inner vector; each step is (s, a, r, s_next), the last
/// one terminal unless `timeout_last` is set.
struct StepSpec {
  int s, a;
  double r;
  int s_next;
};

inline TransitionDataset make_dataset(const std::vector<std::vector<StepSpec>> &trajs, int S, int A,
                                      bool timeout_last = false, double gamma = 0.99) {
  std::vector<TransitionRecord> records;
  for (std::size_t k = 0; k < trajs.size(); ++k)
    for (std::size_t t = 0; t < trajs[k].size(); ++t) {
      const StepSpec &st = trajs[k][t];
      TransitionRecord rec;
      rec.traj_id = static_cast<int>(k);
      rec.t = static_cast<int>(t);
      rec.s = st.s;
      rec.a = st.a;
      rec.r = st.r;
      rec.s_next = st.s_next;
      const bool last = t + 1 == trajs[k].size();
      rec.terminal = last && !timeout_last;
      rec.timeout = last && timeout_last;
      records.push_back(rec);
    }
  return TransitionDataset(meta_for(S, A, gamma), std::move(records));
}

} // namespace dwrl::test
