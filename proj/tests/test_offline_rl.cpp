#include "support.hpp"

#include "dwrl/offline_rl.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace dwrl;
using namespace dwrl::test;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

/// Chain data where every state takes action 0 nine times and action 1 once.
/// Action 1 advances toward the rewarding end, so it is the optimal one.
TransitionDataset lopsided_chain_data(const TabularMDP &chain) {
  std::vector<std::vector<StepSpec>> trajs;
  for (int s = 0; s + 1 < chain.num_states; ++s) {
    for (int k = 0; k < 9; ++k) trajs.push_back({{s, 0, 0.0, s}});
    trajs.push_back({{s, 1, chain.r(s, 1), s + 1}});
  }
  // One-step trajectories: only the last one of each chain is terminal in
  // the environment, the rest end in a timeout.
  std::vector<TransitionRecord> recs;
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const StepSpec &st = trajs[k][0];
    recs.push_back({static_cast<int>(k), 0, st.s, st.a, st.r, st.s_next, chain.is_terminal(st.s_next),
                    !chain.is_terminal(st.s_next)});
  }
  return TransitionDataset(meta_for(chain.num_states, 2, chain.gamma), recs);
}

QTable fit_cql(const TransitionDataset &ds, double alpha, int steps, double gamma) {
  AlgoConfig cfg;
  cfg.alpha_cql = alpha;
  cfg.gamma = gamma;
  QTable q = QTable::zeros(ds.meta().num_states, ds.meta().num_actions);
  TableOptimizer opt(q.num_states, q.num_actions, 1e-2);
  const WeightedBatch batch = WeightedBatch::unit(std::vector<TransitionRecord>(ds.records().begin(), ds.records().end()));
  for (int i = 0; i < steps; ++i) cql_update(q, opt, batch, cfg);
  return q;
}

} // namespace

TEST_CASE("unit weights reproduce the unweighted learners") {
  const GridWorld g = build_four_room(11, 11, 0.1, 0.99, 100);
  const TransitionDataset ds = collect(g.mdp, TabularPolicy::uniform(g.mdp.num_states, 4), 50, 1);
  const int S = g.mdp.num_states;
  AlgoConfig cfg;
  for (WeightTarget target : {WeightTarget::kAll, WeightTarget::kRegularizerOnly}) {
    QTable q1 = QTable::zeros(S, 4), q2 = QTable::zeros(S, 4);
    VTable v1 = VTable::zeros(S), v2 = VTable::zeros(S);
    PolicyAccumulator a1 = PolicyAccumulator::zeros(S, 4), a2 = PolicyAccumulator::zeros(S, 4);
    PolicyAccumulator b1 = PolicyAccumulator::zeros(S, 4), b2 = PolicyAccumulator::zeros(S, 4);
    QTable c1 = QTable::zeros(S, 4), c2 = QTable::zeros(S, 4);
    TableOptimizer o1(S, 4, cfg.step_size), o2(S, 4, cfg.step_size), p1(S, 4, cfg.step_size), p2(S, 4, cfg.step_size);
    Rng rng(5);
    for (int step = 0; step < 500; ++step) {
      std::vector<TransitionRecord> recs;
      for (int i = 0; i < 64; ++i) recs.push_back(ds[uniform_index(rng, ds.size())]);
      const WeightedBatch batch = WeightedBatch::unit(recs);
      cql_update(c1, p1, batch, cfg, target);
      reference::cql_update(c2, p2, recs, cfg);
      iql_update(q1, v1, a1, o1, batch, cfg, target);
      reference::iql_update(q2, v2, a2, o2, recs, cfg);
      bc_update(b1, batch);
      reference::bc_update(b2, recs);
    }
    CHECK(max_abs_diff(c1.q, c2.q) < 1e-12);
    CHECK(max_abs_diff(q1.q, q2.q) < 1e-12);
    CHECK(max_abs_diff(v1.v, v2.v) < 1e-12);
    CHECK(max_abs_diff(a1.score, a2.score) < 1e-12);
    CHECK(b1.score == b2.score);
  }
}

TEST_CASE("a constant regularizer-only weight rescales alpha") {
  const GridWorld g = build_four_room(11, 11, 0.1, 0.99, 100);
  const TransitionDataset ds = collect(g.mdp, TabularPolicy::uniform(g.mdp.num_states, 4), 30, 2);
  const int S = g.mdp.num_states;
  AlgoConfig cfg;
  AlgoConfig doubled = cfg;
  doubled.alpha_cql = 2.0 * cfg.alpha_cql;
  QTable q1 = QTable::zeros(S, 4), q2 = QTable::zeros(S, 4);
  TableOptimizer o1(S, 4, cfg.step_size), o2(S, 4, cfg.step_size);
  Rng rng(3);
  for (int step = 0; step < 300; ++step) {
    std::vector<TransitionRecord> recs;
    for (int i = 0; i < 32; ++i) recs.push_back(ds[uniform_index(rng, ds.size())]);
    WeightedBatch batch = WeightedBatch::unit(recs);
    std::fill(batch.w.begin(), batch.w.end(), 2.0);
    cql_update(q1, o1, batch, cfg, WeightTarget::kRegularizerOnly);
    reference::cql_update(q2, o2, recs, doubled);
  }
  CHECK(max_abs_diff(q1.q, q2.q) < 1e-12);
}

TEST_CASE("CQL alpha sweeps between Q* and the behavior action") {
  const TabularMDP chain = chain_mdp(5);
  const TransitionDataset ds = lopsided_chain_data(chain);
  const ValueIterationResult vi = value_iteration(chain, 1e-12);

  SUBCASE("alpha 0 recovers Q* on full coverage") {
    const QTable q = fit_cql(ds, 0.0, 20000, chain.gamma);
    for (int s = 0; s + 1 < chain.num_states; ++s)
      for (int a = 0; a < 2; ++a) CHECK(std::abs(q(s, a) - vi.q[static_cast<std::size_t>(s) * 2 + a]) < 1e-3);
  }
  SUBCASE("alpha 10 keeps the greedy policy on the majority data action") {
    const QTable q = fit_cql(ds, 10.0, 20000, chain.gamma);
    const TabularPolicy pi = TabularPolicy::greedy(q.q, q.num_states, 2);
    for (int s = 0; s + 1 < chain.num_states; ++s) CHECK(pi(s, 0) == 1.0);
  }
}

TEST_CASE("IQL value tracks the expectile of q") {
  // One state, two terminal actions with rewards 0 and 1 in equal numbers:
  // q -> r and V -> the tau-expectile of {0, 1}, which is tau.
  const TransitionDataset ds = make_dataset({{{0, 0, 0.0, 1}}, {{0, 1, 1.0, 1}}}, 2, 2);
  AlgoConfig cfg;
  cfg.tau_expectile = 0.7;
  QTable q = QTable::zeros(2, 2);
  VTable v = VTable::zeros(2);
  PolicyAccumulator acc = PolicyAccumulator::zeros(2, 2);
  TableOptimizer opt(2, 2, 1e-2);
  const WeightedBatch batch = WeightedBatch::unit(std::vector<TransitionRecord>(ds.records().begin(), ds.records().end()));
  for (int i = 0; i < 20000; ++i) iql_update(q, v, acc, opt, batch, cfg);
  CHECK(std::abs(q(0, 1) - 1.0) < 1e-3);
  CHECK(std::abs(v.v[0] - 0.7) < 1e-3);
  // Scores converge to exp(3 * 0.3) and exp(-3 * 0.7).
  CHECK(acc.policy()(0, 1) == doctest::Approx(std::exp(0.9) / (std::exp(0.9) + std::exp(-2.1))).epsilon(1e-2));
}

TEST_CASE("IQL with beta 0 clones the weighted behavior") {
  const GridWorld g = build_four_room(11, 11, 0.1, 0.99, 100);
  const TransitionDataset ds = collect(g.mdp, TabularPolicy::uniform(g.mdp.num_states, 4), 20, 4);
  const int S = g.mdp.num_states;
  AlgoConfig cfg;
  cfg.beta_awr = 0.0;
  QTable q = QTable::zeros(S, 4);
  VTable v = VTable::zeros(S);
  PolicyAccumulator iql = PolicyAccumulator::zeros(S, 4);
  PolicyAccumulator bc = PolicyAccumulator::zeros(S, 4);
  TableOptimizer opt(S, 4, cfg.step_size);
  WeightedBatch batch = WeightedBatch::unit(std::vector<TransitionRecord>(ds.records().begin(), ds.records().end()));
  for (std::size_t i = 0; i < batch.w.size(); ++i) batch.w[i] = 0.5 + static_cast<double>(i % 4);
  iql_update(q, v, iql, opt, batch, cfg);
  bc_update(bc, batch);
  CHECK(max_abs_diff(iql.score, bc.score) < 1e-12);
}

TEST_CASE("weighted behavior cloning") {
  const TransitionDataset ds = make_dataset({{{0, 0, 0.0, 1}, {1, 1, 0.0, 0}}, {{0, 1, 0.0, 1}}, {{0, 1, 1.0, 1}}}, 3, 2);

  SUBCASE("unit weights give the empirical policy") {
    const TabularPolicy pi = weighted_bc_policy(ds, std::vector<double>(ds.size(), 1.0));
    CHECK(pi.probs == empirical_policy(ds).probs);
    CHECK(pi(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    // State 2 never appears: uniform.
    CHECK(pi(2, 0) == 0.5);
  }
  SUBCASE("weights move the mass") {
    const TabularPolicy pi = weighted_bc_policy(ds, std::vector<double>{3.0, 1.0, 0.5, 0.5});
    CHECK(pi(0, 0) == doctest::Approx(0.75).epsilon(1e-15));
  }
  SUBCASE("bad weights") {
    CHECK_THROWS_AS(weighted_bc_policy(ds, std::vector<double>{1.0}), ConfigError);
    CHECK_THROWS_AS(weighted_bc_policy(ds, std::vector<double>{1.0, -1.0, 1.0, 1.0}), ConfigError);
  }
}

TEST_CASE("train") {
  const GridWorld g = build_four_room(11, 11, 0.1, 0.99, 100);
  const TransitionDataset ds = collect(g.mdp, TabularPolicy::uniform(g.mdp.num_states, 4), 30, 6);
  AlgoConfig cfg;
  cfg.steps = 1000;
  cfg.eval_every = 250;
  cfg.seed = 7;

  SUBCASE("trace has one point per evaluation round") {
    const TrainOutput out = train(ds, g.mdp, cfg, WeightingConfig{});
    REQUIRE(out.run.trace.size() == 4);
    CHECK(out.run.trace.back().step == 1000);
    CHECK(out.run.final_score == doctest::Approx(final_score(out.run.trace)).epsilon(1e-15));
    for (double m : out.multipliers) CHECK(m == 1.0);
  }
  SUBCASE("seeded runs repeat exactly") {
    for (Weighting scheme : {Weighting::kUniform, Weighting::kAW, Weighting::kDW}) {
      WeightingConfig w;
      w.scheme = scheme;
      w.dw.steps = 0;
      const TrainOutput a = train(ds, g.mdp, cfg, w);
      const TrainOutput b = train(ds, g.mdp, cfg, w);
      CHECK(a.q.q == b.q.q);
      CHECK(a.run.final_score == b.run.final_score);
    }
  }
  SUBCASE("zero steps leaves an empty trace and a uniform BC policy") {
    cfg.steps = 0;
    cfg.algo = Algo::kBC;
    const TrainOutput out = train(ds, g.mdp, cfg, WeightingConfig{});
    CHECK(out.run.trace.empty());
    for (double p : out.policy.probs) CHECK(p == 0.25);
  }
  SUBCASE("mismatched environment") {
    const GridWorld other = build_four_room(13, 13, 0.1);
    CHECK_THROWS_AS(train(ds, other.mdp, cfg, WeightingConfig{}), ConfigError);
  }
  SUBCASE("names round trip") {
    for (Algo a : {Algo::kCQL, Algo::kIQL, Algo::kBC}) CHECK(parse_algo(to_string(a)) == a);
    for (Weighting w : {Weighting::kUniform, Weighting::kAW, Weighting::kPF, Weighting::kDW, Weighting::kDWAW,
                        Weighting::kOptDice})
      CHECK(parse_weighting(to_string(w)) == w);
    CHECK_THROWS_AS(parse_algo("td3"), ConfigError);
  }
}

TEST_CASE("policy CSV") {
  TabularPolicy pi = TabularPolicy::uniform(1, 2);
  pi(0, 0) = 0.25;
  pi(0, 1) = 0.75;
  std::ostringstream os;
  write_policy_csv(os, pi);
  CHECK(os.str() == "s,a,prob\n0,0,0.25\n0,1,0.75\n");
}
