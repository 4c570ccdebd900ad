#include "dwrl/experiment.hpp"

#include "dwrl/sampling.hpp"
#include "dwrl/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace dwrl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char *kVersion = "dwrl 0.1.0";

std::ofstream open_out(const fs::path &path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

std::ifstream open_in(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path.string());
  return is;
}

/// Shortest number of transitions from rho0's support to a terminal state
/// over positive-probability moves.
int shortest_path_length(const TabularMDP &mdp) {
  std::vector<int> dist(mdp.num_states, -1);
  std::deque<int> queue;
  for (int s = 0; s < mdp.num_states; ++s)
    if (mdp.initial_dist[s] > 0.0) {
      dist[s] = 0;
      queue.push_back(s);
    }
  while (!queue.empty()) {
    const int s = queue.front();
    queue.pop_front();
    if (mdp.is_terminal(s)) return dist[s];
    for (int a = 0; a < mdp.num_actions; ++a)
      for (int n = 0; n < mdp.num_states; ++n)
        if (mdp.T(s, a, n) > 0.0 && dist[n] < 0) {
          dist[n] = dist[s] + 1;
          queue.push_back(n);
        }
  }
  return -1;
}

TabularPolicy epsilon_mix(const TabularPolicy &base, double epsilon) {
  TabularPolicy pi = base;
  const double floor = epsilon / base.num_actions;
  for (double &p : pi.probs) p = (1.0 - epsilon) * p + floor;
  return pi;
}

/// Greedy shortest-path policy to the bottom-right cell.
TabularPolicy detour_policy(const GridWorld &g) {
  TabularMDP mdp = g.mdp;
  const int decoy = g.state_of_cell[static_cast<std::size_t>(g.height - 1) * g.width + (g.width - 1)];
  if (decoy < 0) throw ConfigError("bottom-right cell is a wall");
  std::fill(mdp.reward.begin(), mdp.reward.end(), 0.0);
  std::fill(mdp.terminal.begin(), mdp.terminal.end(), std::uint8_t{0});
  mdp.terminal[decoy] = 1;
  for (int s = 0; s < mdp.num_states; ++s)
    for (int a = 0; a < mdp.num_actions; ++a) {
      if (s == decoy) {
        for (int n = 0; n < mdp.num_states; ++n) mdp.T(s, a, n) = n == decoy ? 1.0 : 0.0;
        continue;
      }
      mdp.reward[static_cast<std::size_t>(s) * mdp.num_actions + a] = mdp.T(s, a, decoy);
    }
  return value_iteration(mdp, 1e-10).greedy;
}

void check_keys(const json &j, std::initializer_list<const char *> allowed, const std::string &where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto &item : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char *k) { return item.key() == k; }))
      throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

template <class T> void read_opt(const json &j, const char *key, T &out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

EnvSpec parse_env(const json &j) {
  check_keys(j, {"width", "height", "slip", "gamma", "horizon"}, "env");
  EnvSpec env;
  read_opt(j, "width", env.width);
  read_opt(j, "height", env.height);
  read_opt(j, "slip", env.slip);
  read_opt(j, "gamma", env.gamma);
  read_opt(j, "horizon", env.horizon);
  return env;
}

json env_json(const EnvSpec &env) {
  return {{"width", env.width}, {"height", env.height}, {"slip", env.slip}, {"gamma", env.gamma}, {"horizon", env.horizon}};
}

GenConfig parse_gen(const json &j, const EnvSpec &env) {
  check_keys(j, {"behavior", "epsilon", "n", "seed"}, "mix source");
  GenConfig g;
  g.env = env;
  if (j.contains("behavior")) g.behavior = parse_behavior(j.at("behavior").get<std::string>());
  read_opt(j, "epsilon", g.epsilon);
  read_opt(j, "n", g.n_trajectories);
  read_opt(j, "seed", g.seed);
  return g;
}

json gen_json(const GenConfig &g) {
  return {{"behavior", to_string(g.behavior)}, {"epsilon", g.epsilon}, {"n", g.n_trajectories}, {"seed", g.seed}};
}

std::string sigma_label(double sigma) {
  std::ostringstream os;
  os << "sigma=" << format_double(sigma);
  return os.str();
}

FlowScale parse_flow_scale(const std::string &name) {
  if (name == "raw") return FlowScale::kRaw;
  if (name == "batch-mean") return FlowScale::kBatchMean;
  throw ConfigError("unknown flow_scale '" + name + "' (expected raw or batch-mean)");
}

FlowForm parse_flow_form(const std::string &name) {
  if (name == "per-sample") return FlowForm::kPerSample;
  if (name == "balance") return FlowForm::kBalance;
  throw ConfigError("unknown flow_form '" + name + "' (expected per-sample or balance)");
}

TerminalTarget parse_terminal_target(const std::string &name) {
  if (name == "restart") return TerminalTarget::kRestart;
  if (name == "absorbing") return TerminalTarget::kAbsorbing;
  throw ConfigError("unknown terminal_target '" + name + "' (expected restart or absorbing)");
}

WeightTarget parse_target(const std::string &name) {
  if (name == "all") return WeightTarget::kAll;
  if (name == "reg-only") return WeightTarget::kRegularizerOnly;
  throw ConfigError("unknown target '" + name + "' (expected all or reg-only)");
}

/// lambda defaults: (lambda_K, lambda_F) = (1, 1) for IQL, (0.2, 0.1) otherwise.
DWConfig default_dw(Algo algo) {
  DWConfig dw;
  if (algo == Algo::kIQL) {
    dw.lambda_K = 1.0;
    dw.lambda_F = 1.0;
  }
  return dw;
}

DWConfig parse_dw(const json &j, Algo algo) {
  check_keys(j,
             {"lambda_F", "lambda_K", "step_size", "batch_size", "flow_scale", "flow_form", "terminal_target",
              "conditional", "full_batch", "clamp"},
             "dw");
  DWConfig dw = default_dw(algo);
  read_opt(j, "lambda_F", dw.lambda_F);
  read_opt(j, "lambda_K", dw.lambda_K);
  read_opt(j, "step_size", dw.step_size);
  read_opt(j, "batch_size", dw.batch_size);
  if (j.contains("flow_scale")) dw.flow_scale = parse_flow_scale(j.at("flow_scale").get<std::string>());
  if (j.contains("flow_form")) dw.flow_form = parse_flow_form(j.at("flow_form").get<std::string>());
  if (j.contains("terminal_target"))
    dw.terminal_target = parse_terminal_target(j.at("terminal_target").get<std::string>());
  read_opt(j, "conditional", dw.conditional);
  read_opt(j, "full_batch", dw.full_batch);
  read_opt(j, "clamp", dw.clamp);
  dw.validate();
  return dw;
}

json dw_json(const DWConfig &dw) {
  return {{"lambda_F", dw.lambda_F},
          {"lambda_K", dw.lambda_K},
          {"step_size", dw.step_size},
          {"batch_size", dw.batch_size},
          {"flow_scale", dw.flow_scale == FlowScale::kRaw ? "raw" : "batch-mean"},
          {"flow_form", dw.flow_form == FlowForm::kPerSample ? "per-sample" : "balance"},
          {"terminal_target", dw.terminal_target == TerminalTarget::kRestart ? "restart" : "absorbing"},
          {"conditional", dw.conditional},
          {"full_batch", dw.full_batch},
          {"clamp", dw.clamp}};
}

MethodSpec parse_method(const json &j) {
  check_keys(j, {"id", "algo", "weighting", "algo_params", "aw_eta", "aw_preset", "pf_percent", "target", "dw", "optdice"},
             "method");
  MethodSpec m;
  m.id = j.at("id").get<std::string>();
  m.algo.algo = parse_algo(j.at("algo").get<std::string>());
  m.weighting.scheme = parse_weighting(j.value("weighting", std::string("uniform")));
  if (j.contains("algo_params")) {
    const json &p = j.at("algo_params");
    check_keys(p,
               {"gamma", "alpha_cql", "tau_expectile", "beta_awr", "step_size", "batch_size", "steps", "eval_every",
                "eval_episodes"},
               "algo_params of " + m.id);
    read_opt(p, "gamma", m.algo.gamma);
    read_opt(p, "alpha_cql", m.algo.alpha_cql);
    read_opt(p, "tau_expectile", m.algo.tau_expectile);
    read_opt(p, "beta_awr", m.algo.beta_awr);
    read_opt(p, "step_size", m.algo.step_size);
    read_opt(p, "batch_size", m.algo.batch_size);
    read_opt(p, "steps", m.algo.steps);
    read_opt(p, "eval_every", m.algo.eval_every);
    read_opt(p, "eval_episodes", m.algo.eval_episodes);
  }
  m.algo.validate();
  if (j.contains("aw_eta") && j.contains("aw_preset")) throw ConfigError("method " + m.id + ": give aw_eta or aw_preset, not both");
  m.weighting.aw_eta = aw_temperature_preset(j.value("aw_preset", std::string("M")), to_string(m.algo.algo));
  read_opt(j, "aw_eta", m.weighting.aw_eta);
  read_opt(j, "pf_percent", m.weighting.pf_percent);
  if (j.contains("target")) m.weighting.target = parse_target(j.at("target").get<std::string>());
  m.weighting.dw = j.contains("dw") ? parse_dw(j.at("dw"), m.algo.algo) : default_dw(m.algo.algo);
  if (j.contains("optdice")) {
    const json &o = j.at("optdice");
    check_keys(o, {"alpha", "step_size", "steps"}, "optdice of " + m.id);
    read_opt(o, "alpha", m.weighting.optdice.alpha);
    read_opt(o, "step_size", m.weighting.optdice.step_size);
    read_opt(o, "steps", m.weighting.optdice.steps);
  }
  return m;
}

json method_json(const MethodSpec &m) {
  const AlgoConfig &a = m.algo;
  return {{"id", m.id},
          {"algo", to_string(a.algo)},
          {"weighting", to_string(m.weighting.scheme)},
          {"algo_params",
           {{"gamma", a.gamma},
            {"alpha_cql", a.alpha_cql},
            {"tau_expectile", a.tau_expectile},
            {"beta_awr", a.beta_awr},
            {"step_size", a.step_size},
            {"batch_size", a.batch_size},
            {"steps", a.steps},
            {"eval_every", a.eval_every},
            {"eval_episodes", a.eval_episodes}}},
          {"aw_eta", m.weighting.aw_eta},
          {"pf_percent", m.weighting.pf_percent},
          {"target", m.weighting.target == WeightTarget::kAll ? "all" : "reg-only"},
          {"dw", dw_json(m.weighting.dw)},
          {"optdice",
           {{"alpha", m.weighting.optdice.alpha},
            {"step_size", m.weighting.optdice.step_size},
            {"steps", m.weighting.optdice.steps}}}};
}

DatasetSpec parse_dataset(const json &j, const EnvSpec &env, const fs::path &base) {
  check_keys(j, {"id", "group", "path", "mix"}, "dataset");
  DatasetSpec d;
  d.id = j.at("id").get<std::string>();
  if (j.contains("path") == j.contains("mix")) throw ConfigError("dataset " + d.id + " needs exactly one of path, mix");
  if (j.contains("path")) {
    fs::path p = j.at("path").get<std::string>();
    if (p.is_relative()) p = base / p;
    d.path = p.lexically_normal().string();
    d.group = j.value("group", std::string("all"));
    return d;
  }
  const json &m = j.at("mix");
  check_keys(m, {"low", "high", "sigma", "mode", "budget", "seed"}, "mix of " + d.id);
  MixSpec mix;
  mix.low = parse_gen(m.at("low"), env);
  mix.high = parse_gen(m.at("high"), env);
  mix.sigma = m.at("sigma").get<double>();
  if (m.contains("mode")) mix.mode = parse_mix_mode(m.at("mode").get<std::string>());
  if (m.contains("budget") && !m.at("budget").is_null()) mix.budget = m.at("budget").get<std::size_t>();
  read_opt(m, "seed", mix.seed);
  d.mix = mix;
  d.group = j.value("group", to_string(mix.mode) + "/" + sigma_label(mix.sigma));
  return d;
}

json dataset_json(const DatasetSpec &d) {
  json j = {{"id", d.id}, {"group", d.group}};
  if (d.path) j["path"] = *d.path;
  if (d.mix) {
    const MixSpec &m = *d.mix;
    j["mix"] = {{"low", gen_json(m.low)},
                {"high", gen_json(m.high)},
                {"sigma", m.sigma},
                {"mode", to_string(m.mode)},
                {"budget", m.budget ? json(*m.budget) : json(nullptr)},
                {"seed", m.seed}};
  }
  return j;
}

std::string run_stem(const std::string &dataset, const std::string &method, std::uint64_t seed) {
  return dataset + "__" + method + "__s" + std::to_string(seed);
}

/// Writes through a temporary name so readers never see a partial file.
template <class F> void write_atomically(const fs::path &path, F &&body) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os = open_out(tmp);
    body(os);
    if (!os) throw ConfigError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string file_safe(std::string name) {
  for (char &c : name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_')) c = '_';
  return name;
}

std::vector<double> read_weight_csv(std::istream &is, int num_states, int num_actions) {
  std::string line;
  if (!std::getline(is, line) || line != "s,a,w") throw ConfigError("weight CSV must start with s,a,w");
  std::vector<double> table(static_cast<std::size_t>(num_states) * num_actions, 0.0);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    int s = 0;
    int a = 0;
    double w = 0.0;
    if (!(row >> s >> a >> w) || s < 0 || s >= num_states || a < 0 || a >= num_actions)
      throw ConfigError("malformed weight CSV row: " + line);
    table[static_cast<std::size_t>(s) * num_actions + a] = w;
  }
  return table;
}

} // namespace

GridWorld make_four_room(const EnvSpec &env) {
  return build_four_room(env.width, env.height, env.slip, env.gamma, env.horizon);
}

std::string env_name(const EnvSpec &env) {
  return "fourroom-" + std::to_string(env.width) + "x" + std::to_string(env.height) + "-slip" + format_double(env.slip);
}

Behavior parse_behavior(const std::string &name) {
  if (name == "random") return Behavior::kRandom;
  if (name == "expert") return Behavior::kExpert;
  if (name == "detour") return Behavior::kDetour;
  throw ConfigError("unknown behavior '" + name + "' (expected random, expert or detour)");
}

std::string to_string(Behavior behavior) {
  switch (behavior) {
  case Behavior::kRandom: return "random";
  case Behavior::kExpert: return "expert";
  case Behavior::kDetour: return "detour";
  }
  return "random";
}

TransitionDataset generate_four_room(const GenConfig &cfg) {
  if (cfg.n_trajectories < 1) throw ConfigError("need at least one trajectory");
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
  const GridWorld g = make_four_room(cfg.env);
  const TabularMDP &mdp = g.mdp;
  const ValueIterationResult vi = value_iteration(mdp, 1e-10);
  const TabularPolicy uniform = TabularPolicy::uniform(mdp.num_states, mdp.num_actions);

  DatasetMeta meta;
  meta.env_name = env_name(cfg.env);
  meta.num_states = mdp.num_states;
  meta.num_actions = mdp.num_actions;
  meta.gamma = mdp.gamma;
  meta.score_low = policy_value(mdp, uniform, mdp.gamma);
  meta.score_high = policy_value(mdp, vi.greedy, mdp.gamma);
  meta.curation = "fourroom-" + to_string(cfg.behavior);

  TabularPolicy policy = uniform;
  if (cfg.behavior == Behavior::kExpert) policy = epsilon_mix(vi.greedy, cfg.epsilon);
  if (cfg.behavior == Behavior::kDetour) policy = epsilon_mix(detour_policy(g), cfg.epsilon);

  std::vector<Trajectory> trajs;
  trajs.reserve(cfg.n_trajectories);
  if (cfg.behavior != Behavior::kRandom) {
    for (int k = 0; k < cfg.n_trajectories; ++k)
      trajs.push_back(rollout(mdp, policy, derive_seed(cfg.seed, k), mdp.horizon));
    return from_trajectories(meta, trajs);
  }

  const int shortest = shortest_path_length(mdp);
  const long long max_attempts = 10LL * cfg.n_trajectories;
  long long attempts = 0;
  int successes = 0;
  while (static_cast<int>(trajs.size()) < cfg.n_trajectories) {
    if (attempts >= max_attempts)
      throw ConfigError("rejection sampling exceeded " + std::to_string(max_attempts) +
                        " attempts; the horizon is probably misconfigured");
    Trajectory traj = rollout(mdp, policy, derive_seed(cfg.seed, static_cast<std::uint64_t>(attempts++)), mdp.horizon);
    const bool reached = traj.back().terminal;
    if (reached && static_cast<int>(traj.size()) <= shortest) continue;
    successes += reached ? 1 : 0;
    trajs.push_back(std::move(traj));
  }
  if (successes == 0) throw ConfigError("no kept trajectory reaches the goal; stitching is untestable");
  return from_trajectories(meta, trajs);
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (datasets.empty()) throw ConfigError("experiment needs at least one dataset");
  if (methods.empty()) throw ConfigError("experiment needs at least one method");
  std::set<std::string> ids;
  for (const MethodSpec &m : methods)
    if (!ids.insert(m.id).second) throw ConfigError("duplicate method id '" + m.id + "'");
  ids.clear();
  for (const DatasetSpec &d : datasets) {
    if (!ids.insert(d.id).second) throw ConfigError("duplicate dataset id '" + d.id + "'");
    if (d.path && !fs::exists(*d.path)) throw ConfigError("dataset file not found: " + *d.path);
  }
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ConfigError("duplicate seeds");
}

ExperimentConfig parse_experiment(const json &j, const std::string &base_dir) {
  check_keys(j, {"env", "datasets", "methods", "seeds", "output_dir"}, "experiment");
  ExperimentConfig cfg;
  if (j.contains("env")) cfg.env = parse_env(j.at("env"));
  for (const json &d : j.at("datasets")) cfg.datasets.push_back(parse_dataset(d, cfg.env, base_dir));
  for (const json &m : j.at("methods")) cfg.methods.push_back(parse_method(m));
  cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("output_dir")) {
    fs::path out = j.at("output_dir").get<std::string>();
    if (out.is_relative()) out = fs::path(base_dir) / out;
    cfg.output_dir = out.lexically_normal().string();
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment(const std::string &path) {
  std::ifstream is = open_in(path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
  const fs::path base = fs::path(path).parent_path();
  try {
    return parse_experiment(j, base.empty() ? "." : base.string());
  } catch (const json::exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

json to_json(const ExperimentConfig &cfg) {
  json j;
  j["env"] = env_json(cfg.env);
  j["datasets"] = json::array();
  for (const DatasetSpec &d : cfg.datasets) j["datasets"].push_back(dataset_json(d));
  j["methods"] = json::array();
  for (const MethodSpec &m : cfg.methods) j["methods"].push_back(method_json(m));
  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  return j;
}

std::string config_hash(const json &canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

TransitionDataset materialize(const DatasetSpec &spec, const EnvSpec &env) {
  if (spec.path) {
    TransitionDataset ds = load_dataset(*spec.path);
    if (ds.meta().env_name != env_name(env))
      throw ConfigError("dataset " + spec.id + " was built for " + ds.meta().env_name + ", not " + env_name(env));
    return ds;
  }
  const MixSpec &m = *spec.mix;
  return mix(generate_four_room(m.low), generate_four_room(m.high), m.sigma, m.mode, m.budget, m.seed);
}

bool ExperimentOutcome::all_ok() const {
  return std::all_of(runs.begin(), runs.end(), [](const RunRecord &r) { return r.ok; });
}

std::vector<double> effective_weights(const TransitionDataset &ds, const SamplerWeights &sampler,
                                      std::span<const double> multiplier_table) {
  const int A = ds.meta().num_actions;
  const std::vector<double> counts = pair_counts(ds);
  std::vector<double> mass(counts.size(), 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t pair = static_cast<std::size_t>(ds[i].s) * A + ds[i].a;
    mass[pair] += sampler.p()[i] * multiplier_table[pair];
  }
  double total = 0.0;
  for (double m : mass) total += m;
  if (!(total > 0.0)) throw NumericalError("weighted distribution has no mass");
  const double n = static_cast<double>(ds.size());
  std::vector<double> ratio(counts.size(), 0.0);
  for (std::size_t k = 0; k < counts.size(); ++k)
    if (counts[k] > 0.0) ratio[k] = (mass[k] / total) / (counts[k] / n);
  return ratio;
}

ExperimentOutcome run_experiment(const ExperimentConfig &cfg, int jobs) {
  cfg.validate();
  const fs::path root = cfg.output_dir;
  fs::create_directories(root / "datasets");
  fs::create_directories(root / "runs");
  const json canonical = to_json(cfg);
  const GridWorld world = make_four_room(cfg.env);

  std::vector<TransitionDataset> data;
  for (const DatasetSpec &spec : cfg.datasets) {
    data.push_back(materialize(spec, cfg.env));
    write_atomically(root / "datasets" / (spec.id + ".txt"), [&](std::ostream &os) { write_dataset(os, data.back()); });
  }

  struct Cell {
    std::size_t dataset, method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t d = 0; d < cfg.datasets.size(); ++d)
    for (std::size_t m = 0; m < cfg.methods.size(); ++m)
      for (std::uint64_t seed : cfg.seeds) cells.push_back({d, m, seed});

  ExperimentOutcome outcome;
  outcome.runs.resize(cells.size());
  const int threads = jobs > 0 ? jobs : 1;
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(cells.size()); ++k) {
    const Cell &cell = cells[k];
    const DatasetSpec &dspec = cfg.datasets[cell.dataset];
    const MethodSpec &method = cfg.methods[cell.method];
    const TransitionDataset &ds = data[cell.dataset];
    RunRecord &rec = outcome.runs[k];
    rec.dataset = dspec.id;
    rec.group = dspec.group;
    rec.method = method.id;
    rec.weighting = to_string(method.weighting.scheme);
    rec.seed = cell.seed;
    rec.score_low = ds.meta().score_low;
    rec.score_high = ds.meta().score_high;
    const std::string stem = run_stem(dspec.id, method.id, cell.seed);
    rec.file = "runs/" + stem + ".csv";
    const fs::path base = root / "runs" / stem;
    try {
      AlgoConfig algo = method.algo;
      algo.seed = cell.seed;
      TrainOutput out = train(ds, world.mdp, algo, method.weighting);
      out.run.dataset_id = dspec.id;
      out.run.method_id = method.id;
      const std::vector<double> eff = effective_weights(ds, rl_sampler(ds, method.weighting), out.multipliers);
      write_atomically(fs::path(base) += ".policy.csv", [&](std::ostream &os) { write_policy_csv(os, out.policy); });
      write_atomically(fs::path(base) += ".weights.csv",
                       [&](std::ostream &os) { write_weight_csv(os, eff, ds.meta().num_states, ds.meta().num_actions); });
      write_atomically(fs::path(base) += ".csv", [&](std::ostream &os) { write_run_csv(os, out.run); });
      rec.final_score = out.run.final_score;
      rec.ok = true;
    } catch (const std::exception &e) {
      rec.ok = false;
      rec.error = e.what();
      std::error_code ignored;
      for (const char *suffix : {".csv", ".policy.csv", ".weights.csv"}) {
        fs::remove(fs::path(base) += suffix, ignored);
        fs::remove((fs::path(base) += suffix) += ".tmp", ignored);
      }
    }
  }

  json manifest;
  manifest["version"] = kVersion;
  manifest["config_hash"] = config_hash(canonical);
  manifest["config"] = canonical;
  manifest["runs"] = json::array();
  for (const RunRecord &r : outcome.runs) {
    json row = {{"dataset", r.dataset}, {"group", r.group},         {"method", r.method},
                {"weighting", r.weighting}, {"seed", r.seed},       {"file", r.file},
                {"ok", r.ok},               {"score_low", r.score_low}, {"score_high", r.score_high}};
    if (r.ok) row["final_score"] = r.final_score;
    else row["error"] = r.error;
    manifest["runs"].push_back(row);
  }
  write_atomically(root / "manifest.json", [&](std::ostream &os) { os << manifest.dump(2) << '\n'; });
  return outcome;
}

namespace {

json read_manifest_json(const std::string &run_dir) {
  const fs::path path = fs::path(run_dir) / "manifest.json";
  if (!fs::exists(path)) throw ConfigError("no manifest.json in " + run_dir + " (empty or not a run directory)");
  std::ifstream is = open_in(path);
  try {
    return json::parse(is);
  } catch (const json::exception &e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

} // namespace

std::vector<RunRecord> read_manifest(const std::string &run_dir) {
  const json manifest = read_manifest_json(run_dir);
  std::vector<RunRecord> out;
  for (const json &row : manifest.at("runs")) {
    RunRecord r;
    r.dataset = row.at("dataset").get<std::string>();
    r.group = row.at("group").get<std::string>();
    r.method = row.at("method").get<std::string>();
    r.weighting = row.at("weighting").get<std::string>();
    r.seed = row.at("seed").get<std::uint64_t>();
    r.file = row.at("file").get<std::string>();
    r.ok = row.at("ok").get<bool>();
    r.score_low = row.at("score_low").get<double>();
    r.score_high = row.at("score_high").get<double>();
    if (r.ok) r.final_score = row.at("final_score").get<double>();
    else r.error = row.value("error", std::string());
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ConfigError("manifest in " + run_dir + " lists no runs");
  return out;
}

AggregateReport write_reports(const std::string &run_dir, const std::string &out_dir, int n_resamples,
                              std::uint64_t seed) {
  std::vector<RunResult> all;
  std::map<std::string, std::vector<RunResult>> by_group;
  for (const RunRecord &r : read_manifest(run_dir)) {
    if (!r.ok) continue;
    std::ifstream is = open_in(fs::path(run_dir) / r.file);
    RunResult run = read_run_csv(is);
    run.dataset_id = r.dataset;
    run.method_id = r.method;
    run.score_low = r.score_low;
    run.score_high = r.score_high;
    run.finalize();
    by_group[r.group].push_back(run);
    all.push_back(std::move(run));
  }
  if (all.empty()) throw ConfigError("no successful runs in " + run_dir);

  fs::create_directories(out_dir);
  const AggregateReport pooled = aggregate(all, n_resamples, seed);
  write_atomically(fs::path(out_dir) / "report.csv", [&](std::ostream &os) { write_report_csv(os, pooled); });
  std::ostringstream plot;
  for (const auto &[group, runs] : by_group) {
    const AggregateReport report = aggregate(runs, n_resamples, seed);
    write_atomically(fs::path(out_dir) / ("report_" + file_safe(group) + ".csv"),
                     [&](std::ostream &os) { write_report_csv(os, report); });
    write_plot_csv(plot, report, group);
  }
  write_atomically(fs::path(out_dir) / "plot.csv", [&](std::ostream &os) { os << "group,method,stat,value\n" << plot.str(); });
  return pooled;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ConfigError("total variation of distributions with different supports");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

std::vector<DistributionColumn> four_room_distributions(const std::string &run_dir) {
  const json manifest = read_manifest_json(run_dir);
  const ExperimentConfig cfg = parse_experiment(manifest.at("config"), run_dir);
  const std::vector<RunRecord> runs = read_manifest(run_dir);
  const DatasetSpec &dspec = cfg.datasets.front();
  const std::uint64_t seed = cfg.seeds.front();
  const TransitionDataset ds = load_dataset((fs::path(run_dir) / "datasets" / (dspec.id + ".txt")).string());
  const GridWorld world = make_four_room(cfg.env);
  const TabularMDP &mdp = world.mdp;
  const int A = mdp.num_actions;

  std::set<std::string> missing = {"dw", "aw", "pf"};
  for (const RunRecord &r : runs)
    if (r.ok && r.dataset == dspec.id && r.seed == seed) missing.erase(r.weighting == "dw-aw" ? "dw" : r.weighting);
  if (!missing.empty()) {
    std::string list;
    for (const std::string &m : missing) list += (list.empty() ? "" : ", ") + m;
    throw ConfigError("run directory lacks successful runs for weighting(s): " + list);
  }

  const std::vector<double> counts = pair_counts(ds);
  const double n = static_cast<double>(ds.size());
  auto column = [&](std::string name, std::vector<double> d) {
    DistributionColumn c{std::move(name), std::move(d), 0.0, 0.0};
    for (std::size_t k = 0; k < c.d.size(); ++k) c.J += c.d[k] * mdp.reward[k];
    return c;
  };

  std::vector<DistributionColumn> columns;
  std::vector<double> behavior(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) behavior[k] = counts[k] / n;
  columns.push_back(column("behavior", behavior));
  const ValueIterationResult vi = value_iteration(mdp, 1e-10);
  columns.push_back(column("optimal", stationary_distribution(mdp, vi.greedy, 1.0).d));

  for (const RunRecord &r : runs) {
    if (!r.ok || r.dataset != dspec.id || r.seed != seed || r.weighting == "uniform") continue;
    fs::path wpath = fs::path(run_dir) / r.file;
    wpath.replace_extension(".weights.csv");
    std::ifstream is = open_in(wpath);
    const std::vector<double> w = read_weight_csv(is, mdp.num_states, A);
    std::vector<double> d(counts.size());
    double total = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k) total += d[k] = behavior[k] * w[k];
    for (double &v : d) v /= total;
    columns.push_back(column(r.method, std::move(d)));
  }
  const std::vector<double> optimal = columns[1].d;
  for (DistributionColumn &c : columns) c.tv_to_optimal = total_variation(c.d, optimal);
  return columns;
}

void write_distributions_csv(std::ostream &os, const std::vector<DistributionColumn> &columns, int num_actions) {
  os << "method,s,a,prob\n";
  for (const DistributionColumn &c : columns)
    for (std::size_t k = 0; k < c.d.size(); ++k)
      os << c.name << ',' << k / num_actions << ',' << k % num_actions << ',' << format_double(c.d[k]) << '\n';
}

void write_distribution_summary_csv(std::ostream &os, const std::vector<DistributionColumn> &columns) {
  os << "method,J,tv_to_optimal\n";
  for (const DistributionColumn &c : columns)
    os << c.name << ',' << format_double(c.J) << ',' << format_double(c.tv_to_optimal) << '\n';
}

} // namespace dwrl
