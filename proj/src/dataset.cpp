#include "dwrl/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace dwrl {

TransitionDataset::TransitionDataset(DatasetMeta meta, std::vector<TransitionRecord> records)
    : meta_(std::move(meta)), records_(std::move(records)) {
  if (meta_.num_states <= 0 || meta_.num_actions <= 0) throw ConfigError("dataset meta needs positive state/action counts");
  if (!(meta_.gamma > 0.0 && meta_.gamma <= 1.0)) throw ConfigError("dataset gamma must lie in (0, 1]");
  std::vector<int> seen_ids;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const TransitionRecord &rec = records_[i];
    if (rec.s < 0 || rec.s >= meta_.num_states || rec.s_next < 0 || rec.s_next >= meta_.num_states)
      throw ConfigError("record state id out of range at line " + std::to_string(i));
    if (rec.a < 0 || rec.a >= meta_.num_actions) throw ConfigError("record action id out of range at line " + std::to_string(i));
    if (rec.terminal && rec.timeout) throw ConfigError("record is both terminal and timeout at line " + std::to_string(i));
    if (!std::isfinite(rec.r)) throw ConfigError("non-finite reward at line " + std::to_string(i));
    const bool starts_block = i == 0 || records_[i - 1].traj_id != rec.traj_id;
    if (starts_block) {
      if (rec.t != 0) throw ConfigError("trajectory " + std::to_string(rec.traj_id) + " does not start at t=0");
      seen_ids.push_back(rec.traj_id);
      spans_.push_back({i, i + 1});
    } else {
      if (rec.t != records_[i - 1].t + 1)
        throw ConfigError("trajectory " + std::to_string(rec.traj_id) + " has non-consecutive timesteps");
      spans_.back().end = i + 1;
    }
    traj_of_record_.push_back(static_cast<int>(spans_.size()) - 1);
  }
  std::sort(seen_ids.begin(), seen_ids.end());
  if (std::adjacent_find(seen_ids.begin(), seen_ids.end()) != seen_ids.end())
    throw ConfigError("trajectory ids are not contiguous blocks");
}

double trajectory_return(std::span<const TransitionRecord> traj, double gamma) {
  double g = 0.0;
  double discount = 1.0;
  for (const TransitionRecord &rec : traj) {
    g += discount * rec.r;
    discount *= gamma;
  }
  return g;
}

std::vector<TrajectorySummary> summarize(const TransitionDataset &ds) {
  std::vector<TrajectorySummary> out;
  out.reserve(ds.num_trajectories());
  for (std::size_t k = 0; k < ds.num_trajectories(); ++k) {
    const auto traj = ds.trajectory(k);
    out.push_back({traj.front().traj_id, static_cast<int>(traj.size()), trajectory_return(traj, ds.meta().gamma),
                   trajectory_return(traj, 1.0), traj.front().s});
  }
  return out;
}

TransitionDataset from_trajectories(DatasetMeta meta, std::span<const Trajectory> trajectories) {
  std::vector<TransitionRecord> records;
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    int t = 0;
    for (const Step &step : trajectories[k])
      records.push_back({static_cast<int>(k), t++, step.s, step.a, step.r, step.s_next, step.terminal, step.timeout});
  }
  return {std::move(meta), std::move(records)};
}

TransitionDataset collect(const TabularMDP &mdp, const TabularPolicy &policy, int n_trajectories, std::uint64_t seed,
                          std::string env_name) {
  if (n_trajectories < 1) throw ConfigError("collect needs n_trajectories >= 1");
  std::vector<Trajectory> trajs;
  trajs.reserve(n_trajectories);
  for (int k = 0; k < n_trajectories; ++k) trajs.push_back(rollout(mdp, policy, derive_seed(seed, k), mdp.horizon));
  DatasetMeta meta;
  meta.env_name = std::move(env_name);
  meta.num_states = mdp.num_states;
  meta.num_actions = mdp.num_actions;
  meta.gamma = mdp.gamma;
  return from_trajectories(std::move(meta), trajs);
}

MixMode parse_mix_mode(const std::string &name) {
  if (name == "full") return MixMode::kFull;
  if (name == "diverse") return MixMode::kDiverse;
  if (name == "small") return MixMode::kSmall;
  throw ConfigError("unknown mix mode '" + name + "' (expected full, diverse or small)");
}

std::string to_string(MixMode mode) {
  switch (mode) {
  case MixMode::kFull: return "full";
  case MixMode::kDiverse: return "diverse";
  case MixMode::kSmall: return "small";
  }
  return "full";
}

TransitionDataset mix(const TransitionDataset &low, const TransitionDataset &high, double sigma, MixMode mode,
                      std::optional<std::size_t> budget, std::uint64_t seed) {
  if (!(sigma > 0.0 && sigma < 1.0)) throw ConfigError("sigma must lie in (0, 1)");
  const DatasetMeta &lm = low.meta();
  const DatasetMeta &hm = high.meta();
  if (lm.env_name != hm.env_name || lm.num_states != hm.num_states || lm.num_actions != hm.num_actions ||
      lm.gamma != hm.gamma)
    throw ConfigError("mixed datasets must share environment meta");
  if (mode == MixMode::kSmall && !budget) throw ConfigError("small mode needs a transition budget");

  const auto n_low = static_cast<std::size_t>(std::llround((1.0 - sigma) * static_cast<double>(low.num_trajectories())));
  const auto n_high = static_cast<std::size_t>(std::llround(sigma * static_cast<double>(high.num_trajectories())));
  if (n_low == 0 || n_high == 0)
    throw ConfigError("insufficient source trajectories for sigma=" + format_double(sigma));

  Rng rng(seed);
  auto pick = [&rng](const TransitionDataset &src, std::size_t n) {
    std::vector<std::size_t> idx(src.num_trajectories());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_in_place(idx, rng);
    idx.resize(n);
    return idx;
  };
  std::vector<std::span<const TransitionRecord>> chosen;
  for (std::size_t k : pick(low, n_low)) chosen.push_back(low.trajectory(k));
  for (std::size_t k : pick(high, n_high)) chosen.push_back(high.trajectory(k));
  shuffle_in_place(chosen, rng);

  if (mode == MixMode::kDiverse) {
    for (auto &traj : chosen) {
      const std::size_t len = 10 + uniform_index(rng, 41);
      const std::size_t keep = std::min(len, traj.size());
      const std::size_t begin = uniform_index(rng, traj.size() - keep + 1);
      traj = traj.subspan(begin, keep);
    }
  }

  std::vector<TransitionRecord> records;
  int id = 0;
  for (const auto &traj : chosen) {
    if (mode == MixMode::kSmall && records.size() + traj.size() > *budget) break;
    for (std::size_t t = 0; t < traj.size(); ++t) {
      TransitionRecord rec = traj[t];
      rec.traj_id = id;
      rec.t = static_cast<int>(t);
      // A cut segment ends by truncation, not by reaching a terminal state.
      if (mode == MixMode::kDiverse && t + 1 == traj.size() && !rec.terminal) rec.timeout = true;
      records.push_back(rec);
    }
    ++id;
  }
  if (records.empty()) throw ConfigError("budget too small to hold a single trajectory");

  DatasetMeta meta = lm;
  meta.curation = "mix-" + to_string(mode) + "-sigma" + format_double(sigma);
  return {std::move(meta), std::move(records)};
}

namespace {

std::vector<double> returns_of(const TransitionDataset &ds, bool discounted) {
  if (ds.num_trajectories() == 0) throw ConfigError("dataset has no trajectories");
  std::vector<double> g;
  g.reserve(ds.num_trajectories());
  const double gamma = discounted ? ds.meta().gamma : 1.0;
  for (std::size_t k = 0; k < ds.num_trajectories(); ++k) g.push_back(trajectory_return(ds.trajectory(k), gamma));
  return g;
}

} // namespace

double rpsv(const TransitionDataset &ds, bool discounted) {
  const std::vector<double> g = returns_of(ds, discounted);
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= static_cast<double>(g.size());
  double acc = 0.0;
  for (double v : g) {
    const double pos = std::max(v - mean, 0.0);
    acc += pos * pos;
  }
  return acc / static_cast<double>(g.size());
}

double dataset_mean_return(const TransitionDataset &ds, bool discounted) {
  const std::vector<double> g = returns_of(ds, discounted);
  double mean = 0.0;
  for (double v : g) mean += v;
  return mean / static_cast<double>(g.size());
}

double mean_step_reward(const TransitionDataset &ds) {
  if (ds.size() == 0) throw ConfigError("dataset is empty");
  double total = 0.0;
  for (const auto &rec : ds.records()) total += rec.r;
  return total / static_cast<double>(ds.size());
}

double normalized_return(double score, const DatasetMeta &meta) {
  if (!(meta.score_high > meta.score_low)) throw ConfigError("normalization anchors need score_high > score_low");
  return (score - meta.score_low) / (meta.score_high - meta.score_low);
}

std::vector<std::size_t> return_histogram(const TransitionDataset &ds, int bins) {
  if (bins < 1) throw ConfigError("histogram needs bins >= 1");
  const std::vector<double> g = returns_of(ds, true);
  double lo = ds.meta().score_low;
  double hi = ds.meta().score_high;
  if (!(hi > lo)) {
    lo = *std::min_element(g.begin(), g.end());
    hi = *std::max_element(g.begin(), g.end());
  }
  std::vector<std::size_t> counts(bins, 0);
  for (double v : g) {
    const double x = hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.0;
    const int b = std::min(bins - 1, static_cast<int>(x * bins));
    ++counts[b];
  }
  return counts;
}

std::vector<double> pair_counts(const TransitionDataset &ds) {
  std::vector<double> n(static_cast<std::size_t>(ds.meta().num_states) * ds.meta().num_actions, 0.0);
  for (const auto &rec : ds.records()) n[static_cast<std::size_t>(rec.s) * ds.meta().num_actions + rec.a] += 1.0;
  return n;
}

TabularPolicy empirical_policy(const TransitionDataset &ds) {
  const int S = ds.meta().num_states;
  const int A = ds.meta().num_actions;
  const std::vector<double> n = pair_counts(ds);
  TabularPolicy pi = TabularPolicy::uniform(S, A);
  for (int s = 0; s < S; ++s) {
    double total = 0.0;
    for (int a = 0; a < A; ++a) total += n[static_cast<std::size_t>(s) * A + a];
    if (total == 0.0) continue;
    for (int a = 0; a < A; ++a) pi(s, a) = n[static_cast<std::size_t>(s) * A + a] / total;
  }
  return pi;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

double parse_double(const std::string &text, const std::string &what) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw ConfigError("cannot parse " + what + ": '" + text + "'");
  return v;
}

int parse_int(const std::string &text, const std::string &what) {
  int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) throw ConfigError("cannot parse " + what + ": '" + text + "'");
  return v;
}

bool parse_flag(const std::string &text, const std::string &what) {
  if (text == "0") return false;
  if (text == "1") return true;
  throw ConfigError("cannot parse " + what + ": '" + text + "'");
}

void check_token(const std::string &value, const char *key) {
  if (value.empty() || value.find_first_of(" \t\n=") != std::string::npos)
    throw ConfigError(std::string("meta value for ") + key + " must be a non-empty token without spaces or '='");
}

constexpr const char *kHeaderTag = "#dwrl-dataset";

} // namespace

void write_dataset(std::ostream &os, const TransitionDataset &ds) {
  const DatasetMeta &m = ds.meta();
  check_token(m.env_name, "env");
  check_token(m.curation, "curation");
  os << kHeaderTag << " env=" << m.env_name << " num_states=" << m.num_states << " num_actions=" << m.num_actions
     << " gamma=" << format_double(m.gamma) << " score_low=" << format_double(m.score_low)
     << " score_high=" << format_double(m.score_high) << " curation=" << m.curation << '\n';
  for (const auto &rec : ds.records()) {
    os << rec.traj_id << ' ' << rec.t << ' ' << rec.s << ' ' << rec.a << ' ' << format_double(rec.r) << ' '
       << rec.s_next << ' ' << (rec.terminal ? 1 : 0) << ' ' << (rec.timeout ? 1 : 0) << '\n';
  }
}

TransitionDataset read_dataset(std::istream &is) {
  std::string line;
  if (!std::getline(is, line)) throw ConfigError("dataset file is empty");
  std::istringstream header(line);
  std::string tag;
  header >> tag;
  if (tag != kHeaderTag) throw ConfigError("missing '#dwrl-dataset' header");
  std::map<std::string, std::string> kv;
  for (std::string item; header >> item;) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed header item '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&kv](const char *key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError(std::string("header is missing '") + key + "'");
    return it->second;
  };
  DatasetMeta meta;
  meta.env_name = get("env");
  meta.num_states = parse_int(get("num_states"), "num_states");
  meta.num_actions = parse_int(get("num_actions"), "num_actions");
  meta.gamma = parse_double(get("gamma"), "gamma");
  meta.score_low = parse_double(get("score_low"), "score_low");
  meta.score_high = parse_double(get("score_high"), "score_high");
  meta.curation = get("curation");

  std::vector<TransitionRecord> records;
  std::vector<std::string> fields;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    fields.clear();
    std::istringstream ls(line);
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.size() != 8) throw ConfigError("line " + std::to_string(line_no) + ": expected 8 fields");
    const std::string where = "line " + std::to_string(line_no);
    records.push_back({parse_int(fields[0], where), parse_int(fields[1], where), parse_int(fields[2], where),
                       parse_int(fields[3], where), parse_double(fields[4], where), parse_int(fields[5], where),
                       parse_flag(fields[6], where), parse_flag(fields[7], where)});
  }
  return {std::move(meta), std::move(records)};
}

void save_dataset(const std::string &path, const TransitionDataset &ds) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  write_dataset(os, ds);
}

TransitionDataset load_dataset(const std::string &path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

} // namespace dwrl
