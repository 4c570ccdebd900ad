#include "dwrl/eval.hpp"
#include "dwrl/kernels.hpp"
#include "dwrl/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

namespace dwrl {

void RunResult::finalize() { final_score = trace.empty() ? 0.0 : dwrl::final_score(trace); }

double mean(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("mean of an empty sample");
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double iqm(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("iqm of an empty sample");
  std::vector<double> sorted(xs.begin(), xs.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t cut = sorted.size() / 4;
  return mean(std::span<const double>(sorted).subspan(cut, sorted.size() - 2 * cut));
}

Interval bootstrap_ci(std::span<const double> xs, const std::function<double(std::span<const double>)> &stat,
                      int n_resamples, double level, std::uint64_t seed) {
  if (xs.empty()) throw ConfigError("bootstrap of an empty sample");
  if (n_resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const std::vector<double> reps = kernels::bootstrap_parallel(xs, stat, n_resamples, seed);
  const double tail = 50.0 * (1.0 - level);
  Interval out{percentile(reps, tail), percentile(reps, 100.0 - tail)};
  // A statistic that is not the resample mean (e.g. IQM) can put its point
  // estimate outside a narrow percentile interval; widen to contain it.
  const double point = stat(xs);
  out.lo = std::min(out.lo, point);
  out.hi = std::max(out.hi, point);
  return out;
}

double final_score(std::span<const TracePoint> trace, int last_k) {
  if (trace.empty()) throw ConfigError("final_score of an empty trace");
  if (last_k < 1) throw ConfigError("last_k must be >= 1");
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(last_k), trace.size());
  double acc = 0.0;
  for (std::size_t i = trace.size() - k; i < trace.size(); ++i) acc += trace[i].mean_return;
  return acc / static_cast<double>(k);
}

AggregateReport aggregate(std::span<const RunResult> results, int n_resamples, std::uint64_t seed) {
  if (results.empty()) throw ConfigError("nothing to aggregate");
  std::map<std::string, std::vector<const RunResult *>> by_method;
  for (const RunResult &r : results) by_method[r.method_id].push_back(&r);

  std::optional<std::set<std::string>> datasets;
  for (const auto &[method, runs] : by_method) {
    std::set<std::string> ids;
    for (const RunResult *r : runs) ids.insert(r->dataset_id);
    if (!datasets) {
      datasets = std::move(ids);
    } else if (ids != *datasets) {
      throw ConfigError("method '" + method + "' was run on a different set of datasets");
    }
  }

  AggregateReport report;
  for (const auto &[method, runs] : by_method) {
    std::vector<double> scores;
    for (const RunResult *r : runs) {
      DatasetMeta anchors;
      anchors.score_low = r->score_low;
      anchors.score_high = r->score_high;
      scores.push_back(normalized_return(r->final_score, anchors));
    }
    const auto stat = [](std::span<const double> xs) { return iqm(xs); };
    const Interval ci = bootstrap_ci(scores, stat, n_resamples, 0.95, seed);
    report.methods.push_back({method, iqm(scores), ci.lo, ci.hi, scores.size()});
    report.cells.push_back(std::move(scores));
  }
  return report;
}

void write_run_csv(std::ostream &os, const RunResult &run) {
  os << "seed,step,mean_return_20ep\n";
  for (const TracePoint &p : run.trace) os << run.seed << ',' << p.step << ',' << format_double(p.mean_return) << '\n';
}

RunResult read_run_csv(std::istream &is) {
  std::string line;
  if (!std::getline(is, line) || line != "seed,step,mean_return_20ep")
    throw ConfigError("run CSV must start with 'seed,step,mean_return_20ep'");
  RunResult run;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string seed, step, value;
    if (!std::getline(row, seed, ',') || !std::getline(row, step, ',') || !std::getline(row, value))
      throw ConfigError("malformed run CSV row " + std::to_string(lineno));
    try {
      run.seed = std::stoull(seed);
      const int s = std::stoi(step);
      if (!run.trace.empty() && s <= run.trace.back().step)
        throw ConfigError("run CSV steps must increase (row " + std::to_string(lineno) + ")");
      run.trace.push_back({s, std::stod(value)});
    } catch (const std::logic_error &) {
      throw ConfigError("malformed run CSV row " + std::to_string(lineno));
    }
  }
  run.finalize();
  return run;
}

void write_report_csv(std::ostream &os, const AggregateReport &report) {
  os << "method,iqm,ci_lo,ci_hi,n\n";
  for (const MethodSummary &m : report.methods)
    os << m.method << ',' << format_double(m.iqm) << ',' << format_double(m.ci_lo) << ',' << format_double(m.ci_hi)
       << ',' << m.n << '\n';
}

void write_plot_csv(std::ostream &os, const AggregateReport &report, const std::string &group) {
  for (std::size_t k = 0; k < report.methods.size(); ++k) {
    const MethodSummary &m = report.methods[k];
    for (double v : report.cells[k]) os << group << ',' << m.method << ",cell," << format_double(v) << '\n';
    os << group << ',' << m.method << ",iqm," << format_double(m.iqm) << '\n';
    os << group << ',' << m.method << ",ci_lo," << format_double(m.ci_lo) << '\n';
    os << group << ',' << m.method << ",ci_hi," << format_double(m.ci_hi) << '\n';
  }
}

} // namespace dwrl
