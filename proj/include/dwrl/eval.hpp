#pragma once

#include "dwrl/common.hpp"
#include "dwrl/dataset.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace dwrl {

struct TracePoint {
  int step = 0;
  double mean_return = 0.0;
};

struct RunResult {
  std::string dataset_id;
  std::string method_id;
  std::uint64_t seed = 0;
  std::vector<TracePoint> trace;
  double final_score = 0.0;
  /// Normalization anchors of the dataset the run trained on.
  double score_low = 0.0;
  double score_high = 1.0;

  /// Recomputes final_score from the trace (last 10 rounds).
  void finalize();
};

struct MethodSummary {
  std::string method;
  double iqm = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  std::size_t n = 0;
};

struct AggregateReport {
  std::vector<MethodSummary> methods;
  /// Normalized per-cell scores, grouped like `methods`.
  std::vector<std::vector<double>> cells;
};

/// Interquartile mean: drops floor(n/4) values from each end after sorting.
double iqm(std::span<const double> xs);

double mean(std::span<const double> xs);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap interval of `stat` at the given two-sided level.
Interval bootstrap_ci(std::span<const double> xs, const std::function<double(std::span<const double>)> &stat,
                      int n_resamples = 2000, double level = 0.95, std::uint64_t seed = 0);

/// Mean of the last min(k, size) trace returns.
double final_score(std::span<const TracePoint> trace, int last_k = 10);

/// Normalizes every run's final score with its anchors and summarizes each
/// method by IQM and bootstrap CI. Methods must cover the same dataset ids
/// (one cell per dataset x seed).
AggregateReport aggregate(std::span<const RunResult> results, int n_resamples = 2000, std::uint64_t seed = 0);

/// `seed,step,mean_return_20ep` rows.
void write_run_csv(std::ostream &os, const RunResult &run);
/// Reads a run CSV; ids and anchors come from the caller.
RunResult read_run_csv(std::istream &is);

/// `method,iqm,ci_lo,ci_hi,n`.
void write_report_csv(std::ostream &os, const AggregateReport &report);

/// Long format `group,method,stat,value` for plotting: one row per cell
/// score plus the iqm/ci_lo/ci_hi rows of each method.
void write_plot_csv(std::ostream &os, const AggregateReport &report, const std::string &group);

} // namespace dwrl
