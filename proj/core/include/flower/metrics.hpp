#pragma once

#include <map>
#include <vector>

namespace flower::metrics {

// Tie-corrected Kendall rank correlation (tau-b) over all pairs. Returns NaN
// when either vector is constant (the statistic is undefined).
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

// Fraction of the true top-K items recovered by the predicted top-K, with
// K = max(1, round(k_percent/100 * n)). Ties are broken by stable index
// order.
double precision_at_k(const std::vector<double>& preds, const std::vector<double>& labels,
                      double k_percent);

struct LatencyMetrics {
  double mape = 0.0;
  std::map<double, double> acc;  // delta -> fraction within relative error delta
};

// Labels must be strictly positive.
LatencyMetrics latency_metrics(const std::vector<double>& preds,
                               const std::vector<double>& labels,
                               const std::vector<double>& deltas);

}  // namespace flower::metrics
