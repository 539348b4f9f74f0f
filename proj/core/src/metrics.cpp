#include "flower/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace flower::metrics {

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw std::invalid_argument("kendall_tau: need at least 2 items");
  long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) {
        ++ties_a;
        ++ties_b;
      } else if (da == 0.0) {
        ++ties_a;
      } else if (db == 0.0) {
        ++ties_b;
      } else if ((da > 0.0) == (db > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n0 = 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1.0);
  const double denom_a = n0 - static_cast<double>(ties_a);
  const double denom_b = n0 - static_cast<double>(ties_b);
  if (denom_a <= 0.0 || denom_b <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return static_cast<double>(concordant - discordant) / std::sqrt(denom_a * denom_b);
}

namespace {

// Indices of the k largest values, stable in index order among exact ties.
std::vector<std::size_t> top_k_indices(const std::vector<double>& v, std::size_t k) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t x, std::size_t y) { return v[x] > v[y]; });
  idx.resize(k);
  return idx;
}

}  // namespace

double precision_at_k(const std::vector<double>& preds, const std::vector<double>& labels,
                      double k_percent) {
  if (preds.empty()) throw std::invalid_argument("precision_at_k: empty input");
  if (preds.size() != labels.size())
    throw std::invalid_argument("precision_at_k: length mismatch");
  if (k_percent <= 0.0 || k_percent > 100.0)
    throw std::invalid_argument("precision_at_k: k_percent must be in (0, 100]");
  const std::size_t n = preds.size();
  const std::size_t k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(k_percent / 100.0 * static_cast<double>(n))));
  const auto top_pred = top_k_indices(preds, k);
  const auto top_true = top_k_indices(labels, k);
  std::vector<char> is_true_top(n, 0);
  for (std::size_t i : top_true) is_true_top[i] = 1;
  std::size_t hits = 0;
  for (std::size_t i : top_pred) hits += is_true_top[i];
  return static_cast<double>(hits) / static_cast<double>(k);
}

LatencyMetrics latency_metrics(const std::vector<double>& preds,
                               const std::vector<double>& labels,
                               const std::vector<double>& deltas) {
  if (preds.size() != labels.size())
    throw std::invalid_argument("latency_metrics: length mismatch");
  if (preds.empty()) throw std::invalid_argument("latency_metrics: empty input");
  LatencyMetrics m;
  std::vector<double> rel(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == 0.0)
      throw std::invalid_argument("latency_metrics: zero label at index " + std::to_string(i));
    rel[i] = std::abs(preds[i] - labels[i]) / std::abs(labels[i]);
    m.mape += rel[i];
  }
  m.mape /= static_cast<double>(preds.size());
  for (double d : deltas) {
    std::size_t within = 0;
    for (double r : rel) within += r <= d ? 1 : 0;
    m.acc[d] = static_cast<double>(within) / static_cast<double>(preds.size());
  }
  return m;
}

}  // namespace flower::metrics
