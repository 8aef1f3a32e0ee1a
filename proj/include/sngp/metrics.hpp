#pragma once

// Discrimination and calibration metrics plus seed-level aggregation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sngp/error.hpp"
#include "sngp/matrix.hpp"

namespace sngp::metrics {

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

namespace detail {
inline void require_rows(const Matrix& probs, std::span<const int> labels, const char* who) {
  if (probs.rows() != labels.size()) throw InvalidArgument(std::string(who) + ": length mismatch");
}
}  // namespace detail

inline double accuracy(const Matrix& probs, std::span<const int> labels) {
  detail::require_rows(probs, labels, "accuracy");
  if (labels.empty()) throw InvalidArgument("accuracy: empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (static_cast<int>(argmax(probs.row(i))) == labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Unweighted mean of per-class F1. A class absent from both predictions and
/// labels scores 1; any other zero denominator scores 0.
inline double f1_macro(const Matrix& probs, std::span<const int> labels, std::size_t num_classes) {
  detail::require_rows(probs, labels, "f1_macro");
  if (num_classes < 2) throw InvalidArgument("f1_macro: need at least 2 classes");
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw InvalidArgument("f1_macro: label outside [0, K)");
    const std::size_t pred = argmax(probs.row(i));
    if (pred == static_cast<std::size_t>(y)) {
      ++tp[pred];
    } else {
      ++fp[pred];
      ++fn[static_cast<std::size_t>(y)];
    }
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (tp[c] + fp[c] == 0 && tp[c] + fn[c] == 0) sum += 1.0;
    else if (denom > 0) sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return sum / static_cast<double>(num_classes);
}

/// Bin b covers (b/n, (b+1)/n]; confidence 0 joins bin 0.
inline std::size_t confidence_bin(double conf, std::size_t n_bins) {
  const double nb = static_cast<double>(n_bins);
  double raw = std::ceil(conf * nb) - 1.0;
  std::size_t b = raw < 0.0 ? 0 : std::min(static_cast<std::size_t>(raw), n_bins - 1);
  while (b > 0 && conf <= static_cast<double>(b) / nb) --b;
  while (b + 1 < n_bins && conf > static_cast<double>(b + 1) / nb) ++b;
  return b;
}

inline double ece(const Matrix& probs, std::span<const int> labels, std::size_t n_bins = 15) {
  detail::require_rows(probs, labels, "ece");
  if (n_bins < 1) throw InvalidArgument("ece: need at least one bin");
  if (labels.empty()) return 0.0;
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0);
  std::vector<std::size_t> count(n_bins, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = probs.row(i);
    const std::size_t pred = argmax(r);
    const double conf = r[pred];
    const std::size_t b = confidence_bin(conf, n_bins);
    conf_sum[b] += conf;
    acc_sum[b] += static_cast<int>(pred) == labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  double total = 0.0;
  const double n = static_cast<double>(labels.size());
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const double nb = static_cast<double>(count[b]);
    total += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return total;
}

inline double brier(const Matrix& probs, std::span<const int> labels) {
  detail::require_rows(probs, labels, "brier");
  if (labels.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = probs.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      const double d = r[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0);
      total += d * d;
    }
  }
  return total / static_cast<double>(labels.size());
}

/// P(score_ood > score_id) + 0.5 P(tie), via the rank-sum statistic with
/// average ranks.
inline double ood_auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
  if (id_scores.empty() || ood_scores.empty()) throw InvalidArgument("ood_auroc: both score lists must be nonempty");
  struct Item {
    double score;
    bool ood;
  };
  std::vector<Item> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.push_back({s, false});
  for (double s : ood_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
  // Ranks doubled so that tie averages stay integral.
  std::uint64_t rank_sum_x2 = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const std::uint64_t avg_x2 = (i + 1) + j;  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (all[k].ood) rank_sum_x2 += avg_x2;
    i = j;
  }
  const auto n_ood = static_cast<std::uint64_t>(ood_scores.size());
  const auto n_id = static_cast<std::uint64_t>(id_scores.size());
  const std::uint64_t u_x2 = rank_sum_x2 - n_ood * (n_ood + 1);
  return static_cast<double>(u_x2) / (2.0 * static_cast<double>(n_ood) * static_cast<double>(n_id));
}

struct Histogram {
  std::vector<double> edges;  // n_bins + 1
  std::vector<std::size_t> counts;
};

/// Fixed-range histogram; values at the top edge land in the last bin and
/// values outside the range are clamped into the end bins.
inline Histogram histogram(std::span<const double> values, double lo, double hi, std::size_t n_bins) {
  if (n_bins < 1 || !(hi > lo)) throw InvalidArgument("histogram: bad range or bin count");
  Histogram h;
  h.edges.resize(n_bins + 1);
  for (std::size_t b = 0; b <= n_bins; ++b)
    h.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(n_bins);
  h.counts.assign(n_bins, 0);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (double v : values) {
    const double raw = std::floor((v - lo) / width);
    std::size_t b = raw < 0.0 ? 0 : std::min(static_cast<std::size_t>(raw), n_bins - 1);
    ++h.counts[b];
  }
  return h;
}

struct EntropySummary {
  double mean = 0.0;
  Histogram hist;
};

/// Mean entropy and a histogram over [0, ln K].
inline EntropySummary entropy_summary(std::span<const double> entropies, std::size_t num_classes, std::size_t n_bins = 30) {
  if (entropies.empty()) throw InvalidArgument("entropy_summary: empty input");
  if (num_classes < 2) throw InvalidArgument("entropy_summary: need at least 2 classes");
  EntropySummary s;
  s.mean = std::accumulate(entropies.begin(), entropies.end(), 0.0) / static_cast<double>(entropies.size());
  s.hist = histogram(entropies, 0.0, std::log(static_cast<double>(num_classes)), n_bins);
  return s;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ----------------------------------------------------------------- aggregation

struct MetricRecord {
  std::string method;
  std::string dataset_tag;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct AggregateRecord {
  std::string method;
  std::string dataset_tag;
  std::string metric;
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t n_seeds = 0;
};

/// Groups by (method, dataset, metric) in lexicographic key order.
inline std::vector<AggregateRecord> aggregate(std::span<const MetricRecord> records) {
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.method, r.dataset_tag, r.metric}].push_back(r.value);
  std::vector<AggregateRecord> out;
  for (const auto& [key, values] : groups) {
    if (values.empty()) continue;
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), mean, std::sqrt(ss / n), values.size()});
  }
  return out;
}

/// "mean ± std" with 3 decimals.
inline std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, stddev);
  return buf;
}

}  // namespace sngp::metrics
