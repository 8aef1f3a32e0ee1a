#pragma once

// Slow, direct reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "sngp/model.hpp"

namespace oracle {

using sngp::Matrix;

inline std::size_t argmax(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (p[k] > p[best]) best = k;
  return best;
}

/// Bins by testing every interval (lo, hi] directly.
inline double ece(const Matrix& probs, const std::vector<int>& y, std::size_t n_bins) {
  const std::size_t n = y.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) / n_bins, hi = static_cast<double>(b + 1) / n_bins;
    double conf = 0.0, acc = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = probs.row(i);
      const std::size_t k = argmax(r);
      const double c = r[k];
      const bool in = (c > lo && c <= hi) || (b == 0 && c <= lo);
      if (!in) continue;
      ++count;
      conf += c;
      acc += static_cast<int>(k) == y[i];
    }
    if (count) total += std::abs(acc / count - conf / count) * count / n;
  }
  return total;
}

inline double brier(const Matrix& probs, const std::vector<int>& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t k = 0; k < probs.cols(); ++k) {
      const double t = static_cast<int>(k) == y[i] ? 1.0 : 0.0;
      s += (probs(i, k) - t) * (probs(i, k) - t);
    }
  return s / y.size();
}

/// Pairwise count with half credit for ties.
inline double auroc(const std::vector<double>& id, const std::vector<double>& ood) {
  double wins = 0.0;
  for (double o : ood)
    for (double i : id) wins += o > i ? 1.0 : (o == i ? 0.5 : 0.0);
  return wins / (static_cast<double>(id.size()) * static_cast<double>(ood.size()));
}

/// Builds the confusion matrix explicitly.
inline double f1_macro(const Matrix& probs, const std::vector<int>& y, std::size_t k) {
  std::vector<std::vector<std::size_t>> cm(k, std::vector<std::size_t>(k, 0));  // [true][pred]
  for (std::size_t i = 0; i < y.size(); ++i) ++cm[y[i]][argmax(probs.row(i))];
  double s = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = cm[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < k; ++o)
      if (o != c) {
        fp += cm[o][c];
        fn += cm[c][o];
      }
    if (tp + fp == 0 && tp + fn == 0) {
      s += 1.0;
      continue;
    }
    const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    s += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
  }
  return s / k;
}

struct MeanStd {
  double mean, std;
};

inline MeanStd two_pass(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / v.size())};
}

/// Average ranks (1-based) with ties sharing the mean rank.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + 1 + j);
    i = j;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0 || db == 0) return 0.0;
  return num / std::sqrt(da * db);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Central differences (h = 1e-5) of the mean cross-entropy against the
/// analytic gradient for every trainable entry. Relative error uses
/// max(|a|, |n|, floor) in the denominator so entries that are zero up to
/// roundoff do not dominate.
inline GradCheck gradient_check(sngp::ModelBundle m, const Matrix& x, const std::vector<int>& y, bool dropout,
                                std::uint64_t mask_seed, double floor = 1e-7) {
  const double h = 1e-5;
  auto loss = [&](const sngp::ModelBundle& mm) {
    sngp::Rng rng(mask_seed);
    return sngp::loss_and_grad(mm, x, y, dropout, &rng).loss;
  };
  sngp::Rng rng(mask_seed);
  const auto analytic = sngp::loss_and_grad(m, x, y, dropout, &rng);
  const auto grads = sngp::gradient_views(analytic.grad, m.is_gp());
  auto params = sngp::parameter_views(m);
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double saved = params[t][i];
      params[t][i] = saved + h;
      const double up = loss(m);
      params[t][i] = saved - h;
      const double down = loss(m);
      params[t][i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++out.checked;
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = "tensor " + std::to_string(t) + " entry " + std::to_string(i);
      }
    }
  }
  return out;
}

}  // namespace oracle
