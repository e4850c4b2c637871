#pragma once

// Independent reference implementations used to check the library.

#include <algorithm>
#include <array>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include "wsiseg/preprocess.hpp"
#include "wsiseg/rng.hpp"

namespace testing {

using wsiseg::Rng;
using wsiseg::prep::Histogram;

// Exhaustive scan with exact rational between-class variance
// w0 w1 (mu0 - mu1)^2; the first (lowest) maximiser wins.
inline std::uint8_t otsu_oracle(const Histogram& h) {
  using boost::multiprecision::cpp_rational;
  cpp_rational total = 0, sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += h[i];
    sum += cpp_rational(i) * h[i];
  }
  cpp_rational best = -1;
  int best_t = 0;
  cpp_rational n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += h[t];
    s0 += cpp_rational(t) * h[t];
    const cpp_rational n1 = total - n0;
    cpp_rational var = 0;
    if (n0 != 0 && n1 != 0) {
      const cpp_rational diff = s0 / n0 - (sum - s0) / n1;
      var = (n0 / total) * (n1 / total) * diff * diff;
    }
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  return static_cast<std::uint8_t>(best_t);
}

inline Histogram random_histogram(Rng& rng) {
  Histogram h{};
  const int style = static_cast<int>(rng.below(4));
  if (style == 0) {
    for (auto& v : h) v = rng.below(1000);
  } else if (style == 1) {
    // Sparse: a handful of bins, often with equal counts to provoke ties.
    const auto k = 2 + rng.below(5);
    for (std::uint64_t i = 0; i < k; ++i) h[rng.below(256)] += rng.bernoulli(0.5) ? 7 : 1 + rng.below(50);
  } else if (style == 2) {
    // Two modes.
    for (int m = 0; m < 2; ++m) {
      const double mu = rng.uniform(20, 235), sd = rng.uniform(2, 30);
      for (int n = 0; n < 2000; ++n) {
        const long v = std::lround(mu + sd * rng.normal());
        h[static_cast<std::size_t>(std::clamp(v, 0L, 255L))]++;
      }
    }
  } else {
    // Symmetric pair of bins: every threshold in between ties.
    const auto a = rng.below(128);
    h[a] = h[255 - a] = 1 + rng.below(9);
  }
  if (std::count_if(h.begin(), h.end(), [](auto c) { return c != 0; }) < 2) {
    h[0] += 1;
    h[255] += 1;
  }
  return h;
}

// Average precision by brute force: for every distinct score s, the
// prediction set {score >= s} gives one (precision, recall) point, counted
// from scratch; AP sums precision times the recall gained, thresholds taken
// from high to low.
inline double pr_auc_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const double positives = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  double ap = 0.0, prev_recall = 0.0;
  for (double s : thresholds) {
    std::size_t tp = 0, predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= s) {
        ++predicted;
        tp += labels[i] == 1;
      }
    const double recall = static_cast<double>(tp) / positives;
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

// The same sum in exact rational arithmetic.
inline double pr_auc_exact(const std::vector<double>& scores, const std::vector<int>& labels) {
  using boost::multiprecision::cpp_rational;
  const std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  const long positives = std::count(labels.begin(), labels.end(), 1);
  cpp_rational ap = 0;
  long prev_tp = 0;
  for (double s : thresholds) {
    long tp = 0, predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (scores[i] >= s) {
        ++predicted;
        tp += labels[i] == 1;
      }
    ap += cpp_rational(tp - prev_tp, positives) * cpp_rational(tp, predicted);
    prev_tp = tp;
  }
  return static_cast<double>(ap);
}

// Quadratic weighted kappa written as
//   1 - n * sum_k (p_k - t_k)^2 / sum_i sum_j (p_i - t_j)^2,
// which follows from expanding the weighted disagreement sums.
inline double kappa_oracle(const std::vector<int>& p, const std::vector<int>& t) {
  const double n = static_cast<double>(p.size());
  double observed = 0.0, expected = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) observed += (p[k] - t[k]) * (p[k] - t[k]);
  for (int a : p)
    for (int b : t) expected += (a - b) * (a - b);
  return 1.0 - n * observed / expected;
}

}  // namespace testing
