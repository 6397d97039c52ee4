// Copyright 2026 The perfcal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Ordinary least squares and cross-validated forward term selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perfcal/error.hpp"
#include "perfcal/random.hpp"

namespace perfcal::deplearn {

using Column = std::vector<double>;

struct OlsFit {
  std::vector<double> weights;  // one per input column; 0 for dropped columns
  double intercept = 0.0;
  std::vector<std::size_t> dropped;  // zero-variance columns
  bool ridge = false;  // the ridge fallback was needed
  double r2 = 0.0;
  double rmse = 0.0;

  double predict(const std::vector<Column>& cols, std::size_t row) const {
    double v = intercept;
    for (std::size_t j = 0; j < weights.size(); ++j) v += weights[j] * cols[j][row];
    return v;
  }
};

namespace detail {

// In-place Cholesky solve of A x = b for symmetric positive definite A.
inline bool cholesky_solve(std::vector<std::vector<double>> a, std::vector<double>& b) {
  const std::size_t k = b.size();
  for (std::size_t j = 0; j < k; ++j) {
    double d = a[j][j];
    for (std::size_t p = 0; p < j; ++p) d -= a[j][p] * a[j][p];
    if (!(d > 1e-12)) return false;
    d = std::sqrt(d);
    a[j][j] = d;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = a[i][j];
      for (std::size_t p = 0; p < j; ++p) s -= a[i][p] * a[j][p];
      a[i][j] = s / d;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    double s = b[i];
    for (std::size_t p = 0; p < i; ++p) s -= a[i][p] * b[p];
    b[i] = s / a[i][i];
  }
  for (std::size_t i = k; i-- > 0;) {
    double s = b[i];
    for (std::size_t p = i + 1; p < k; ++p) s -= a[p][i] * b[p];
    b[i] = s / a[i][i];
  }
  return true;
}

inline OlsFit fit_rows(const std::vector<Column>& cols, std::span<const double> y, std::span<const std::size_t> rows) {
  const std::size_t n = rows.size();
  const std::size_t k = cols.size();
  OlsFit fit;
  fit.weights.assign(k, 0.0);
  if (n == 0) throw CalibrationError("ols", "no rows");
  double ybar = 0.0;
  for (std::size_t r : rows) ybar += y[r];
  ybar /= static_cast<double>(n);

  std::vector<std::size_t> keep;
  std::vector<double> mean(k, 0.0), sd(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t r : rows) mean[j] += cols[j][r];
    mean[j] /= static_cast<double>(n);
    for (std::size_t r : rows) sd[j] += (cols[j][r] - mean[j]) * (cols[j][r] - mean[j]);
    sd[j] = std::sqrt(sd[j] / static_cast<double>(n));
    if (sd[j] > 1e-12 * std::max(1.0, std::abs(mean[j]))) {
      keep.push_back(j);
    } else {
      fit.dropped.push_back(j);
    }
  }
  if (n < keep.size() + 1) throw CalibrationError("ols", "fewer rows than columns + 1");
  const std::size_t m = keep.size();
  // Correlation-scaled normal equations.
  std::vector<std::vector<double>> a(m, std::vector<double>(m, 0.0));
  std::vector<double> c(m, 0.0);
  for (std::size_t p = 0; p < m; ++p) {
    const auto& xp = cols[keep[p]];
    for (std::size_t q = 0; q <= p; ++q) {
      const auto& xq = cols[keep[q]];
      double s = 0.0;
      for (std::size_t r : rows) s += (xp[r] - mean[keep[p]]) * (xq[r] - mean[keep[q]]);
      a[p][q] = a[q][p] = s / (static_cast<double>(n) * sd[keep[p]] * sd[keep[q]]);
    }
    double s = 0.0;
    for (std::size_t r : rows) s += (xp[r] - mean[keep[p]]) * (y[r] - ybar);
    c[p] = s / (static_cast<double>(n) * sd[keep[p]]);
  }
  std::vector<double> b = c;
  if (!cholesky_solve(a, b)) {
    fit.ridge = true;
    for (std::size_t p = 0; p < m; ++p) a[p][p] += 1e-8;
    b = c;
    if (!cholesky_solve(a, b)) throw CalibrationError("ols", "degenerate design matrix after ridge fallback");
  }
  fit.intercept = ybar;
  for (std::size_t p = 0; p < m; ++p) {
    fit.weights[keep[p]] = b[p] / sd[keep[p]];
    fit.intercept -= fit.weights[keep[p]] * mean[keep[p]];
  }
  double sse = 0.0, sst = 0.0;
  for (std::size_t r : rows) {
    const double e = y[r] - fit.predict(cols, r);
    sse += e * e;
    sst += (y[r] - ybar) * (y[r] - ybar);
  }
  fit.rmse = std::sqrt(sse / static_cast<double>(n));
  fit.r2 = sst > 0.0 ? 1.0 - sse / sst : (sse <= 1e-24 ? 1.0 : 0.0);
  return fit;
}

}  // namespace detail

/// Least squares with intercept over column-major `cols`. Zero-variance
/// columns are dropped (weight 0); a 1e-8 ridge is added on singularity.
inline OlsFit fit_ols(const std::vector<Column>& cols, std::span<const double> y) {
  for (const auto& c : cols) {
    if (c.size() != y.size()) throw CalibrationError("ols", "column length differs from target length");
  }
  std::vector<std::size_t> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  return detail::fit_rows(cols, y, rows);
}

/// Row permutation sorting rows lexicographically by (features, target).
/// Learners process data in this order so results do not depend on the
/// input row order.
template <class Less>
std::vector<std::size_t> canonical_order(std::size_t n, Less less) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), less);
  return order;
}

/// Fold index per row: a seeded shuffle dealt round-robin into k folds.
inline std::vector<int> make_folds(std::size_t n, int k, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<int> fold(n, 0);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  return fold;
}

/// k-fold cross-validated RMSE of OLS over the chosen columns (intercept
/// only when `chosen` is empty). Infinite when a fold cannot be fitted.
inline double cv_rmse(const std::vector<Column>& cols, std::span<const double> y, const std::vector<std::size_t>& chosen,
                      const std::vector<int>& folds, int k) {
  std::vector<Column> sub;
  for (std::size_t j : chosen) sub.push_back(cols[j]);
  double sse = 0.0;
  std::size_t count = 0;
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t r = 0; r < y.size(); ++r) (folds[r] == f ? test : train).push_back(r);
    if (test.empty()) continue;
    if (train.size() < sub.size() + 1) return std::numeric_limits<double>::infinity();
    OlsFit fit;
    try {
      fit = detail::fit_rows(sub, y, train);
    } catch (const CalibrationError&) {
      return std::numeric_limits<double>::infinity();
    }
    for (std::size_t r : test) {
      const double e = y[r] - fit.predict(sub, r);
      sse += e * e;
      ++count;
    }
  }
  return count ? std::sqrt(sse / static_cast<double>(count)) : std::numeric_limits<double>::infinity();
}

struct Selection {
  std::vector<std::size_t> chosen;  // candidate indices in entry order
  double cv_rmse = 0.0;
  double baseline_rmse = 0.0;  // intercept-only model
};

struct SelectionConfig {
  int folds = 5;
  double min_improvement = 0.02;  // relative CV-RMSE reduction needed to enter
  std::uint64_t seed = 0;
};

namespace detail {
inline Selection select_canonical(const std::vector<Column>& candidates, std::span<const double> y,
                                  const SelectionConfig& config);
}  // namespace detail

/// Greedy forward selection. A candidate enters only when it lowers the
/// cross-validated RMSE by at least `min_improvement` (relative). Ties go
/// to the lower candidate index. Fewer than 10 rows use leave-one-out
/// style folds; fewer than 3 rows select nothing.
inline Selection select_terms(const std::vector<Column>& candidates, std::span<const double> y,
                              const SelectionConfig& config = {}) {
  Selection s;
  const std::size_t n = y.size();
  if (n < 3) return s;
  // Canonical row order: results are independent of the input order.
  const auto order = canonical_order(n, [&](std::size_t a, std::size_t b) {
    for (const auto& c : candidates) {
      if (c[a] != c[b]) return c[a] < c[b];
    }
    return y[a] < y[b];
  });
  std::vector<Column> cand(candidates.size(), Column(n));
  std::vector<double> yy(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < candidates.size(); ++j) cand[j][i] = candidates[j][order[i]];
    yy[i] = y[order[i]];
  }
  return detail::select_canonical(cand, yy, config);
}

namespace detail {

inline Selection select_canonical(const std::vector<Column>& candidates, std::span<const double> y,
                                  const SelectionConfig& config) {
  Selection s;
  const std::size_t n = y.size();
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.folds), n));
  const auto folds = make_folds(n, k, config.seed);
  s.baseline_rmse = cv_rmse(candidates, y, {}, folds, k);
  s.cv_rmse = s.baseline_rmse;
  double scale = 0.0;
  for (double v : y) scale = std::max(scale, std::abs(v));
  std::vector<bool> used(candidates.size(), false);
  for (;;) {
    if (s.cv_rmse <= 1e-12 * std::max(1.0, scale)) break;  // already exact
    std::optional<std::size_t> best;
    double best_rmse = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (used[j]) continue;
      auto trial = s.chosen;
      trial.push_back(j);
      const double r = cv_rmse(candidates, y, trial, folds, k);
      if (r < best_rmse) {
        best_rmse = r;
        best = j;
      }
    }
    if (!best || !(best_rmse < s.cv_rmse * (1.0 - config.min_improvement))) break;
    used[*best] = true;
    s.chosen.push_back(*best);
    s.cv_rmse = best_rmse;
  }
  return s;
}

}  // namespace detail

}  // namespace perfcal::deplearn
