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

// Distribution distances and the self-validation loop that compares
// simulated response times with measured ones.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/model.hpp"
#include "perfcal/sim.hpp"

namespace perfcal::validate {

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b| by sorted merge.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EvalError("ks_statistic: empty sample set");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size());
  const double m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() || j < y.size()) {
    double v;
    if (j == y.size() || (i < x.size() && x[i] <= y[j])) {
      v = x[i];
    } else {
      v = y[j];
    }
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return d;
}

/// Wasserstein-1 distance: integral of |F_a^-1 - F_b^-1| over [0, 1].
/// Quantile breakpoints are merged on the integer grid 1/(n*m).
inline double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw EvalError("wasserstein1: empty sample set");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const std::size_t n = x.size(), m = y.size();
  std::size_t i = 0, j = 0;
  std::size_t pos = 0;  // current quantile level in units of 1/(n*m)
  double total = 0.0;
  while (i < n && j < m) {
    const std::size_t next_a = (i + 1) * m;
    const std::size_t next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    total += static_cast<double>(next - pos) * std::abs(x[i] - y[j]);
    pos = next;
    if (next_a == next) ++i;
    if (next_b == next) ++j;
  }
  return total / (static_cast<double>(n) * static_cast<double>(m));
}

struct QuartileSummary {
  double min = 0, q1 = 0, q2 = 0, q3 = 0, max = 0, avg = 0;

  json to_json() const { return {{"min", min}, {"q1", q1}, {"q2", q2}, {"q3", q3}, {"max", max}, {"avg", avg}}; }
};

/// Inclusive linear interpolation between closest ranks.
inline double quantile_sorted(const std::vector<double>& s, double p) {
  const double h = (static_cast<double>(s.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline QuartileSummary quartile_summary(std::span<const double> samples) {
  if (samples.empty()) throw EvalError("quartile_summary: empty sample set");
  std::vector<double> s(samples.begin(), samples.end());
  std::sort(s.begin(), s.end());
  double sum = 0.0;
  for (double v : s) sum += v;
  return {s.front(), quantile_sorted(s, 0.25), quantile_sorted(s, 0.5), quantile_sorted(s, 0.75), s.back(),
          sum / static_cast<double>(s.size())};
}

struct Aggregate {
  double min = 0, median = 0, max = 0, avg = 0, stdev = 0;

  json to_json() const {
    return {{"min", min}, {"median", median}, {"max", max}, {"avg", avg}, {"stdev", stdev}};
  }
};

/// Sample standard deviation (n - 1); zero for a single value.
inline Aggregate aggregate(std::span<const double> values) {
  if (values.empty()) throw EvalError("aggregate: empty list");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  Aggregate a;
  a.min = s.front();
  a.max = s.back();
  a.median = quantile_sorted(s, 0.5);
  double sum = 0.0;
  for (double v : s) sum += v;
  a.avg = sum / static_cast<double>(s.size());
  double ss = 0.0;
  for (double v : s) ss += (v - a.avg) * (v - a.avg);
  a.stdev = s.size() > 1 ? std::sqrt(ss / static_cast<double>(s.size() - 1)) : 0.0;
  return a;
}

struct ValidationConfig {
  std::size_t reps = 100;
  std::uint64_t base_seed = 0;
  double threshold = 0.20;  // PASS iff avg KS <= threshold
  sim::SimConfig sim;
  unsigned threads = 1;
};

struct ValidationReport {
  std::string service;
  std::vector<double> ks;
  std::vector<double> w1;
  Aggregate ks_aggregate;
  Aggregate w1_aggregate;
  QuartileSummary monitoring;
  QuartileSummary simulation;  // first repetition
  std::map<std::string, double> service_ks;  // avg KS per service measured on both sides
  double threshold = 0.20;
  bool pass = false;

  std::string verdict() const { return pass ? "PASS" : "FAIL"; }

  json to_json() const {
    json per = json::object();
    for (const auto& [s, v] : service_ks) per[s] = v;
    return {{"service", service},
            {"ks", ks},
            {"w1", w1},
            {"aggregates", {{"ks", ks_aggregate.to_json()}, {"w1", w1_aggregate.to_json()}}},
            {"quartiles", {{"monitoring", monitoring.to_json()}, {"simulation", simulation.to_json()}}},
            {"serviceKs", per},
            {"threshold", threshold},
            {"verdict", verdict()}};
  }

  std::string to_text() const {
    std::ostringstream os;
    char buf[256];
    os << "Response times of " << service << " (ms)\n";
    std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %10s %10s %10s\n", "", "Min", "Q1", "Q2", "Q3", "Max", "Avg");
    os << buf;
    for (const auto& [name, q] : {std::pair{"Simulation", simulation}, std::pair{"Monitoring", monitoring}}) {
      std::snprintf(buf, sizeof buf, "%-12s %10.1f %10.1f %10.1f %10.1f %10.1f %10.1f\n", name, q.min, q.q1, q.q2, q.q3,
                    q.max, q.avg);
      os << buf;
    }
    os << "\nAggregated metrics over " << ks.size() << " repetitions\n";
    std::snprintf(buf, sizeof buf, "%-12s %10s %10s %10s %10s %10s\n", "", "Min", "Median", "Max", "Avg", "Stdev");
    os << buf;
    for (const auto& [name, a] : {std::pair{"KS", ks_aggregate}, std::pair{"W1 (ms)", w1_aggregate}}) {
      std::snprintf(buf, sizeof buf, "%-12s %10.4f %10.4f %10.4f %10.4f %10.4f\n", name, a.min, a.median, a.max, a.avg,
                    a.stdev);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "\nVerdict: %s (avg KS %.4f, threshold %.2f)\n", verdict().c_str(), ks_aggregate.avg,
                  threshold);
    os << buf;
    return os.str();
  }
};

/// Simulates `usage` against `m` for cfg.reps repetitions and compares each
/// repetition's per-service response times with `measured` (ms). The
/// verdict uses the entry service.
inline ValidationReport self_validate(const model::PerformanceModel& m, const model::UsageModel& usage,
                                      const std::map<std::string, std::vector<double>>& measured,
                                      const ValidationConfig& cfg = {}) {
  const auto entry = measured.find(usage.entry_service);
  if (entry == measured.end() || entry->second.empty()) {
    throw EvalError("self_validate: no measured samples for entry service '" + usage.entry_service + "'");
  }
  const auto runs = sim::repeat_simulations(m, usage, cfg.reps, cfg.base_seed, cfg.sim, cfg.threads);
  ValidationReport r;
  r.service = usage.entry_service;
  r.threshold = cfg.threshold;
  std::map<std::string, std::vector<double>> per_service;
  for (const auto& run : runs) {
    const auto& sim = run.entry_samples();
    if (sim.empty()) throw EvalError("self_validate: a repetition produced no samples");
    r.ks.push_back(ks_statistic(sim, entry->second));
    r.w1.push_back(wasserstein1(sim, entry->second));
    for (const auto& [service, samples] : measured) {
      const auto it = run.response_ms.find(service);
      if (samples.empty() || it == run.response_ms.end() || it->second.empty()) continue;
      per_service[service].push_back(ks_statistic(it->second, samples));
    }
  }
  for (const auto& [service, values] : per_service) r.service_ks[service] = aggregate(values).avg;
  r.ks_aggregate = aggregate(r.ks);
  r.w1_aggregate = aggregate(r.w1);
  r.monitoring = quartile_summary(entry->second);
  r.simulation = quartile_summary(runs.front().entry_samples());
  r.pass = r.ks_aggregate.avg <= cfg.threshold;
  return r;
}

inline ValidationReport self_validate(const model::PerformanceModel& m, const model::UsageModel& usage,
                                      const std::vector<double>& measured, const ValidationConfig& cfg = {}) {
  return self_validate(m, usage, std::map<std::string, std::vector<double>>{{usage.entry_service, measured}}, cfg);
}

}  // namespace perfcal::validate
