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

// Incremental resource demand estimation. Measured utilization of a host is
// split into the share predicted for non-modified internal actions (NMIAs,
// from their learned demands) and the remainder caused by modified ones
// (MIAs), which is apportioned by response-time weight and turned into
// demands with the service demand law.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "perfcal/error.hpp"
#include "perfcal/instrument.hpp"
#include "perfcal/model.hpp"
#include "perfcal/records.hpp"

namespace perfcal::rde {

using records::CallNode;
using records::CallTrace;
using records::UtilizationRecord;
using stoex::EvalEnv;

struct MiaStats {
  std::size_t count = 0;           // C_i
  double mean_response_s = 0.0;    // R_i
};

struct WindowStats {
  std::string host;
  std::int64_t start_us = 0;
  double seconds = 0.0;            // T
  int processors = 1;
  double utilization = 0.0;        // U_r, mean over processors
  std::map<std::string, MiaStats> mias;
};

struct RdObservation {
  std::string action;
  EvalEnv env;
  double demand = 0.0;  // work-units
  std::size_t window = 0;
};

struct WindowCall {
  const CallNode* node = nullptr;
  const CallTrace* trace = nullptr;
  bool training = true;
};

/// Utilization sample of one host plus the calls on that host whose exit
/// falls inside the window.
struct Window {
  UtilizationRecord utilization;
  std::vector<WindowCall> calls;
};

struct WindowEstimate {
  WindowStats stats;
  double nmia_utilization = 0.0;
  double mia_utilization = 0.0;
  double clamp_residual = 0.0;  // negative MIA utilization residual, 0 when not clamped
  bool low_utilization = false;
  std::map<std::string, double> shares;  // U_{i,r}
  std::map<std::string, double> demands_s;  // D_i in seconds
  std::vector<RdObservation> observations;
  std::vector<std::string> warnings;
};

struct RdeConfig {
  double low_utilization = 0.20;
};

// ---------------------------------------------------------------------------
// Equations

struct MiaUtilization {
  double value = 0.0;
  double clamp_residual = 0.0;  // U_r - U_nmias when negative
};

/// U_mias = max(U_r - U_nmias, 0).
inline MiaUtilization mia_utilization(double u_r, double u_nmias) {
  const double r = u_r - u_nmias;
  if (r < 0.0) return {0.0, r};
  return {r, 0.0};
}

/// U_i = U_mias * R_i C_i / sum_j R_j C_j.
inline std::map<std::string, double> apportion_mias(const WindowStats& w, double u_mias) {
  double total = 0.0;
  for (const auto& [_, s] : w.mias) total += s.mean_response_s * static_cast<double>(s.count);
  if (!(total > 0.0)) throw CalibrationError("rde", "all MIA response-time weights are zero");
  std::map<std::string, double> out;
  for (const auto& [id, s] : w.mias) out[id] = u_mias * s.mean_response_s * static_cast<double>(s.count) / total;
  return out;
}

/// Service demand law D = U T / C.
inline double service_demand(double u, double t, double c) {
  if (!(c > 0.0)) throw CalibrationError("rde", "service demand needs a positive completion count");
  if (!(t > 0.0)) throw CalibrationError("rde", "service demand needs a positive window length");
  return u * t / c;
}

// ---------------------------------------------------------------------------
// NMIA prediction

/// Elements with at least one loop or branch record in the data; for these
/// the recorded behaviour replaces the model's expressions.
struct Monitored {
  std::set<std::string> loops;
  std::set<std::string> branches;

  static Monitored of(const std::vector<CallTrace>& traces) {
    Monitored m;
    for (const auto& t : traces) {
      for (const auto& n : t.nodes) {
        for (const auto& r : n.loops) m.loops.insert(r.loop);
        for (const auto& r : n.branches) m.branches.insert(r.branch);
      }
    }
    return m;
  }
};

namespace detail {

struct Expander {
  const instrument::ChangeSet& changes;
  const Monitored& monitored;
  const CallNode& node;
  const EvalEnv& env;

  // Expected NMIA work-units of `actions` executed `weight` times.
  double work(const std::vector<model::Action>& actions, double weight) const {
    double total = 0.0;
    for (const auto& a : actions) {
      if (const auto* ia = a.as<model::InternalAction>()) {
        if (ia->resource == model::ResourceType::Delay || changes.is_mia(ia->id)) continue;
        try {
          total += weight * stoex::expectation(ia->demand, env);
        } catch (const Error& e) {
          throw CalibrationError("rde", "cannot predict demand of NMIA '" + ia->id + "': " + e.what());
        }
      } else if (const auto* loop = a.as<model::Loop>()) {
        if (monitored.loops.count(loop->id)) {
          double iterations = 0.0;
          for (const auto& r : node.loops) {
            if (r.loop == loop->id) iterations += static_cast<double>(r.iterations);
          }
          total += work(loop->body, iterations);
        } else {
          double n = 0.0;
          try {
            n = stoex::expectation(loop->iterations, env);
          } catch (const Error& e) {
            throw CalibrationError("rde", "cannot predict iterations of loop '" + loop->id + "': " + e.what());
          }
          total += work(loop->body, weight * n);
        }
      } else if (const auto* branch = a.as<model::Branch>()) {
        if (monitored.branches.count(branch->id)) {
          std::vector<double> taken(branch->transitions.size(), 0.0);
          for (const auto& r : node.branches) {
            if (r.branch == branch->id && static_cast<std::size_t>(r.transition) < taken.size()) taken[r.transition] += 1.0;
          }
          for (std::size_t i = 0; i < taken.size(); ++i) total += work(branch->transitions[i].body, taken[i]);
        } else {
          for (std::size_t i = 0; i < branch->transitions.size(); ++i) {
            double p = 0.0;
            try {
              p = std::clamp(stoex::expectation(branch->transitions[i].condition, env), 0.0, 1.0);
            } catch (const Error& e) {
              throw CalibrationError("rde", "cannot predict branch '" + branch->id + "': " + e.what());
            }
            if (p > 0.0) total += work(branch->transitions[i].body, weight * p);
            // Deterministic conditions: first true wins.
            if (p >= 1.0 && !stoex::contains_pmf(branch->transitions[i].condition)) break;
          }
        }
      }
    }
    return total;
  }
};

}  // namespace detail

/// Expected NMIA work-units of one call of its service (callees excluded;
/// they are calls of their own).
inline double predicted_nmia_work(const model::PerformanceModel& m, const instrument::ChangeSet& changes,
                                  const Monitored& monitored, const CallNode& node) {
  const model::Seff* seff = m.seff_for(node.call.service);
  if (!seff) return 0.0;
  return detail::Expander{changes, monitored, node, node.call.params}.work(seff->actions, 1.0);
}

/// U_{r,NMIAs} = sum of predicted NMIA seconds / (T * processors).
inline double predict_nmia_utilization(const model::PerformanceModel& m, const instrument::ChangeSet& changes,
                                       const Monitored& monitored, const std::vector<WindowCall>& calls,
                                       const std::string& host, double window_seconds) {
  const model::Container* c = m.resources.find(host);
  if (!c) throw CalibrationError("rde", "unknown host '" + host + "'");
  double work = 0.0;
  for (const auto& wc : calls) {
    if (wc.node->call.host != host) continue;
    work += predicted_nmia_work(m, changes, monitored, *wc.node);
  }
  return work / c->rate / (window_seconds * c->processors);
}

// ---------------------------------------------------------------------------
// Windowing

/// Internal-action response time in seconds with nested call intervals
/// removed.
inline double own_response_seconds(const records::InternalRecord& r, const CallNode& node, const CallTrace& trace) {
  double us = static_cast<double>(r.end_us - r.start_us);
  for (std::size_t c : node.children) {
    const auto& child = trace.nodes[c].call;
    const auto lo = std::max(child.entry_us, r.start_us);
    const auto hi = std::min(child.exit_us, r.end_us);
    if (hi > lo) us -= static_cast<double>(hi - lo);
  }
  return std::max(us, 0.0) / 1e6;
}

/// Groups calls by host and exit time into the utilization windows.
/// `training` (parallel to traces, optional) marks traces whose MIA records
/// may yield observations; all calls count for utilization accounting.
inline std::vector<Window> assign_windows(const std::vector<CallTrace>& traces,
                                          const std::vector<UtilizationRecord>& utilizations,
                                          const std::vector<bool>* training = nullptr) {
  std::vector<Window> windows;
  std::map<std::string, std::vector<std::pair<std::int64_t, std::size_t>>> by_host;  // start -> window index
  for (const auto& u : utilizations) {
    by_host[u.host].push_back({u.window_start_us, windows.size()});
    windows.push_back({u, {}});
  }
  for (auto& [_, v] : by_host) std::sort(v.begin(), v.end());
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const bool train = !training || (*training)[t];
    for (const auto& node : traces[t].nodes) {
      const auto it = by_host.find(node.call.host);
      if (it == by_host.end()) continue;
      const auto& starts = it->second;
      auto pos = std::upper_bound(starts.begin(), starts.end(), std::pair{node.call.exit_us, windows.size()});
      if (pos == starts.begin()) continue;
      --pos;
      Window& w = windows[pos->second];
      if (node.call.exit_us >= w.utilization.window_end_us()) continue;
      w.calls.push_back({&node, &traces[t], train});
    }
  }
  return windows;
}

// ---------------------------------------------------------------------------
// Estimation

/// Per-window estimation: NMIA utilization, clamped MIA residual, apportioning
/// and the service demand law at or above the low
/// utilization threshold, measured response times below it. Each MIA visit
/// in a training call receives demand U_i T P r_k / sum(r) (its
/// response-time share of the action's busy time), converted to work-units.
inline WindowEstimate estimate_window(const model::PerformanceModel& m, const instrument::ChangeSet& changes,
                                      const Monitored& monitored, const Window& window, std::size_t window_id = 0,
                                      const RdeConfig& config = {}) {
  const auto& u = window.utilization;
  const model::Container* c = m.resources.find(u.host);
  if (!c) throw CalibrationError("rde", "utilization record for unknown host '" + u.host + "'");
  WindowEstimate est;
  est.stats.host = u.host;
  est.stats.start_us = u.window_start_us;
  est.stats.seconds = u.window_seconds;
  est.stats.processors = c->processors;
  est.stats.utilization = u.mean();

  struct Visit {
    std::string action;
    const EvalEnv* env;
    double response_s;
    bool training;
  };
  std::vector<Visit> visits;
  std::map<std::string, double> response_sum;
  for (const auto& wc : window.calls) {
    if (wc.node->call.host != u.host) continue;
    for (const auto& r : wc.node->internals) {
      if (!changes.is_mia(r.action)) continue;
      const auto ref = model::find_action(m, r.action);
      if (!ref.action || ref.action->as<model::InternalAction>()->resource == model::ResourceType::Delay) continue;
      const double rs = own_response_seconds(r, *wc.node, *wc.trace);
      visits.push_back({r.action, &wc.node->call.params, rs, wc.training});
      auto& s = est.stats.mias[r.action];
      ++s.count;
      response_sum[r.action] += rs;
    }
  }
  for (auto& [id, s] : est.stats.mias) s.mean_response_s = response_sum[id] / static_cast<double>(s.count);
  if (visits.empty()) return est;

  est.low_utilization = est.stats.utilization < config.low_utilization;
  if (est.low_utilization) {
    for (const auto& v : visits) {
      if (v.training) est.observations.push_back({v.action, *v.env, v.response_s * c->rate, window_id});
    }
    return est;
  }

  est.nmia_utilization = predict_nmia_utilization(m, changes, monitored, window.calls, u.host, u.window_seconds);
  const MiaUtilization mu = mia_utilization(est.stats.utilization, est.nmia_utilization);
  est.mia_utilization = mu.value;
  est.clamp_residual = mu.clamp_residual;
  if (mu.clamp_residual < 0.0) {
    est.warnings.push_back("window " + std::to_string(window_id) + " on " + u.host +
                           ": predicted NMIA utilization exceeds measurement by " +
                           std::to_string(-mu.clamp_residual));
  }
  double total_weight = 0.0;
  for (const auto& [_, s] : est.stats.mias) total_weight += s.mean_response_s * static_cast<double>(s.count);
  if (!(total_weight > 0.0)) {
    est.warnings.push_back("window " + std::to_string(window_id) + ": zero MIA response times, skipped");
    return est;
  }
  est.shares = apportion_mias(est.stats, est.mia_utilization);
  const double capacity = u.window_seconds * c->processors;  // processor-seconds in the window
  for (const auto& [id, s] : est.stats.mias) {
    est.demands_s[id] = service_demand(est.shares[id], capacity, static_cast<double>(s.count));
  }
  for (const auto& v : visits) {
    if (!v.training) continue;
    const auto& s = est.stats.mias[v.action];
    const double busy = est.shares[v.action] * capacity;
    const double share = response_sum[v.action] > 0.0 ? v.response_s / response_sum[v.action]
                                                       : 1.0 / static_cast<double>(s.count);
    est.observations.push_back({v.action, *v.env, busy * share * c->rate, window_id});
  }
  return est;
}

struct RdeResult {
  std::vector<WindowEstimate> windows;
  std::vector<RdObservation> observations;  // window order, then visit order
  std::vector<std::string> warnings;
};

inline RdeResult estimate(const model::PerformanceModel& m, const instrument::ChangeSet& changes,
                          const std::vector<CallTrace>& traces, const std::vector<UtilizationRecord>& utilizations,
                          const std::vector<bool>* training = nullptr, const RdeConfig& config = {}) {
  const Monitored monitored = Monitored::of(traces);
  const auto windows = assign_windows(traces, utilizations, training);
  RdeResult out;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    WindowEstimate est = estimate_window(m, changes, monitored, windows[w], w, config);
    out.observations.insert(out.observations.end(), est.observations.begin(), est.observations.end());
    out.warnings.insert(out.warnings.end(), est.warnings.begin(), est.warnings.end());
    out.windows.push_back(std::move(est));
  }
  return out;
}

/// Observations of one action as a dependency-learning dataset.
inline records::Dataset rd_dataset(const std::vector<RdObservation>& obs, const std::string& action) {
  std::vector<records::Observation> rows;
  for (const auto& o : obs) {
    if (o.action == action) rows.push_back({o.env, o.demand, {}});
  }
  return records::build_dataset(rows);
}

}  // namespace perfcal::rde
