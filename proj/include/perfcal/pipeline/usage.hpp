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

// Usage-model and deployment adjustment from monitored call traces.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/model.hpp"
#include "perfcal/records.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::pipeline {

using stoex::StoExpr;

using records::CallTrace;

struct UsageAdjustment {
  model::UsageModel usage;
  double mean_concurrency = 0.0;  // time-averaged active sessions
  std::size_t sessions = 0;
  std::size_t entry_calls = 0;
  std::size_t think_gaps = 0;

  json to_json() const {
    json inputs = json::object();
    for (const auto& [k, b] : usage.inputs) inputs[k] = model::detail::binding_to_json(b);
    return {{"entryService", usage.entry_service},
            {"population", usage.population},
            {"thinkTime", stoex::to_string(usage.think_time)},
            {"inputs", inputs},
            {"meanConcurrency", mean_concurrency},
            {"sessions", sessions},
            {"entryCalls", entry_calls},
            {"thinkGaps", think_gaps}};
  }
};

namespace detail {

// Distribution over observed numeric values: exact frequencies for integer
// or few distinct values, a histogram otherwise.
inline StoExpr value_distribution(const std::vector<double>& values) {
  const bool integral = std::all_of(values.begin(), values.end(), [](double v) { return std::floor(v) == v; });
  if (integral) {
    std::vector<std::int64_t> ints;
    ints.reserve(values.size());
    for (double v : values) ints.push_back(std::llround(v));
    return stoex::empirical_int_pmf(ints);
  }
  const std::set<double> distinct(values.begin(), values.end());
  if (distinct.size() <= 20) return stoex::empirical_double_pmf(values);
  return stoex::build_double_pmf(values, 20);
}

inline model::LabelDistribution label_distribution(const std::vector<std::string>& labels) {
  std::map<std::string, std::size_t> counts;
  for (const auto& l : labels) ++counts[l];
  model::LabelDistribution d;
  for (const auto& [l, c] : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(labels.size());
    d.choices.push_back({l, counts.size() == 1 ? stoex::bool_lit(true) : stoex::probability_bool(p)});
  }
  return d;
}

}  // namespace detail

/// Closed-workload usage model from entry-level calls. Sessions are the
/// user streams named by the call records' session field (calls without a
/// session form one stream). Population is the time-averaged number of
/// active sessions (first entry to last exit), think time the distribution
/// of gaps between consecutive calls of a session, and inputs the observed
/// frequencies of the entry calls' parameter characterizations.
inline UsageAdjustment adjust_usage(const std::vector<CallTrace>& traces) {
  std::map<std::string, std::size_t> services;
  for (const auto& t : traces) {
    if (!t.nodes.empty() && !t.root().call.caller) ++services[t.root().call.service];
  }
  if (services.empty()) throw RecordError("usage adjustment needs entry-level calls");
  const std::string entry =
      std::max_element(services.begin(), services.end(), [](const auto& a, const auto& b) { return a.second < b.second; })
          ->first;

  std::map<std::string, std::vector<const records::CallRecord*>> sessions;
  std::int64_t first = std::numeric_limits<std::int64_t>::max();
  std::int64_t last = std::numeric_limits<std::int64_t>::min();
  for (const auto& t : traces) {
    if (t.nodes.empty() || t.root().call.caller) continue;
    const auto& c = t.root().call;
    sessions[c.session.value_or("")].push_back(&c);
    first = std::min(first, c.entry_us);
    last = std::max(last, c.exit_us);
  }

  UsageAdjustment out;
  out.sessions = sessions.size();
  std::vector<double> gaps;
  double active_us = 0.0;
  for (auto& [_, calls] : sessions) {
    std::sort(calls.begin(), calls.end(), [](const auto* a, const auto* b) {
      return std::pair(a->entry_us, a->id) < std::pair(b->entry_us, b->id);
    });
    std::int64_t end = calls.front()->exit_us;
    for (std::size_t i = 1; i < calls.size(); ++i) {
      gaps.push_back(std::max<double>(0.0, static_cast<double>(calls[i]->entry_us - calls[i - 1]->exit_us)) / 1e6);
      end = std::max(end, calls[i]->exit_us);
    }
    active_us += static_cast<double>(end - calls.front()->entry_us);
  }
  const double span = static_cast<double>(last - first);
  out.mean_concurrency = span > 0.0 ? active_us / span : static_cast<double>(sessions.size());
  out.think_gaps = gaps.size();

  model::UsageModel& u = out.usage;
  u.entry_service = entry;
  u.population = std::max(1, static_cast<int>(std::llround(out.mean_concurrency)));
  u.think_time = gaps.empty() ? stoex::double_pmf({{0.0, 1.0}}) : stoex::build_double_pmf(gaps, 20);

  std::map<std::string, std::vector<double>> numeric;
  std::map<std::string, std::vector<std::string>> labels;
  for (const auto& t : traces) {
    if (t.nodes.empty() || t.root().call.caller || t.root().call.service != entry) continue;
    ++out.entry_calls;
    for (const auto& [name, p] : t.root().call.params.params()) {
      if (p.value) numeric[name + ".VALUE"].push_back(*p.value);
      if (p.number_of_elements) numeric[name + ".NUMBER_OF_ELEMENTS"].push_back(static_cast<double>(*p.number_of_elements));
      if (p.byte_size) numeric[name + ".BYTESIZE"].push_back(static_cast<double>(*p.byte_size));
      if (p.type) labels[name + ".TYPE"].push_back(*p.type);
    }
  }
  for (const auto& [k, v] : numeric) u.inputs[k] = detail::value_distribution(v);
  for (const auto& [k, v] : labels) u.inputs[k] = detail::label_distribution(v);
  return out;
}

inline model::UsageModel adjust_usage_model(const std::vector<CallTrace>& traces) { return adjust_usage(traces).usage; }

/// Measured response times (ms) per service over every call in the traces.
inline std::map<std::string, std::vector<double>> measured_samples(const std::vector<CallTrace>& traces) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) {
      out[n.call.service].push_back(static_cast<double>(n.call.exit_us - n.call.entry_us) / 1000.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deployment

struct AllocationUpdate {
  std::string component;
  std::string old_host;
  std::string new_host;
  double share = 0.0;  // fraction of the component's calls on new_host

  friend bool operator==(const AllocationUpdate&, const AllocationUpdate&) = default;
};

struct DeploymentReport {
  std::vector<AllocationUpdate> updates;
  std::vector<std::string> diagnostics;

  json to_json() const {
    json u = json::array();
    for (const auto& x : updates) {
      u.push_back({{"component", x.component}, {"oldHost", x.old_host}, {"newHost", x.new_host}, {"share", x.share}});
    }
    return {{"updates", u}, {"diagnostics", diagnostics}};
  }
};

/// Components whose calls report a host other than the modeled one in at
/// least `threshold` of cases. Hosts absent from the resource environment
/// are an error.
inline DeploymentReport detect_deployment_changes(const std::vector<CallTrace>& traces, const model::PerformanceModel& m,
                                                  double threshold = 0.95) {
  std::map<std::string, std::map<std::string, std::size_t>> by_component;
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) {
      const auto* s = m.service(n.call.service);
      if (!s) continue;
      if (!m.resources.find(n.call.host)) {
        throw RecordError("call '" + n.call.id + "' reports unknown host '" + n.call.host + "'");
      }
      ++by_component[s->component][n.call.host];
    }
  }
  DeploymentReport r;
  for (const auto& [component, hosts] : by_component) {
    std::size_t total = 0;
    for (const auto& [_, c] : hosts) total += c;
    const auto alloc = m.allocation.find(component);
    const std::string modeled = alloc == m.allocation.end() ? "" : alloc->second;
    bool decided = false;
    for (const auto& [host, c] : hosts) {
      const double share = static_cast<double>(c) / static_cast<double>(total);
      if (share < threshold) continue;
      decided = true;
      if (host != modeled) r.updates.push_back({component, modeled, host, share});
    }
    if (!decided) {
      std::string msg = "component '" + component + "' runs on several hosts:";
      for (const auto& [host, c] : hosts) msg += " " + host + "=" + std::to_string(c);
      r.diagnostics.push_back(msg);
    }
  }
  return r;
}

inline void apply_deployment(model::PerformanceModel& m, const DeploymentReport& r) {
  for (const auto& u : r.updates) m.allocation[u.component] = u.new_host;
}

}  // namespace perfcal::pipeline
