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

// Synthetic monitoring data: runs the simulator on a ground-truth model and
// records what the active probes would have seen.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perfcal/instrument.hpp"
#include "perfcal/model.hpp"
#include "perfcal/records.hpp"
#include "perfcal/sim.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::pipeline {

using stoex::StoExpr;

struct WorkloadSpec {
  model::PerformanceModel truth;  // must carry a usage model
  int users = 0;                  // > 0 overrides the truth population
  std::optional<StoExpr> think;   // overrides the truth think time
  std::size_t calls = 2000;       // completed entry-level calls
  double max_time = std::numeric_limits<double>::infinity();
  double window_seconds = 10.0;   // utilization record length
  std::optional<instrument::MonitoringConfig> monitoring;  // default: every probe
  std::uint64_t seed = 0;
};

/// Quantile-midpoint discretization of an exponential distribution.
inline StoExpr exponential_pmf(double mean, int bins = 50) {
  std::vector<stoex::Outcome<double>> out;
  for (int k = 0; k < bins; ++k) {
    const double q = (k + 0.5) / bins;
    out.push_back({-mean * std::log(1.0 - q), 1.0 / bins});
  }
  // Rescale so the mean is exact.
  double m = 0.0;
  for (const auto& o : out) m += o.value * o.probability;
  for (auto& o : out) o.value *= mean / m;
  return stoex::double_pmf(std::move(out));
}

namespace detail {
inline std::int64_t to_us(double seconds) { return std::llround(seconds * 1e6); }
}  // namespace detail

inline records::RecordBatch generate_workload(const WorkloadSpec& spec) {
  if (!spec.truth.usage) throw ModelError("/usageModel", "ground-truth model has no usage model");
  model::UsageModel usage = *spec.truth.usage;
  if (spec.users > 0) usage.population = spec.users;
  if (spec.think) usage.think_time = *spec.think;
  const auto monitoring = spec.monitoring ? *spec.monitoring : instrument::MonitoringConfig::everything(spec.truth);
  using instrument::ProbeKind;

  struct Pending {
    records::CallRecord call;
    std::vector<records::InternalRecord> internals;
    std::vector<records::LoopRecord> loops;
    std::vector<records::BranchRecord> branches;
  };
  std::map<std::size_t, Pending> open;
  records::RecordBatch batch;
  const auto id = [](std::size_t c) { return "c" + std::to_string(c); };

  sim::SimObserver obs;
  obs.call_start = [&](std::size_t call, const std::string& service, const std::string& host,
                       std::optional<std::size_t> caller, const stoex::EvalEnv& params, std::size_t session, double t) {
    Pending p;
    p.call.id = id(call);
    p.call.service = service;
    if (caller) p.call.caller = id(*caller);
    p.call.host = host;
    p.call.entry_us = detail::to_us(t);
    p.call.params = params;
    if (!caller) p.call.session = "u" + std::to_string(session);
    open.emplace(call, std::move(p));
  };
  obs.internal = [&](std::size_t call, const std::string& action, double start, double end) {
    if (monitoring.enabled(ProbeKind::Internal, action)) {
      open.at(call).internals.push_back({id(call), action, detail::to_us(start), detail::to_us(end)});
    }
  };
  obs.loop = [&](std::size_t call, const std::string& loop, std::int64_t n) {
    if (monitoring.enabled(ProbeKind::Loop, loop)) open.at(call).loops.push_back({id(call), loop, n});
  };
  obs.branch = [&](std::size_t call, const std::string& branch, std::size_t t) {
    if (monitoring.enabled(ProbeKind::Branch, branch)) {
      open.at(call).branches.push_back({id(call), branch, static_cast<int>(t)});
    }
  };
  obs.call_end = [&](std::size_t call, double t) {
    auto it = open.find(call);
    Pending& p = it->second;
    p.call.exit_us = detail::to_us(t);
    if (monitoring.enabled(ProbeKind::Service, p.call.service)) batch.calls.push_back(std::move(p.call));
    for (auto& r : p.internals) batch.internals.push_back(std::move(r));
    for (auto& r : p.loops) batch.loops.push_back(std::move(r));
    for (auto& r : p.branches) batch.branches.push_back(std::move(r));
    open.erase(it);
  };

  sim::SimConfig cfg;
  cfg.seed = spec.seed;
  cfg.max_calls = spec.calls;
  cfg.warmup = 0;
  cfg.max_time = spec.max_time;
  cfg.window_seconds = spec.window_seconds;
  const auto result = sim::run_simulation(spec.truth, usage, cfg, &obs);

  const double end = result.start + result.span;
  for (const auto& c : spec.truth.resources.containers) {
    const auto it = result.windows.find(c.host);
    if (it == result.windows.end()) continue;
    for (std::size_t k = 0; k < it->second.size(); ++k) {
      if (static_cast<double>(k + 1) * spec.window_seconds > end) break;
      records::UtilizationRecord u;
      u.host = c.host;
      u.window_start_us = detail::to_us(static_cast<double>(k) * spec.window_seconds);
      u.window_seconds = spec.window_seconds;
      u.per_processor.assign(static_cast<std::size_t>(c.processors), it->second[k]);
      batch.utilizations.push_back(std::move(u));
    }
  }
  return batch;
}

/// Writes records.jsonl and the ground truth (truth.json) into `dir`.
inline void write_workload(const WorkloadSpec& spec, const records::RecordBatch& batch,
                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "records.jsonl");
  records::write_records(batch, out);
  model::save_model(spec.truth, dir / "truth.json");
}

}  // namespace perfcal::pipeline
