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

// Discrete-event simulation of a performance model under a closed workload.
// CPU (and disk) demands are served by processor-sharing stations with one
// station per host; DELAY demands are pure latency.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/model.hpp"
#include "perfcal/random.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::sim {

using model::PerformanceModel;
using model::UsageModel;
using stoex::EvalEnv;

struct SimConfig {
  std::uint64_t seed = 0;
  std::size_t max_calls = 5000;            // completed entry-level calls, warm-up included
  std::optional<std::size_t> warmup;       // default: 10% of max_calls
  double max_time = std::numeric_limits<double>::infinity();  // model seconds
  double window_seconds = 0.0;             // > 0: record per-host utilization windows

  std::size_t warmup_calls() const { return warmup ? *warmup : max_calls / 10; }
};

struct SimResult {
  std::map<std::string, std::vector<double>> response_ms;  // per service, post warm-up
  std::map<std::string, double> utilization;               // per host, time average over the measured span
  std::map<std::string, double> busy_seconds;              // per host, processor-seconds served in the span
  std::map<std::string, std::vector<double>> windows;      // per host, per-window utilization from t = 0
  std::string entry_service;
  std::size_t completed = 0;  // measured entry-level calls
  double start = 0.0;         // model time the measurement started
  double span = 0.0;          // measured model-time span (s)

  const std::vector<double>& entry_samples() const {
    static const std::vector<double> none;
    const auto it = response_ms.find(entry_service);
    return it == response_ms.end() ? none : it->second;
  }
  double throughput() const { return span > 0.0 ? static_cast<double>(completed) / span : 0.0; }
  double mean_response_ms(const std::string& service) const {
    const auto it = response_ms.find(service);
    if (it == response_ms.end() || it->second.empty()) return 0.0;
    double s = 0.0;
    for (double v : it->second) s += v;
    return s / static_cast<double>(it->second.size());
  }

  friend bool operator==(const SimResult&, const SimResult&) = default;
};

/// JSONL export: one {"service", "responseMs"} object per sample.
inline void write_samples(const SimResult& r, std::ostream& out) {
  for (const auto& [service, samples] : r.response_ms) {
    for (double v : samples) out << json{{"service", service}, {"responseMs", v}}.dump() << '\n';
  }
}

/// Callbacks fired as simulated executions progress (times in seconds).
struct SimObserver {
  std::function<void(std::size_t call, const std::string& service, const std::string& host,
                     std::optional<std::size_t> caller, const EvalEnv& params, std::size_t session, double time)>
      call_start;
  std::function<void(std::size_t call, double time)> call_end;
  std::function<void(std::size_t call, const std::string& action, double start, double end)> internal;
  std::function<void(std::size_t call, const std::string& loop, std::int64_t iterations)> loop;
  std::function<void(std::size_t call, const std::string& branch, std::size_t transition)> branch;
};

namespace detail {

// One entry call expanded into a step sequence. Sampling does not depend
// on timing, so the whole call tree is drawn up front.
struct Step {
  enum Kind { Enter, Exit, Demand, Delay, LoopMark, BranchMark } kind;
  std::size_t call = 0;    // index into Plan::calls
  std::string element;     // action / loop / branch id
  std::size_t station = 0; // Demand: host station index
  double amount = 0.0;     // Demand / Delay: seconds of service at full speed
  std::int64_t count = 0;  // LoopMark iterations, BranchMark transition
};

struct PlannedCall {
  std::string service;
  std::string host;
  std::optional<std::size_t> caller;
  EvalEnv params;
};

struct Plan {
  std::vector<PlannedCall> calls;
  std::vector<Step> steps;
};

class Planner {
 public:
  Planner(const PerformanceModel& m, const std::map<std::string, std::size_t>& stations) : m_(m), stations_(stations) {}

  Plan plan(const std::string& service, const EvalEnv& env, Rng& rng) {
    Plan p;
    call(p, service, env, std::nullopt, rng, 0);
    return p;
  }

 private:
  void call(Plan& p, const std::string& service, const EvalEnv& env, std::optional<std::size_t> caller, Rng& rng,
            int depth) {
    if (depth > 256) throw EvalError("call depth exceeds 256 at service '" + service + "'");
    const std::size_t index = p.calls.size();
    p.calls.push_back({service, m_.host_of(service).value_or(""), caller, env});
    p.steps.push_back({Step::Enter, index, {}, 0, 0.0, 0});
    if (const auto* seff = m_.seff_for(service)) walk(p, seff->actions, env, index, rng, depth);
    p.steps.push_back({Step::Exit, index, {}, 0, 0.0, 0});
  }

  void walk(Plan& p, const std::vector<model::Action>& actions, const EvalEnv& env, std::size_t index, Rng& rng,
            int depth) {
    for (const auto& a : actions) {
      try {
        if (const auto* ia = a.as<model::InternalAction>()) {
          const double work = std::max(0.0, stoex::as_number(stoex::sample(ia->demand, env, rng)));
          if (ia->resource == model::ResourceType::Delay) {
            p.steps.push_back({Step::Delay, index, ia->id, 0, work, 0});
          } else {
            const std::string& host = p.calls[index].host;
            const auto* c = m_.resources.find(host);
            if (!c) throw ModelError("", "service '" + p.calls[index].service + "' has no host");
            if (!(c->rate > 0.0)) throw ModelError("", "host '" + host + "' has a non-positive processing rate");
            p.steps.push_back({Step::Demand, index, ia->id, stations_.at(host), work / c->rate, 0});
          }
        } else if (const auto* ec = a.as<model::ExternalCall>()) {
          const EvalEnv args = model::bind_arguments(ec->arguments, env, model::WalkMode::Sample, &rng);
          call(p, ec->target, args, index, rng, depth + 1);
        } else if (const auto* loop = a.as<model::Loop>()) {
          const auto n = model::loop_count(*loop, env, model::WalkMode::Sample, &rng);
          p.steps.push_back({Step::LoopMark, index, loop->id, 0, 0.0, n});
          for (std::int64_t i = 0; i < n; ++i) walk(p, loop->body, env, index, rng, depth);
        } else if (const auto* br = a.as<model::Branch>()) {
          const auto t = model::choose_transition(*br, env, model::WalkMode::Sample, &rng);
          p.steps.push_back({Step::BranchMark, index, br->id, 0, 0.0, static_cast<std::int64_t>(t)});
          walk(p, br->transitions[t].body, env, index, rng, depth);
        }
      } catch (const EvalError& e) {
        const std::string what = e.what();
        if (what.rfind("action '", 0) == 0) throw;
        throw EvalError("action '" + a.id() + "': " + what);
      }
    }
  }

  const PerformanceModel& m_;
  const std::map<std::string, std::size_t>& stations_;
};

// Processor-sharing station with `processors` servers. Every resident job
// progresses at min(1, P / n); `virtual_` is the per-job attained service.
struct Station {
  std::string host;
  double processors = 1.0;
  double virtual_ = 0.0;
  double last = 0.0;
  std::multiset<std::pair<double, std::size_t>> finish;  // (virtual finish, user)
  double busy = 0.0;                                     // processor-seconds since measurement start
  double window = 0.0;
  std::vector<double> window_busy;

  double rate() const { return finish.empty() ? 0.0 : std::min(1.0, processors / static_cast<double>(finish.size())); }
  double busy_servers() const { return std::min(processors, static_cast<double>(finish.size())); }

  void advance(double now, double measure_from) {
    if (now <= last) return;
    const double servers = busy_servers();
    virtual_ += rate() * (now - last);
    const double from = std::max(last, measure_from);
    if (now > from) busy += servers * (now - from);
    if (window > 0.0 && servers > 0.0) {
      double t = last;
      while (t < now) {
        const auto w = static_cast<std::size_t>(std::floor(t / window));
        const double end = std::min(now, static_cast<double>(w + 1) * window);
        if (window_busy.size() <= w) window_busy.resize(w + 1, 0.0);
        window_busy[w] += servers * (end - t);
        t = end;
      }
    }
    last = now;
  }

  double next_departure() const {
    if (finish.empty()) return std::numeric_limits<double>::infinity();
    return last + std::max(0.0, finish.begin()->first - virtual_) / rate();
  }
};

}  // namespace detail

/// Runs one closed-workload simulation of `usage` against `m`.
inline SimResult run_simulation(const PerformanceModel& m, const UsageModel& usage, const SimConfig& cfg,
                                const SimObserver* observer = nullptr) {
  if (cfg.max_calls < 1) throw EvalError("simulation needs max_calls >= 1");
  if (usage.population < 1) throw EvalError("simulation needs population >= 1");
  if (!m.service(usage.entry_service)) throw ModelError("/usageModel/entryService", "unknown entry service");
  const std::size_t warmup = std::min(cfg.warmup_calls(), cfg.max_calls - 1);

  std::map<std::string, std::size_t> station_of;
  std::vector<detail::Station> stations;
  for (const auto& c : m.resources.containers) {
    if (!(c.rate > 0.0)) throw ModelError("", "host '" + c.host + "' has a non-positive processing rate");
    station_of[c.host] = stations.size();
    detail::Station s;
    s.host = c.host;
    s.processors = c.processors;
    s.window = cfg.window_seconds;
    stations.push_back(std::move(s));
  }

  Rng rng(cfg.seed);
  detail::Planner planner(m, station_of);

  struct User {
    detail::Plan plan;
    std::size_t pc = 0;
    std::vector<double> entered;        // per planned call
    std::vector<std::size_t> global;    // per planned call: observer id
    double step_start = 0.0;
  };
  std::vector<User> users(static_cast<std::size_t>(usage.population));

  using Timer = std::tuple<double, std::uint64_t, std::size_t>;  // (time, seq, user)
  std::priority_queue<Timer, std::vector<Timer>, std::greater<>> timers;
  std::uint64_t seq = 0;

  SimResult result;
  result.entry_service = usage.entry_service;
  double now = 0.0;
  double measure_from = warmup == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  std::size_t finished = 0;
  std::size_t next_call_id = 0;
  bool done = false;

  const auto think = [&](std::size_t u) {
    const double z = std::max(0.0, stoex::as_number(stoex::sample(usage.think_time, {}, rng)));
    timers.emplace(now + z, seq++, u);
    users[u].plan.steps.clear();
  };

  // Runs user `u` until it blocks on a resource or finishes its call.
  std::function<void(std::size_t)> run = [&](std::size_t u) {
    User& user = users[u];
    auto& steps = user.plan.steps;
    while (user.pc < steps.size()) {
      const detail::Step& s = steps[user.pc];
      const auto& pc = user.plan.calls[s.call];
      switch (s.kind) {
        case detail::Step::Enter:
          user.entered[s.call] = now;
          user.global[s.call] = next_call_id++;
          if (observer && observer->call_start) {
            std::optional<std::size_t> caller;
            if (pc.caller) caller = user.global[*pc.caller];
            observer->call_start(user.global[s.call], pc.service, pc.host, caller, pc.params, u, now);
          }
          break;
        case detail::Step::Exit: {
          if (observer && observer->call_end) observer->call_end(user.global[s.call], now);
          const double ms = (now - user.entered[s.call]) * 1000.0;
          if (s.call == 0) {
            ++finished;
            if (finished > warmup) {
              result.response_ms[pc.service].push_back(ms);
              ++result.completed;
            } else if (finished == warmup) {
              measure_from = now;
              for (auto& st : stations) st.advance(now, now);
            }
            if (finished >= cfg.max_calls) done = true;
          } else if (now >= measure_from && finished >= warmup) {
            result.response_ms[pc.service].push_back(ms);
          }
          break;
        }
        case detail::Step::LoopMark:
          if (observer && observer->loop) observer->loop(user.global[s.call], s.element, s.count);
          break;
        case detail::Step::BranchMark:
          if (observer && observer->branch) {
            observer->branch(user.global[s.call], s.element, static_cast<std::size_t>(s.count));
          }
          break;
        case detail::Step::Delay:
          user.step_start = now;
          timers.emplace(now + s.amount, seq++, u);
          return;
        case detail::Step::Demand: {
          user.step_start = now;
          auto& st = stations[s.station];
          st.advance(now, measure_from);
          st.finish.emplace(st.virtual_ + s.amount, u);
          return;
        }
      }
      ++user.pc;
    }
    think(u);
  };

  const auto start_call = [&](std::size_t u) {
    User& user = users[u];
    const EvalEnv env = model::bind_arguments(usage.inputs, {}, model::WalkMode::Sample, &rng);
    user.plan = planner.plan(usage.entry_service, env, rng);
    user.pc = 0;
    user.entered.assign(user.plan.calls.size(), 0.0);
    user.global.assign(user.plan.calls.size(), 0);
    run(u);
  };

  // Completes the resource step user `u` was blocked on.
  const auto resume = [&](std::size_t u) {
    User& user = users[u];
    const detail::Step& s = user.plan.steps[user.pc];
    if (observer && observer->internal) {
      observer->internal(user.global[s.call], s.element, user.step_start, now);
    }
    ++user.pc;
    run(u);
  };

  // All users start thinking at time zero.
  for (std::size_t u = 0; u < users.size(); ++u) think(u);

  while (!done) {
    double t_station = std::numeric_limits<double>::infinity();
    std::size_t which = 0;
    for (std::size_t i = 0; i < stations.size(); ++i) {
      const double t = stations[i].next_departure();
      if (t < t_station) {
        t_station = t;
        which = i;
      }
    }
    const double t_timer = timers.empty() ? std::numeric_limits<double>::infinity() : std::get<0>(timers.top());
    const double next = std::min(t_station, t_timer);
    if (!std::isfinite(next) || next > cfg.max_time) {
      if (std::isfinite(cfg.max_time)) now = std::max(now, cfg.max_time);
      break;
    }
    now = next;
    if (t_station <= t_timer) {
      auto& st = stations[which];
      st.advance(now, measure_from);
      // Jobs whose attained service reached their demand leave together.
      const double v = std::max(st.virtual_, st.finish.begin()->first);
      st.virtual_ = v;
      std::vector<std::size_t> leaving;
      while (!st.finish.empty() && st.finish.begin()->first <= v + 1e-12 * std::max(1.0, v)) {
        leaving.push_back(st.finish.begin()->second);
        st.finish.erase(st.finish.begin());
      }
      for (std::size_t u : leaving) {
        resume(u);
        if (done) break;
      }
    } else {
      const auto [t, _, u] = timers.top();
      timers.pop();
      if (users[u].plan.steps.empty()) {
        start_call(u);
      } else {
        resume(u);
      }
    }
  }

  for (auto& st : stations) st.advance(now, measure_from);
  result.start = std::isfinite(measure_from) ? measure_from : now;
  result.span = now - result.start;
  for (const auto& st : stations) {
    result.busy_seconds[st.host] = st.busy;
    result.utilization[st.host] = result.span > 0.0 ? st.busy / (result.span * st.processors) : 0.0;
    if (cfg.window_seconds > 0.0) {
      std::vector<double> w = st.window_busy;
      const auto windows = static_cast<std::size_t>(std::floor(now / cfg.window_seconds));
      w.resize(std::max(w.size(), windows), 0.0);
      for (double& x : w) x /= cfg.window_seconds * st.processors;
      result.windows[st.host] = std::move(w);
    }
  }
  return result;
}

inline SimResult run_simulation(const PerformanceModel& m, const SimConfig& cfg = {},
                                const SimObserver* observer = nullptr) {
  if (!m.usage) throw ModelError("/usageModel", "model has no usage model");
  return run_simulation(m, *m.usage, cfg, observer);
}

/// Independent repetitions; repetition k runs with seed base_seed + k.
inline std::vector<SimResult> repeat_simulations(const PerformanceModel& m, const UsageModel& usage, std::size_t reps,
                                                 std::uint64_t base_seed, SimConfig cfg = {},
                                                 unsigned threads = 1) {
  if (reps < 1) throw EvalError("repeat_simulations needs reps >= 1");
  std::vector<SimResult> out(reps);
  std::vector<std::exception_ptr> errors(reps);
  const auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t k = first; k < reps; k += stride) {
      SimConfig c = cfg;
      c.seed = base_seed + k;
      try {
        out[k] = run_simulation(m, usage, c);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(reps)));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

inline std::vector<SimResult> repeat_simulations(const PerformanceModel& m, std::size_t reps, std::uint64_t base_seed,
                                                 SimConfig cfg = {}, unsigned threads = 1) {
  if (!m.usage) throw ModelError("/usageModel", "model has no usage model");
  return repeat_simulations(m, *m.usage, reps, base_seed, cfg, threads);
}

}  // namespace perfcal::sim
