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

// Monitoring records (JSON Lines), correlation into call traces, the
// train/validation split and per-element datasets for dependency learning.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/model.hpp"
#include "perfcal/random.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::records {

using stoex::EvalEnv;

struct CallRecord {
  std::string id;
  std::string service;
  std::optional<std::string> caller;
  std::string host;
  std::int64_t entry_us = 0;
  std::int64_t exit_us = 0;
  EvalEnv params;
  std::optional<std::string> session;  // user stream of entry-level calls
};

struct InternalRecord {
  std::string call;
  std::string action;
  std::int64_t start_us = 0;
  std::int64_t end_us = 0;
};

struct LoopRecord {
  std::string call;
  std::string loop;
  std::int64_t iterations = 0;
};

struct BranchRecord {
  std::string call;
  std::string branch;
  int transition = 0;
};

struct UtilizationRecord {
  std::string host;
  std::int64_t window_start_us = 0;
  double window_seconds = 0.0;
  std::vector<double> per_processor;

  double mean() const {
    if (per_processor.empty()) return 0.0;
    double s = 0.0;
    for (double u : per_processor) s += u;
    return s / static_cast<double>(per_processor.size());
  }
  std::int64_t window_end_us() const {
    return window_start_us + static_cast<std::int64_t>(std::llround(window_seconds * 1e6));
  }
};

struct Diagnostic {
  std::size_t line = 0;  // 1-based source line; 0 when not line-bound
  std::string message;
};

struct RecordBatch {
  std::vector<CallRecord> calls;
  std::vector<InternalRecord> internals;
  std::vector<LoopRecord> loops;
  std::vector<BranchRecord> branches;
  std::vector<UtilizationRecord> utilizations;
  std::vector<Diagnostic> diagnostics;

  std::size_t size() const {
    return calls.size() + internals.size() + loops.size() + branches.size() + utilizations.size();
  }
  std::map<std::string, std::size_t> counts() const {
    return {{"call", calls.size()},
            {"internal", internals.size()},
            {"loop", loops.size()},
            {"branch", branches.size()},
            {"utilization", utilizations.size()}};
  }
};

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline std::string id_of(const json& v, const char* field) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw RecordError(std::string("field '") + field + "' must be a string or integer id");
}

inline const json& field(const json& j, const char* name) {
  const auto it = j.find(name);
  if (it == j.end()) throw RecordError(std::string("missing mandatory field '") + name + "'");
  return *it;
}

inline std::int64_t integer(const json& j, const char* name) {
  const json& v = field(j, name);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d) return static_cast<std::int64_t>(d);
  }
  throw RecordError(std::string("field '") + name + "' must be an integer");
}

inline double number(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number()) throw RecordError(std::string("field '") + name + "' must be a number");
  return v.get<double>();
}

inline std::string string(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) throw RecordError(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

inline EvalEnv params_from(const json& j) {
  EvalEnv env;
  if (!j.is_object()) throw RecordError("field 'params' must be an object");
  for (const auto& [name, bundle] : j.items()) {
    if (!bundle.is_object()) throw RecordError("parameter '" + name + "' must be an object");
    auto& p = env[name];
    if (const auto it = bundle.find("value"); it != bundle.end() && !it->is_null()) {
      if (it->is_boolean()) {
        p.value = it->get<bool>() ? 1.0 : 0.0;
      } else if (it->is_number()) {
        p.value = it->get<double>();
      } else {
        throw RecordError("parameter '" + name + "' value must be numeric or boolean");
      }
    }
    if (const auto it = bundle.find("numberOfElements"); it != bundle.end() && !it->is_null()) {
      p.number_of_elements = it->get<std::int64_t>();
    }
    if (const auto it = bundle.find("byteSize"); it != bundle.end() && !it->is_null()) {
      p.byte_size = it->get<std::int64_t>();
    }
    if (const auto it = bundle.find("type"); it != bundle.end() && !it->is_null()) {
      if (!it->is_string()) throw RecordError("parameter '" + name + "' type must be a string");
      p.type = it->get<std::string>();
    }
  }
  return env;
}

inline json params_to(const EvalEnv& env) {
  json out = json::object();
  for (const auto& [name, p] : env.params()) {
    json b = json::object();
    if (p.value) b["value"] = *p.value;
    if (p.number_of_elements) b["numberOfElements"] = *p.number_of_elements;
    if (p.byte_size) b["byteSize"] = *p.byte_size;
    if (p.type) b["type"] = *p.type;
    out[name] = b;
  }
  return out;
}

}  // namespace detail

inline json to_json(const CallRecord& r) {
  json j = {{"kind", "call"},
            {"id", r.id},
            {"service", r.service},
            {"caller", r.caller ? json(*r.caller) : json(nullptr)},
            {"host", r.host},
            {"entryUs", r.entry_us},
            {"exitUs", r.exit_us},
            {"params", detail::params_to(r.params)}};
  if (r.session) j["session"] = *r.session;
  return j;
}
inline json to_json(const InternalRecord& r) {
  return {{"kind", "internal"}, {"call", r.call}, {"action", r.action}, {"startUs", r.start_us}, {"endUs", r.end_us}};
}
inline json to_json(const LoopRecord& r) {
  return {{"kind", "loop"}, {"call", r.call}, {"loop", r.loop}, {"iterations", r.iterations}};
}
inline json to_json(const BranchRecord& r) {
  return {{"kind", "branch"}, {"call", r.call}, {"branch", r.branch}, {"transition", r.transition}};
}
inline json to_json(const UtilizationRecord& r) {
  return {{"kind", "utilization"},
          {"host", r.host},
          {"windowStartUs", r.window_start_us},
          {"windowSeconds", r.window_seconds},
          {"perProcessor", r.per_processor}};
}

/// Parses one JSON object into `batch`; throws RecordError on schema issues.
inline void parse_record(const json& j, RecordBatch& batch) {
  using namespace detail;
  if (!j.is_object()) throw RecordError("record must be a JSON object");
  const std::string kind = string(j, "kind");
  if (kind == "call") {
    CallRecord r;
    r.id = id_of(field(j, "id"), "id");
    r.service = string(j, "service");
    if (const auto it = j.find("caller"); it != j.end() && !it->is_null()) r.caller = id_of(*it, "caller");
    r.host = string(j, "host");
    r.entry_us = integer(j, "entryUs");
    r.exit_us = integer(j, "exitUs");
    if (r.exit_us < r.entry_us) throw RecordError("call exit precedes entry");
    if (const auto it = j.find("params"); it != j.end() && !it->is_null()) r.params = params_from(*it);
    if (const auto it = j.find("session"); it != j.end() && !it->is_null()) r.session = id_of(*it, "session");
    batch.calls.push_back(std::move(r));
  } else if (kind == "internal") {
    InternalRecord r{id_of(field(j, "call"), "call"), string(j, "action"), integer(j, "startUs"), integer(j, "endUs")};
    if (r.end_us < r.start_us) throw RecordError("internal action end precedes start");
    batch.internals.push_back(std::move(r));
  } else if (kind == "loop") {
    LoopRecord r{id_of(field(j, "call"), "call"), string(j, "loop"), integer(j, "iterations")};
    if (r.iterations < 0) throw RecordError("loop iteration count must be non-negative");
    batch.loops.push_back(std::move(r));
  } else if (kind == "branch") {
    BranchRecord r{id_of(field(j, "call"), "call"), string(j, "branch"), static_cast<int>(integer(j, "transition"))};
    if (r.transition < 0) throw RecordError("branch transition index must be non-negative");
    batch.branches.push_back(std::move(r));
  } else if (kind == "utilization") {
    UtilizationRecord r;
    r.host = string(j, "host");
    r.window_start_us = integer(j, "windowStartUs");
    r.window_seconds = number(j, "windowSeconds");
    if (!(r.window_seconds > 0.0)) throw RecordError("utilization window length must be > 0");
    const json& pp = field(j, "perProcessor");
    if (!pp.is_array() || pp.empty()) throw RecordError("perProcessor must be a non-empty array");
    for (const auto& u : pp) {
      if (!u.is_number()) throw RecordError("perProcessor entries must be numbers");
      const double x = u.get<double>();
      if (x < 0.0 || x > 1.0) throw RecordError("utilization outside [0,1]");
      r.per_processor.push_back(x);
    }
    batch.utilizations.push_back(std::move(r));
  } else {
    throw RecordError("unknown record kind '" + kind + "'");
  }
}

/// Streaming single-pass parse. Malformed lines become diagnostics with
/// their 1-based line number; blank lines are skipped.
inline RecordBatch parse_records(std::istream& in) {
  RecordBatch batch;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      parse_record(json::parse(line), batch);
    } catch (const json::exception& e) {
      batch.diagnostics.push_back({number, std::string("malformed JSON: ") + e.what()});
    } catch (const RecordError& e) {
      batch.diagnostics.push_back({number, e.what()});
    }
  }
  return batch;
}

inline void write_records(const RecordBatch& batch, std::ostream& out) {
  for (const auto& r : batch.calls) out << to_json(r).dump() << '\n';
  for (const auto& r : batch.internals) out << to_json(r).dump() << '\n';
  for (const auto& r : batch.loops) out << to_json(r).dump() << '\n';
  for (const auto& r : batch.branches) out << to_json(r).dump() << '\n';
  for (const auto& r : batch.utilizations) out << to_json(r).dump() << '\n';
}

// ---------------------------------------------------------------------------
// Correlation

struct CallNode {
  CallRecord call;
  std::optional<std::size_t> parent;
  std::vector<std::size_t> children;  // ordered by entry timestamp
  std::vector<InternalRecord> internals;
  std::vector<LoopRecord> loops;
  std::vector<BranchRecord> branches;
};

/// One entry-level call and everything it caused. nodes[0] is the root.
struct CallTrace {
  std::vector<CallNode> nodes;

  const CallNode& root() const { return nodes.front(); }
  std::size_t record_count() const {
    std::size_t n = 0;
    for (const auto& c : nodes) n += 1 + c.internals.size() + c.loops.size() + c.branches.size();
    return n;
  }
};

struct Correlation {
  std::vector<CallTrace> traces;  // ordered by root entry time, then id
  std::vector<Diagnostic> orphans;
  std::size_t orphaned_records = 0;
};

/// Groups records into call trees. Total and lossless: each input record is
/// either in exactly one trace or counted in exactly one orphan diagnostic.
inline Correlation correlate(const RecordBatch& batch) {
  Correlation out;
  const std::size_t n = batch.calls.size();
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(n * 2);
  std::vector<bool> usable(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    if (!index.emplace(batch.calls[i].id, i).second) {
      usable[i] = false;
      out.orphans.push_back({0, "duplicate call id '" + batch.calls[i].id + "'"});
      ++out.orphaned_records;
    }
  }
  // Resolve the root of every call; 0 = unknown, 1 = in progress, 2 = resolved.
  std::vector<int> state(n, 0);
  std::vector<std::optional<std::size_t>> root(n);
  std::vector<std::optional<std::size_t>> parent(n);
  std::vector<std::string> failure(n);
  for (std::size_t start = 0; start < n; ++start) {
    if (!usable[start] || state[start] == 2) continue;
    std::vector<std::size_t> chain;
    std::size_t cur = start;
    std::optional<std::size_t> resolved;
    std::string reason;
    for (;;) {
      if (state[cur] == 2) {
        resolved = root[cur];
        reason = failure[cur];
        break;
      }
      if (state[cur] == 1) {
        reason = "caller cycle through call '" + batch.calls[cur].id + "'";
        break;
      }
      state[cur] = 1;
      chain.push_back(cur);
      const auto& caller = batch.calls[cur].caller;
      if (!caller) {
        resolved = cur;
        break;
      }
      const auto it = index.find(*caller);
      if (it == index.end() || !usable[it->second]) {
        reason = "dangling caller id '" + *caller + "'";
        break;
      }
      parent[cur] = it->second;
      cur = it->second;
    }
    for (std::size_t c : chain) {
      state[c] = 2;
      root[c] = resolved;
      failure[c] = reason;
    }
  }
  // Build traces.
  std::unordered_map<std::size_t, std::size_t> trace_of_root;
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    if (usable[i] && root[i] && *root[i] == i) roots.push_back(i);
  }
  std::sort(roots.begin(), roots.end(), [&](std::size_t a, std::size_t b) {
    const auto& ca = batch.calls[a];
    const auto& cb = batch.calls[b];
    return std::tie(ca.entry_us, ca.id) < std::tie(cb.entry_us, cb.id);
  });
  out.traces.resize(roots.size());
  for (std::size_t t = 0; t < roots.size(); ++t) trace_of_root[roots[t]] = t;
  std::vector<std::size_t> slot(n, 0);
  std::vector<std::vector<std::size_t>> members(roots.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (!usable[i]) continue;
    if (!root[i]) {
      out.orphans.push_back({0, "call '" + batch.calls[i].id + "' orphaned: " + failure[i]});
      ++out.orphaned_records;
      continue;
    }
    members[trace_of_root[*root[i]]].push_back(i);
  }
  for (std::size_t t = 0; t < roots.size(); ++t) {
    auto& m = members[t];
    // Root first, then by entry time; parents always enter no later than children.
    std::sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      if (a == roots[t] || b == roots[t]) return a == roots[t] && b != roots[t];
      const auto& ca = batch.calls[a];
      const auto& cb = batch.calls[b];
      return std::tie(ca.entry_us, ca.id) < std::tie(cb.entry_us, cb.id);
    });
    auto& nodes = out.traces[t].nodes;
    nodes.reserve(m.size());
    for (std::size_t k = 0; k < m.size(); ++k) {
      slot[m[k]] = k;
      nodes.push_back(CallNode{batch.calls[m[k]], std::nullopt, {}, {}, {}, {}});
    }
    for (std::size_t k = 1; k < m.size(); ++k) {
      const std::size_t p = slot[*parent[m[k]]];
      nodes[k].parent = p;
      nodes[p].children.push_back(k);  // m is entry-ordered, so children are too
    }
  }
  const auto locate = [&](const std::string& call) -> CallNode* {
    const auto it = index.find(call);
    if (it == index.end() || !usable[it->second] || !root[it->second]) return nullptr;
    return &out.traces[trace_of_root[*root[it->second]]].nodes[slot[it->second]];
  };
  for (const auto& r : batch.internals) {
    if (auto* node = locate(r.call)) {
      node->internals.push_back(r);
    } else {
      out.orphans.push_back({0, "internal record '" + r.action + "' references unknown call '" + r.call + "'"});
      ++out.orphaned_records;
    }
  }
  for (const auto& r : batch.loops) {
    if (auto* node = locate(r.call)) {
      node->loops.push_back(r);
    } else {
      out.orphans.push_back({0, "loop record '" + r.loop + "' references unknown call '" + r.call + "'"});
      ++out.orphaned_records;
    }
  }
  for (const auto& r : batch.branches) {
    if (auto* node = locate(r.call)) {
      node->branches.push_back(r);
    } else {
      out.orphans.push_back({0, "branch record '" + r.branch + "' references unknown call '" + r.call + "'"});
      ++out.orphaned_records;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train / validation split

struct Split {
  std::vector<CallTrace> train;
  std::vector<CallTrace> validation;
};

/// Whole-trace partition; train receives round(ratio * N) traces clamped to
/// [1, N-1]. Deterministic for a fixed seed; each part keeps input order.
inline Split split_train_validation(const std::vector<CallTrace>& traces, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw RecordError("split ratio must lie in (0,1)");
  if (traces.size() < 2) throw RecordError("split needs at least 2 traces");
  const std::size_t n = traces.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))), 1, n - 1);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < k; ++i) in_train[order[i]] = true;
  Split s;
  s.train.reserve(k);
  s.validation.reserve(n - k);
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? s.train : s.validation).push_back(traces[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Datasets

/// One row: the parameters of the enclosing call and the observed target.
struct Observation {
  EvalEnv env;
  double target = 0.0;
  std::string label;  // categorical targets (enum arguments)
};

/// Feature table. Numeric columns carry VALUE / NUMBER_OF_ELEMENTS /
/// BYTESIZE characterizations, enum columns carry TYPE labels; both are
/// named "param.CHARACTERIZATION".
struct Dataset {
  std::vector<std::string> numeric_columns;
  std::vector<bool> integral;  // per numeric column: every value is an integer
  std::vector<std::string> enum_columns;
  std::vector<std::vector<double>> x;
  std::vector<std::vector<std::string>> labels;
  std::vector<double> y;
  std::vector<std::string> y_labels;
  std::vector<EvalEnv> envs;
  std::size_t excluded = 0;

  std::size_t rows() const { return y.size(); }
};

/// Builds the table. A characterization becomes a column when at least half
/// of the observations carry it; rows lacking any column are excluded and
/// counted.
inline Dataset build_dataset(const std::vector<Observation>& obs) {
  using stoex::Characterization;
  std::map<std::string, std::size_t> presence;
  for (const auto& o : obs) {
    for (const auto& [name, p] : o.env.params()) {
      if (p.value) ++presence[name + ".VALUE"];
      if (p.number_of_elements) ++presence[name + ".NUMBER_OF_ELEMENTS"];
      if (p.byte_size) ++presence[name + ".BYTESIZE"];
      if (p.type) ++presence[name + ".TYPE"];
    }
  }
  Dataset d;
  std::vector<std::pair<std::string, Characterization>> numeric;
  std::vector<std::string> enums;
  for (const auto& [key, count] : presence) {
    if (2 * count < obs.size()) continue;
    const auto [name, what] = model::split_key(key);
    if (what == Characterization::Type) {
      d.enum_columns.push_back(key);
      enums.push_back(name);
    } else {
      d.numeric_columns.push_back(key);
      numeric.emplace_back(name, what);
    }
  }
  d.integral.assign(numeric.size(), true);
  for (const auto& o : obs) {
    std::vector<double> row;
    row.reserve(numeric.size());
    bool complete = true;
    for (const auto& [name, what] : numeric) {
      const auto v = o.env.find(name, what);
      if (!v) {
        complete = false;
        break;
      }
      row.push_back(stoex::as_number(*v));
    }
    std::vector<std::string> lab;
    for (std::size_t k = 0; complete && k < enums.size(); ++k) {
      const auto v = o.env.find(enums[k], Characterization::Type);
      if (!v) {
        complete = false;
        break;
      }
      lab.push_back(std::get<std::string>(*v));
    }
    if (!complete) {
      ++d.excluded;
      continue;
    }
    for (std::size_t k = 0; k < row.size(); ++k) d.integral[k] = d.integral[k] && std::floor(row[k]) == row[k];
    d.x.push_back(std::move(row));
    d.labels.push_back(std::move(lab));
    d.y.push_back(o.target);
    d.y_labels.push_back(o.label);
    d.envs.push_back(o.env);
  }
  return d;
}

/// Observations of one SEFF element across traces: internal-action response
/// times (ms), loop iteration counts or branch transition indices, each
/// paired with the parameters of the enclosing call.
inline std::vector<Observation> observations_for(const model::PerformanceModel& m, const std::string& element,
                                                 const std::vector<CallTrace>& traces) {
  const auto ref = model::find_action(m, element);
  if (!ref.action) throw RecordError("unknown model element '" + element + "'");
  std::vector<Observation> obs;
  for (const auto& trace : traces) {
    for (const auto& node : trace.nodes) {
      switch (ref.action->kind()) {
        case model::ActionKind::Internal:
          for (const auto& r : node.internals) {
            if (r.action == element) obs.push_back({node.call.params, (r.end_us - r.start_us) / 1000.0, {}});
          }
          break;
        case model::ActionKind::Loop:
          for (const auto& r : node.loops) {
            if (r.loop == element) obs.push_back({node.call.params, static_cast<double>(r.iterations), {}});
          }
          break;
        case model::ActionKind::Branch:
          for (const auto& r : node.branches) {
            if (r.branch == element) obs.push_back({node.call.params, static_cast<double>(r.transition), {}});
          }
          break;
        case model::ActionKind::External:
          throw RecordError("external call '" + element + "' needs an argument key; use argument_dataset");
      }
    }
  }
  return obs;
}

inline Dataset dataset_for(const model::PerformanceModel& m, const std::string& element,
                           const std::vector<CallTrace>& traces) {
  Dataset d = build_dataset(observations_for(m, element, traces));
  if (d.rows() == 0) throw RecordError("no observations for element '" + element + "'");
  return d;
}

/// Caller parameters paired with one argument characterization ("param.CHAR")
/// observed on the callee. Callee calls are matched to the external call by
/// target service.
inline Dataset argument_dataset(const model::PerformanceModel& m, const std::string& call_id, const std::string& key,
                                const std::vector<CallTrace>& traces) {
  const auto ref = model::find_action(m, call_id);
  if (!ref.action || ref.action->kind() != model::ActionKind::External) {
    throw RecordError("unknown external call '" + call_id + "'");
  }
  const auto& call = *ref.action->as<model::ExternalCall>();
  const auto [name, what] = model::split_key(key);
  std::vector<Observation> obs;
  std::size_t missing = 0;
  for (const auto& trace : traces) {
    for (const auto& node : trace.nodes) {
      if (node.call.service != ref.seff->service) continue;
      for (std::size_t c : node.children) {
        const auto& child = trace.nodes[c].call;
        if (child.service != call.target) continue;
        const auto v = child.params.find(name, what);
        if (!v) {
          ++missing;
          continue;
        }
        Observation o{node.call.params, 0.0, {}};
        if (const auto* s = std::get_if<std::string>(&*v)) {
          o.label = *s;
        } else {
          o.target = stoex::as_number(*v);
        }
        obs.push_back(std::move(o));
      }
    }
  }
  Dataset d = build_dataset(obs);
  d.excluded += missing;
  if (d.rows() == 0) throw RecordError("no observations for argument '" + key + "' of '" + call_id + "'");
  return d;
}

}  // namespace perfcal::records
