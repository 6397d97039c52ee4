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

// Lightweight performance metamodel: components and services, SEFF action
// trees (internal actions, external calls, loops, branches), the resource
// environment, allocation and a closed-workload usage model. Models are
// plain values; copies are fully isolated (expressions are immutable).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/random.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::model {

using stoex::EvalEnv;
using stoex::StoExpr;

/// CPU and DISK are queueing resources; a DELAY demand is a pure latency
/// in seconds. DISK is scheduled like a CPU (experimental).
enum class ResourceType { Cpu, Delay, Disk };

enum class Scheduling { ProcessorSharing, Fcfs };

struct LabelChoice {
  std::string label;
  StoExpr condition;
};

/// Enum-valued binding: the first label whose condition holds (or, for
/// probabilistic conditions, one label drawn by condition probability).
struct LabelDistribution {
  std::vector<LabelChoice> choices;
};

/// Binding of one characterization ("param.CHARACTERIZATION") to an
/// expression, or for TYPE characterizations to a label distribution.
using Binding = std::variant<StoExpr, LabelDistribution>;

struct InternalAction {
  std::string id;
  ResourceType resource = ResourceType::Cpu;
  StoExpr demand;  // work-units; seconds on a host = work-units / rate
  std::string code;  // opaque fingerprint of the code region, may be empty
};

struct ExternalCall {
  std::string id;
  std::string target;
  std::map<std::string, Binding> arguments;
  std::string code;
};

struct Action;

struct Loop {
  std::string id;
  StoExpr iterations;
  std::vector<Action> body;
  std::string code;
};

struct Transition {
  StoExpr condition;
  std::vector<Action> body;
};

struct Branch {
  std::string id;
  std::vector<Transition> transitions;
  std::string code;
};

enum class ActionKind { Internal, External, Loop, Branch };

struct Action {
  std::variant<InternalAction, ExternalCall, Loop, Branch> node;

  const std::string& id() const {
    return std::visit([](const auto& a) -> const std::string& { return a.id; }, node);
  }
  ActionKind kind() const { return static_cast<ActionKind>(node.index()); }

  template <class T>
  T* as() { return std::get_if<T>(&node); }
  template <class T>
  const T* as() const { return std::get_if<T>(&node); }
};

inline std::string_view to_string(ActionKind k) {
  switch (k) {
    case ActionKind::Internal: return "internal";
    case ActionKind::External: return "external";
    case ActionKind::Loop: return "loop";
    case ActionKind::Branch: return "branch";
  }
  return "?";
}

struct Seff {
  std::string service;
  std::vector<Action> actions;
};

struct Component {
  std::string id;
};

struct Service {
  std::string id;
  std::string component;
};

struct Container {
  std::string host;
  int processors = 1;
  double rate = 1.0;  // work-units per second per processor
  Scheduling scheduling = Scheduling::ProcessorSharing;
};

struct ResourceEnvironment {
  std::vector<Container> containers;

  const Container* find(const std::string& host) const {
    for (const auto& c : containers) {
      if (c.host == host) return &c;
    }
    return nullptr;
  }
};

using Allocation = std::map<std::string, std::string>;  // component -> host

struct UsageModel {
  int population = 1;
  StoExpr think_time = stoex::double_lit(0.0);  // seconds
  std::string entry_service;
  std::map<std::string, Binding> inputs;  // "param.CHARACTERIZATION" -> distribution
};

struct PerformanceModel {
  std::string commit_id;
  std::vector<Component> components;
  std::vector<Service> services;
  std::vector<Seff> seffs;
  ResourceEnvironment resources;
  Allocation allocation;
  std::optional<UsageModel> usage;

  const Service* service(const std::string& id) const {
    for (const auto& s : services) {
      if (s.id == id) return &s;
    }
    return nullptr;
  }
  const Seff* seff_for(const std::string& service_id) const {
    for (const auto& s : seffs) {
      if (s.service == service_id) return &s;
    }
    return nullptr;
  }
  Seff* seff_for(const std::string& service_id) {
    for (auto& s : seffs) {
      if (s.service == service_id) return &s;
    }
    return nullptr;
  }
  /// Host the service's component is allocated on, if any.
  std::optional<std::string> host_of(const std::string& service_id) const {
    const Service* s = service(service_id);
    if (!s) return std::nullopt;
    const auto it = allocation.find(s->component);
    if (it == allocation.end()) return std::nullopt;
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Action tree helpers

/// Visits every action depth-first in document order.
template <class F>
void for_each_action(const std::vector<Action>& actions, F&& fn) {
  for (const auto& a : actions) {
    fn(a);
    if (const auto* loop = a.as<Loop>()) {
      for_each_action(loop->body, fn);
    } else if (const auto* branch = a.as<Branch>()) {
      for (const auto& t : branch->transitions) for_each_action(t.body, fn);
    }
  }
}

template <class F>
void for_each_action_mut(std::vector<Action>& actions, F&& fn) {
  for (auto& a : actions) {
    fn(a);
    if (auto* loop = a.as<Loop>()) {
      for_each_action_mut(loop->body, fn);
    } else if (auto* branch = a.as<Branch>()) {
      for (auto& t : branch->transitions) for_each_action_mut(t.body, fn);
    }
  }
}

struct ActionRef {
  const Action* action = nullptr;
  const Seff* seff = nullptr;
};

inline ActionRef find_action(const PerformanceModel& m, const std::string& id) {
  for (const auto& seff : m.seffs) {
    ActionRef found;
    for_each_action(seff.actions, [&](const Action& a) {
      if (!found.action && a.id() == id) found = {&a, &seff};
    });
    if (found.action) return found;
  }
  return {};
}

inline Action* find_action_mut(PerformanceModel& m, const std::string& id) {
  Action* found = nullptr;
  for (auto& seff : m.seffs) {
    for_each_action_mut(seff.actions, [&](Action& a) {
      if (!found && a.id() == id) found = &a;
    });
  }
  return found;
}

inline bool contains_external_call(const std::vector<Action>& actions) {
  bool found = false;
  for_each_action(actions, [&](const Action& a) { found = found || a.kind() == ActionKind::External; });
  return found;
}

/// A condition written purely as a probability (no parameter references).
inline bool is_probability_condition(const StoExpr& e) {
  return stoex::contains_pmf(e) && stoex::params_of(e).empty();
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::string_view to_string(ResourceType r) {
  switch (r) {
    case ResourceType::Cpu: return "CPU";
    case ResourceType::Delay: return "DELAY";
    case ResourceType::Disk: return "DISK";
  }
  return "?";
}

inline std::string_view to_string(Scheduling s) {
  return s == Scheduling::ProcessorSharing ? "PROCESSOR_SHARING" : "FCFS";
}

inline json binding_to_json(const Binding& b) {
  if (const auto* e = std::get_if<StoExpr>(&b)) return stoex::to_string(*e);
  json labels = json::array();
  for (const auto& c : std::get<LabelDistribution>(b).choices) {
    labels.push_back({{"label", c.label}, {"condition", stoex::to_string(c.condition)}});
  }
  return json{{"labels", labels}};
}

inline json actions_to_json(const std::vector<Action>& actions);

inline json action_to_json(const Action& a) {
  json j;
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        j["id"] = x.id;
        if (!x.code.empty()) j["code"] = x.code;
        if constexpr (std::is_same_v<T, InternalAction>) {
          j["kind"] = "internal";
          j["resource"] = to_string(x.resource);
          j["demand"] = stoex::to_string(x.demand);
        } else if constexpr (std::is_same_v<T, ExternalCall>) {
          j["kind"] = "external";
          j["target"] = x.target;
          json args = json::object();
          for (const auto& [k, v] : x.arguments) args[k] = binding_to_json(v);
          j["arguments"] = args;
        } else if constexpr (std::is_same_v<T, Loop>) {
          j["kind"] = "loop";
          j["iterations"] = stoex::to_string(x.iterations);
          j["body"] = actions_to_json(x.body);
        } else {
          j["kind"] = "branch";
          json ts = json::array();
          for (const auto& t : x.transitions) {
            ts.push_back({{"condition", stoex::to_string(t.condition)}, {"body", actions_to_json(t.body)}});
          }
          j["transitions"] = ts;
        }
      },
      a.node);
  return j;
}

inline json actions_to_json(const std::vector<Action>& actions) {
  json arr = json::array();
  for (const auto& a : actions) arr.push_back(action_to_json(a));
  return arr;
}

// Reader with JSON-pointer diagnostics.
class Reader {
 public:
  static const json& member(const json& obj, const std::string& key, const std::string& ptr) {
    if (!obj.is_object()) throw ModelError(ptr, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw ModelError(ptr + "/" + key, "missing mandatory field");
    return *it;
  }

  static std::string str(const json& obj, const std::string& key, const std::string& ptr) {
    const json& v = member(obj, key, ptr);
    if (!v.is_string()) throw ModelError(ptr + "/" + key, "expected a string");
    return v.get<std::string>();
  }

  static std::string opt_str(const json& obj, const std::string& key, const std::string& ptr) {
    if (!obj.contains(key)) return {};
    return str(obj, key, ptr);
  }

  static double number(const json& obj, const std::string& key, const std::string& ptr) {
    const json& v = member(obj, key, ptr);
    if (!v.is_number()) throw ModelError(ptr + "/" + key, "expected a number");
    return v.get<double>();
  }

  static const json& array(const json& obj, const std::string& key, const std::string& ptr) {
    const json& v = member(obj, key, ptr);
    if (!v.is_array()) throw ModelError(ptr + "/" + key, "expected an array");
    return v;
  }

  static StoExpr expr(const json& obj, const std::string& key, const std::string& ptr) {
    const std::string text = str(obj, key, ptr);
    try {
      return stoex::parse(text);
    } catch (const Error& e) {
      throw ModelError(ptr + "/" + key, e.what());
    }
  }

  static Binding binding(const json& v, const std::string& ptr) {
    if (v.is_string()) {
      try {
        return stoex::parse(v.get<std::string>());
      } catch (const Error& e) {
        throw ModelError(ptr, e.what());
      }
    }
    LabelDistribution dist;
    const json& labels = array(v, "labels", ptr);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::string p = ptr + "/labels/" + std::to_string(i);
      dist.choices.push_back({str(labels[i], "label", p), expr(labels[i], "condition", p)});
    }
    if (dist.choices.empty()) throw ModelError(ptr + "/labels", "label distribution needs at least one label");
    return dist;
  }

  static std::vector<Action> actions(const json& arr, const std::string& ptr) {
    std::vector<Action> out;
    for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(action(arr[i], ptr + "/" + std::to_string(i)));
    return out;
  }

  static Action action(const json& j, const std::string& ptr) {
    const std::string kind = str(j, "kind", ptr);
    const std::string id = str(j, "id", ptr);
    const std::string code = opt_str(j, "code", ptr);
    if (kind == "internal") {
      InternalAction ia{id, ResourceType::Cpu, expr(j, "demand", ptr), code};
      const std::string res = j.contains("resource") ? str(j, "resource", ptr) : "CPU";
      if (res == "CPU") {
        ia.resource = ResourceType::Cpu;
      } else if (res == "DELAY") {
        ia.resource = ResourceType::Delay;
      } else if (res == "DISK") {
        ia.resource = ResourceType::Disk;
      } else {
        throw ModelError(ptr + "/resource", "unknown resource type '" + res + "'");
      }
      return Action{ia};
    }
    if (kind == "external") {
      ExternalCall ec{id, str(j, "target", ptr), {}, code};
      if (j.contains("arguments")) {
        const json& args = j["arguments"];
        if (!args.is_object()) throw ModelError(ptr + "/arguments", "expected an object");
        for (const auto& [k, v] : args.items()) {
          const auto dot = k.rfind('.');
          if (dot == std::string::npos || !stoex::characterization_from(k.substr(dot + 1))) {
            throw ModelError(ptr + "/arguments/" + k, "argument key must be 'param.CHARACTERIZATION'");
          }
          ec.arguments.emplace(k, binding(v, ptr + "/arguments/" + k));
        }
      }
      return Action{ec};
    }
    if (kind == "loop") {
      return Action{Loop{id, expr(j, "iterations", ptr), actions(array(j, "body", ptr), ptr + "/body"), code}};
    }
    if (kind == "branch") {
      Branch b{id, {}, code};
      const json& ts = array(j, "transitions", ptr);
      for (std::size_t i = 0; i < ts.size(); ++i) {
        const std::string p = ptr + "/transitions/" + std::to_string(i);
        b.transitions.push_back({expr(ts[i], "condition", p), actions(array(ts[i], "body", p), p + "/body")});
      }
      return Action{b};
    }
    throw ModelError(ptr + "/kind", "unknown action kind '" + kind + "'");
  }
};

}  // namespace detail

inline json to_json(const PerformanceModel& m) {
  json j;
  j["commitId"] = m.commit_id;
  json comps = json::array();
  for (const auto& c : m.components) comps.push_back({{"id", c.id}});
  j["components"] = comps;
  json services = json::array();
  for (const auto& s : m.services) services.push_back({{"id", s.id}, {"component", s.component}});
  j["services"] = services;
  json seffs = json::array();
  for (const auto& s : m.seffs) seffs.push_back({{"service", s.service}, {"actions", detail::actions_to_json(s.actions)}});
  j["seffs"] = seffs;
  json containers = json::array();
  for (const auto& c : m.resources.containers) {
    containers.push_back({{"host", c.host},
                          {"processors", c.processors},
                          {"rate", c.rate},
                          {"scheduling", detail::to_string(c.scheduling)}});
  }
  j["resourceEnvironment"] = {{"containers", containers}};
  j["allocation"] = m.allocation;
  if (m.usage) {
    json inputs = json::object();
    for (const auto& [k, v] : m.usage->inputs) inputs[k] = detail::binding_to_json(v);
    j["usageModel"] = {{"population", m.usage->population},
                       {"thinkTime", stoex::to_string(m.usage->think_time)},
                       {"entryService", m.usage->entry_service},
                       {"inputs", inputs}};
  }
  return j;
}

/// Canonical text: sorted keys, two-space indent, trailing newline.
inline std::string to_canonical_string(const PerformanceModel& m) { return to_json(m).dump(2) + "\n"; }

inline void validate(const PerformanceModel& m);

inline PerformanceModel from_json(const json& j) {
  using R = detail::Reader;
  if (!j.is_object()) throw ModelError("", "model document must be an object");
  PerformanceModel m;
  m.commit_id = j.contains("commitId") && !j["commitId"].is_null() ? R::str(j, "commitId", "") : "";
  const json& comps = R::array(j, "components", "");
  for (std::size_t i = 0; i < comps.size(); ++i) m.components.push_back({R::str(comps[i], "id", "/components/" + std::to_string(i))});
  const json& services = R::array(j, "services", "");
  for (std::size_t i = 0; i < services.size(); ++i) {
    const std::string p = "/services/" + std::to_string(i);
    m.services.push_back({R::str(services[i], "id", p), R::str(services[i], "component", p)});
  }
  const json& seffs = R::array(j, "seffs", "");
  for (std::size_t i = 0; i < seffs.size(); ++i) {
    const std::string p = "/seffs/" + std::to_string(i);
    m.seffs.push_back({R::str(seffs[i], "service", p), R::Reader::actions(R::array(seffs[i], "actions", p), p + "/actions")});
  }
  const json& env = R::member(j, "resourceEnvironment", "");
  const json& containers = R::array(env, "containers", "/resourceEnvironment");
  for (std::size_t i = 0; i < containers.size(); ++i) {
    const std::string p = "/resourceEnvironment/containers/" + std::to_string(i);
    Container c;
    c.host = R::str(containers[i], "host", p);
    c.processors = static_cast<int>(R::number(containers[i], "processors", p));
    c.rate = R::number(containers[i], "rate", p);
    const std::string sched = containers[i].contains("scheduling") ? R::str(containers[i], "scheduling", p) : "PROCESSOR_SHARING";
    if (sched == "PROCESSOR_SHARING") {
      c.scheduling = Scheduling::ProcessorSharing;
    } else if (sched == "FCFS") {
      c.scheduling = Scheduling::Fcfs;
    } else {
      throw ModelError(p + "/scheduling", "unknown scheduling '" + sched + "'");
    }
    m.resources.containers.push_back(c);
  }
  const json& alloc = R::member(j, "allocation", "");
  if (!alloc.is_object()) throw ModelError("/allocation", "expected an object");
  for (const auto& [k, v] : alloc.items()) {
    if (!v.is_string()) throw ModelError("/allocation/" + k, "expected a host id");
    m.allocation[k] = v.get<std::string>();
  }
  if (j.contains("usageModel") && !j["usageModel"].is_null()) {
    const json& u = j["usageModel"];
    UsageModel usage;
    usage.population = static_cast<int>(R::number(u, "population", "/usageModel"));
    usage.think_time = R::expr(u, "thinkTime", "/usageModel");
    usage.entry_service = R::str(u, "entryService", "/usageModel");
    if (u.contains("inputs")) {
      for (const auto& [k, v] : u["inputs"].items()) usage.inputs.emplace(k, R::binding(v, "/usageModel/inputs/" + k));
    }
    m.usage = std::move(usage);
  }
  validate(m);
  return m;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void validate_actions(const PerformanceModel& m, const std::vector<Action>& actions, const std::string& ptr,
                             std::set<std::string>& ids) {
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const Action& a = actions[i];
    const std::string p = ptr + "/" + std::to_string(i);
    if (a.id().empty()) throw ModelError(p + "/id", "action id must not be empty");
    if (!ids.insert(a.id()).second) throw ModelError(p + "/id", "duplicate action id '" + a.id() + "'");
    if (const auto* ec = a.as<ExternalCall>()) {
      if (!m.service(ec->target)) {
        throw ModelError(p + "/target", "external call '" + ec->id + "' targets unknown service '" + ec->target + "'");
      }
    } else if (const auto* loop = a.as<Loop>()) {
      if (!contains_external_call(loop->body)) {
        throw ModelError(p, "loop '" + loop->id + "' body contains no external call");
      }
      validate_actions(m, loop->body, p + "/body", ids);
    } else if (const auto* branch = a.as<Branch>()) {
      if (branch->transitions.empty()) throw ModelError(p, "branch '" + branch->id + "' has no transitions");
      bool all_probability = true;
      double total = 0.0;
      for (std::size_t t = 0; t < branch->transitions.size(); ++t) {
        const auto& tr = branch->transitions[t];
        const std::string tp = p + "/transitions/" + std::to_string(t);
        if (!contains_external_call(tr.body)) {
          throw ModelError(tp + "/body", "branch '" + branch->id + "' transition " + std::to_string(t) +
                                             " body contains no external call");
        }
        if (is_probability_condition(tr.condition)) {
          total += stoex::expectation(tr.condition);
        } else {
          all_probability = false;
        }
        validate_actions(m, tr.body, tp + "/body", ids);
      }
      if (all_probability && std::abs(total - 1.0) > 1e-9) {
        throw ModelError(p, "branch '" + branch->id + "' transition probabilities sum to " + std::to_string(total));
      }
    }
  }
}

}  // namespace detail

/// Structural validation; throws ModelError locating the first violation.
inline void validate(const PerformanceModel& m) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.components.size(); ++i) {
    if (!seen.insert(m.components[i].id).second) {
      throw ModelError("/components/" + std::to_string(i), "duplicate component '" + m.components[i].id + "'");
    }
  }
  std::set<std::string> service_ids;
  for (std::size_t i = 0; i < m.services.size(); ++i) {
    const auto& s = m.services[i];
    const std::string p = "/services/" + std::to_string(i);
    if (!service_ids.insert(s.id).second) throw ModelError(p, "duplicate service '" + s.id + "'");
    if (!seen.count(s.component)) throw ModelError(p + "/component", "unknown component '" + s.component + "'");
  }
  std::set<std::string> hosts;
  for (std::size_t i = 0; i < m.resources.containers.size(); ++i) {
    const auto& c = m.resources.containers[i];
    const std::string p = "/resourceEnvironment/containers/" + std::to_string(i);
    if (!hosts.insert(c.host).second) throw ModelError(p, "duplicate host '" + c.host + "'");
    if (c.processors < 1) throw ModelError(p + "/processors", "processor count must be >= 1");
    if (!(c.rate > 0.0)) throw ModelError(p + "/rate", "processing rate must be > 0");
  }
  for (const auto& [component, host] : m.allocation) {
    if (!seen.count(component)) throw ModelError("/allocation/" + component, "unknown component");
    if (!hosts.count(host)) throw ModelError("/allocation/" + component, "unknown host '" + host + "'");
  }
  std::set<std::string> seff_services;
  std::set<std::string> action_ids;
  for (std::size_t i = 0; i < m.seffs.size(); ++i) {
    const auto& seff = m.seffs[i];
    const std::string p = "/seffs/" + std::to_string(i);
    if (!m.service(seff.service)) throw ModelError(p + "/service", "SEFF for unknown service '" + seff.service + "'");
    if (!seff_services.insert(seff.service).second) throw ModelError(p, "second SEFF for service '" + seff.service + "'");
    if (!m.host_of(seff.service)) {
      throw ModelError(p + "/service", "service '" + seff.service + "' has no allocated component");
    }
    detail::validate_actions(m, seff.actions, p + "/actions", action_ids);
  }
  if (m.usage) {
    if (m.usage->population < 1) throw ModelError("/usageModel/population", "population must be >= 1");
    if (!m.service(m.usage->entry_service)) {
      throw ModelError("/usageModel/entryService", "unknown entry service '" + m.usage->entry_service + "'");
    }
  }
}

inline PerformanceModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("", "cannot open model file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ModelError("", "invalid JSON in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

inline void save_model(const PerformanceModel& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ModelError("", "cannot write model file " + path.string());
  out << to_canonical_string(m);
}

// ---------------------------------------------------------------------------
// Version management

struct ModelVersion {
  std::string commit;
  std::optional<std::string> parent;
  PerformanceModel model;
};

/// Append-only store of model snapshots keyed by commit id. Writers are
/// serialized; readers run concurrently and receive copies.
class VersionStore {
 public:
  VersionStore() = default;
  VersionStore(VersionStore&& other) noexcept
      : versions_(std::move(other.versions_)), order_(std::move(other.order_)) {}

  ModelVersion store(const std::string& commit, PerformanceModel model, std::optional<std::string> parent = std::nullopt) {
    std::unique_lock lock(mutex_);
    if (versions_.count(commit)) throw ModelError("", "commit '" + commit + "' already stored");
    if (parent && !versions_.count(*parent)) throw ModelError("", "unknown parent commit '" + *parent + "'");
    if (!parent && !order_.empty()) parent = order_.back();
    model.commit_id = commit;
    ModelVersion v{commit, parent, std::move(model)};
    versions_.emplace(commit, v);
    order_.push_back(commit);
    return v;
  }

  PerformanceModel get(const std::string& commit) const { return version(commit).model; }

  ModelVersion version(const std::string& commit) const {
    std::shared_lock lock(mutex_);
    const auto it = versions_.find(commit);
    if (it == versions_.end()) throw ModelError("", "unknown commit '" + commit + "'");
    return it->second;
  }

  bool contains(const std::string& commit) const {
    std::shared_lock lock(mutex_);
    return versions_.count(commit) > 0;
  }

  std::vector<std::string> commits() const {
    std::shared_lock lock(mutex_);
    return order_;
  }

  std::optional<std::string> latest() const {
    std::shared_lock lock(mutex_);
    if (order_.empty()) return std::nullopt;
    return order_.back();
  }

  /// Persists as <dir>/index.json plus one canonical model file per commit.
  void save(const std::filesystem::path& dir) const {
    std::shared_lock lock(mutex_);
    std::filesystem::create_directories(dir);
    json index = json::array();
    for (const auto& c : order_) {
      const auto& v = versions_.at(c);
      index.push_back({{"commit", c}, {"parent", v.parent ? json(*v.parent) : json(nullptr)}});
      save_model(v.model, dir / (c + ".json"));
    }
    std::ofstream(dir / "index.json") << index.dump(2) << "\n";
  }

  static VersionStore load(const std::filesystem::path& dir) {
    VersionStore s;
    std::ifstream in(dir / "index.json");
    if (!in) return s;
    const json index = json::parse(in);
    for (const auto& e : index) {
      const std::string commit = e.at("commit").get<std::string>();
      std::optional<std::string> parent;
      if (!e.at("parent").is_null()) parent = e.at("parent").get<std::string>();
      s.versions_.emplace(commit, ModelVersion{commit, parent, load_model(dir / (commit + ".json"))});
      s.order_.push_back(commit);
    }
    return s;
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, ModelVersion> versions_;
  std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------
// Control-flow semantics shared by traversal and simulation

enum class WalkMode { Evaluate, Sample };

/// Non-negative integral iteration count of a loop.
inline std::int64_t loop_count(const Loop& loop, const EvalEnv& env, WalkMode mode, Rng* rng) {
  const stoex::Value v = mode == WalkMode::Evaluate ? stoex::evaluate(loop.iterations, env)
                                                    : stoex::sample(loop.iterations, env, *rng);
  const double n = stoex::as_number(v);
  const double r = std::round(n);
  if (std::abs(n - r) > 1e-9) throw EvalError("loop '" + loop.id + "' iteration count is not an integer");
  if (r < 0) throw EvalError("loop '" + loop.id + "' iteration count is negative");
  return static_cast<std::int64_t>(r);
}

/// Index of the transition taken. Evaluate mode: first true condition.
/// Sample mode: deterministic conditions behave as in evaluate mode; when
/// any condition is stochastic, a transition is drawn with weight equal to
/// the probability of its condition being true.
inline std::size_t choose_transition(const Branch& branch, const EvalEnv& env, WalkMode mode, Rng* rng) {
  bool stochastic = false;
  if (mode == WalkMode::Sample) {
    for (const auto& t : branch.transitions) stochastic = stochastic || stoex::contains_pmf(t.condition);
  }
  if (!stochastic) {
    for (std::size_t i = 0; i < branch.transitions.size(); ++i) {
      if (stoex::as_bool(stoex::evaluate(branch.transitions[i].condition, env))) return i;
    }
    throw EvalError("branch '" + branch.id + "': no transition condition is true");
  }
  std::vector<double> weights;
  double total = 0.0;
  for (const auto& t : branch.transitions) {
    const double p = std::clamp(stoex::expectation(t.condition, env), 0.0, 1.0);
    weights.push_back(p);
    total += p;
  }
  if (!(total > 0.0)) throw EvalError("branch '" + branch.id + "': no transition condition is true");
  const double u = rng->uniform() * total;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cumulative += weights[i];
    if (u < cumulative) return i;
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

/// Value of a label binding; same selection rule as branch transitions.
inline std::string choose_label(const LabelDistribution& dist, const EvalEnv& env, WalkMode mode, Rng* rng) {
  Branch pseudo{"labels", {}, {}};
  for (const auto& c : dist.choices) pseudo.transitions.push_back({c.condition, {}});
  return dist.choices[choose_transition(pseudo, env, mode, rng)].label;
}

/// Splits "param.CHARACTERIZATION".
inline std::pair<std::string, stoex::Characterization> split_key(const std::string& key) {
  const auto dot = key.rfind('.');
  if (dot == std::string::npos) throw ModelError("", "binding key '" + key + "' lacks a characterization");
  const auto what = stoex::characterization_from(key.substr(dot + 1));
  if (!what) throw ModelError("", "binding key '" + key + "' has an unknown characterization");
  return {key.substr(0, dot), *what};
}

/// Environment of a callee built from argument bindings evaluated in the
/// caller's environment.
inline EvalEnv bind_arguments(const std::map<std::string, Binding>& bindings, const EvalEnv& caller, WalkMode mode,
                              Rng* rng) {
  EvalEnv env;
  for (const auto& [key, binding] : bindings) {
    const auto [name, what] = split_key(key);
    if (const auto* e = std::get_if<StoExpr>(&binding)) {
      env.set(name, what, mode == WalkMode::Evaluate ? stoex::evaluate(*e, caller) : stoex::sample(*e, caller, *rng));
    } else {
      env.set(name, what, choose_label(std::get<LabelDistribution>(binding), caller, mode, rng));
    }
  }
  return env;
}

// ---------------------------------------------------------------------------
// SEFF traversal

struct Visit {
  std::string action;
  ActionKind kind;
  double demand = 0.0;  // work-units, internal actions only
};

struct TraversalTrace {
  std::vector<Visit> visits;
  double total_demand = 0.0;
};

namespace detail {

inline void walk(const std::vector<Action>& actions, const EvalEnv& env, WalkMode mode, Rng* rng, TraversalTrace& out) {
  for (const auto& a : actions) {
    if (const auto* ia = a.as<InternalAction>()) {
      const stoex::Value v = mode == WalkMode::Evaluate ? stoex::evaluate(ia->demand, env)
                                                        : stoex::sample(ia->demand, env, *rng);
      const double d = stoex::as_number(v);
      out.visits.push_back({ia->id, ActionKind::Internal, d});
      out.total_demand += d;
    } else if (const auto* ec = a.as<ExternalCall>()) {
      out.visits.push_back({ec->id, ActionKind::External, 0.0});
    } else if (const auto* loop = a.as<Loop>()) {
      out.visits.push_back({loop->id, ActionKind::Loop, 0.0});
      const auto n = loop_count(*loop, env, mode, rng);
      for (std::int64_t i = 0; i < n; ++i) walk(loop->body, env, mode, rng, out);
    } else if (const auto* branch = a.as<Branch>()) {
      out.visits.push_back({branch->id, ActionKind::Branch, 0.0});
      walk(branch->transitions[choose_transition(*branch, env, mode, rng)].body, env, mode, rng, out);
    }
  }
}

}  // namespace detail

/// Expands a SEFF under `env`: loops repeat their body, one transition per
/// branch is taken, and each internal-action visit records its demand.
/// External calls are recorded but not entered.
inline TraversalTrace walk_seff(const Seff& seff, const EvalEnv& env, WalkMode mode = WalkMode::Evaluate,
                                Rng* rng = nullptr) {
  if (mode == WalkMode::Sample && !rng) throw EvalError("walk_seff: sample mode needs a random stream");
  TraversalTrace out;
  detail::walk(seff.actions, env, mode, rng, out);
  return out;
}

}  // namespace perfcal::model
