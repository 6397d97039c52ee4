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

// Model-level change detection and the adaptive instrumentation model.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "perfcal/detail/json.hpp"
#include "perfcal/error.hpp"
#include "perfcal/model.hpp"

namespace perfcal::instrument {

using model::Action;
using model::ActionKind;
using model::PerformanceModel;

enum class Classification { Mia, Nmia };

struct ChangeSet {
  // Per service: action ids.
  std::map<std::string, std::set<std::string>> added;
  std::map<std::string, std::set<std::string>> removed;
  std::map<std::string, std::set<std::string>> modified;
  // Every internal action of the new version.
  std::map<std::string, Classification> classification;

  std::set<std::string> mias() const { return select(Classification::Mia); }
  std::set<std::string> nmias() const { return select(Classification::Nmia); }
  bool is_mia(const std::string& id) const {
    const auto it = classification.find(id);
    return it != classification.end() && it->second == Classification::Mia;
  }
  static std::set<std::string> flatten(const std::map<std::string, std::set<std::string>>& m) {
    std::set<std::string> out;
    for (const auto& [_, ids] : m) out.insert(ids.begin(), ids.end());
    return out;
  }
  /// Added or modified element ids.
  std::set<std::string> changed() const {
    auto out = flatten(added);
    const auto mod = flatten(modified);
    out.insert(mod.begin(), mod.end());
    return out;
  }
  bool empty() const { return added.empty() && removed.empty() && modified.empty(); }

 private:
  std::set<std::string> select(Classification c) const {
    std::set<std::string> out;
    for (const auto& [id, k] : classification) {
      if (k == c) out.insert(id);
    }
    return out;
  }
};

namespace detail {

struct Entry {
  std::string service;
  std::string fingerprint;
  ActionKind kind;
};

inline std::string own_text(const Action& a) {
  if (const auto* ia = a.as<model::InternalAction>()) {
    return std::string(model::detail::to_string(ia->resource)) + "|" + stoex::to_string(ia->demand);
  }
  if (const auto* ec = a.as<model::ExternalCall>()) {
    std::string s = ec->target;
    for (const auto& [k, v] : ec->arguments) s += "|" + k + "=" + model::detail::binding_to_json(v).dump();
    return s;
  }
  if (const auto* loop = a.as<model::Loop>()) return stoex::to_string(loop->iterations);
  std::string s;
  for (const auto& t : a.as<model::Branch>()->transitions) s += stoex::to_string(t.condition) + "|";
  return s;
}

inline std::string child_structure(const std::vector<Action>& body) {
  std::string s = "[";
  for (const auto& c : body) s += std::string(model::to_string(c.kind())) + ":" + c.id() + ",";
  return s + "]";
}

inline std::string code_of(const Action& a) {
  return std::visit([](const auto& x) { return x.code; }, a.node);
}

inline void collect(const std::vector<Action>& actions, const std::string& service, const std::string& path,
                    std::map<std::string, Entry>& out) {
  for (const auto& a : actions) {
    std::string fp = a.id() + "#" + std::string(model::to_string(a.kind())) + "#" + path + "#" + own_text(a) + "#" +
                     code_of(a) + "#";
    if (const auto* loop = a.as<model::Loop>()) {
      fp += child_structure(loop->body);
      collect(loop->body, service, path + "/" + a.id(), out);
    } else if (const auto* branch = a.as<model::Branch>()) {
      for (std::size_t i = 0; i < branch->transitions.size(); ++i) {
        fp += child_structure(branch->transitions[i].body);
        collect(branch->transitions[i].body, service, path + "/" + a.id() + "." + std::to_string(i), out);
      }
    }
    out[a.id()] = Entry{service, fp, a.kind()};
  }
}

inline std::map<std::string, Entry> fingerprints(const PerformanceModel& m) {
  std::map<std::string, Entry> out;
  for (const auto& seff : m.seffs) collect(seff.actions, seff.service, seff.service, out);
  return out;
}

}  // namespace detail

/// Structural fingerprint of every action: id, kind, enclosing path, own
/// expression text, code fingerprint and the id/kind list of direct children.
inline std::map<std::string, std::string> action_fingerprints(const PerformanceModel& m) {
  std::map<std::string, std::string> out;
  for (const auto& [id, e] : detail::fingerprints(m)) out[id] = e.fingerprint;
  return out;
}

/// Model-level diff. An internal action is a MIA when it is new or its
/// fingerprint changed; every other internal action of `next` is a NMIA.
inline ChangeSet diff_models(const PerformanceModel& old, const PerformanceModel& next) {
  const auto a = detail::fingerprints(old);
  const auto b = detail::fingerprints(next);
  ChangeSet cs;
  for (const auto& [id, e] : b) {
    const auto it = a.find(id);
    if (it == a.end()) {
      cs.added[e.service].insert(id);
    } else if (it->second.fingerprint != e.fingerprint || it->second.kind != e.kind) {
      cs.modified[e.service].insert(id);
    }
    if (e.kind == ActionKind::Internal) {
      const bool changed = it == a.end() || it->second.fingerprint != e.fingerprint;
      cs.classification[id] = changed ? Classification::Mia : Classification::Nmia;
    }
  }
  for (const auto& [id, e] : a) {
    if (!b.count(id)) cs.removed[e.service].insert(id);
  }
  return cs;
}

// ---------------------------------------------------------------------------
// Instrumentation model

enum class ProbeKind { Service, Internal, Loop, Branch };

inline std::string_view to_string(ProbeKind k) {
  switch (k) {
    case ProbeKind::Service: return "service";
    case ProbeKind::Internal: return "internal";
    case ProbeKind::Loop: return "loop";
    case ProbeKind::Branch: return "branch";
  }
  return "?";
}

inline ProbeKind probe_kind_from(std::string_view s) {
  if (s == "service") return ProbeKind::Service;
  if (s == "internal") return ProbeKind::Internal;
  if (s == "loop") return ProbeKind::Loop;
  if (s == "branch") return ProbeKind::Branch;
  throw Error("unknown probe kind '" + std::string(s) + "'");
}

struct Probe {
  std::string id;
  ProbeKind kind;
  std::string target;
  bool active = false;

  friend bool operator==(const Probe&, const Probe&) = default;
};

struct InstrumentationModel {
  std::vector<Probe> probes;  // sorted by (kind, target)

  const Probe* find(ProbeKind kind, const std::string& target) const {
    for (const auto& p : probes) {
      if (p.kind == kind && p.target == target) return &p;
    }
    return nullptr;
  }
  bool is_active(ProbeKind kind, const std::string& target) const {
    const Probe* p = find(kind, target);
    return p && p->active;
  }
  std::size_t active_element_probes() const {
    std::size_t n = 0;
    for (const auto& p : probes) n += p.active && p.kind != ProbeKind::Service;
    return n;
  }
  std::size_t element_probes() const {
    std::size_t n = 0;
    for (const auto& p : probes) n += p.kind != ProbeKind::Service;
    return n;
  }

  friend bool operator==(const InstrumentationModel&, const InstrumentationModel&) = default;
};

namespace detail {

inline std::vector<Probe> all_probes(const PerformanceModel& m) {
  std::vector<Probe> out;
  for (const auto& s : m.services) out.push_back({"service:" + s.id, ProbeKind::Service, s.id, true});
  for (const auto& seff : m.seffs) {
    model::for_each_action(seff.actions, [&](const Action& a) {
      switch (a.kind()) {
        case ActionKind::Internal: out.push_back({"internal:" + a.id(), ProbeKind::Internal, a.id(), false}); break;
        case ActionKind::Loop: out.push_back({"loop:" + a.id(), ProbeKind::Loop, a.id(), false}); break;
        case ActionKind::Branch: out.push_back({"branch:" + a.id(), ProbeKind::Branch, a.id(), false}); break;
        case ActionKind::External: break;
      }
    });
  }
  std::sort(out.begin(), out.end(), [](const Probe& a, const Probe& b) {
    return std::pair(a.kind, a.target) < std::pair(b.kind, b.target);
  });
  return out;
}

}  // namespace detail

/// Every probe active: fine-grained monitoring of the whole model.
inline InstrumentationModel full_instrumentation(const PerformanceModel& m) {
  InstrumentationModel im{detail::all_probes(m)};
  for (auto& p : im.probes) p.active = true;
  return im;
}

/// Only service probes active.
inline InstrumentationModel coarse_instrumentation(const PerformanceModel& m) {
  return InstrumentationModel{detail::all_probes(m)};
}

/// Probes for `next`: service probes always on; internal probes on for
/// MIAs; loop and branch probes on when added or modified. Previous probe
/// state in `im` is superseded; probes of removed elements disappear.
inline InstrumentationModel update_instrumentation(const InstrumentationModel& /*im*/, const ChangeSet& cs,
                                                   const PerformanceModel& next, bool coarse = false) {
  InstrumentationModel out{detail::all_probes(next)};
  for (const auto& id : cs.changed()) {
    if (!model::find_action(next, id).action) {
      throw Error("probe target '" + id + "' is absent from the new model");
    }
  }
  if (coarse) return out;
  const auto changed = cs.changed();
  for (auto& p : out.probes) {
    switch (p.kind) {
      case ProbeKind::Service: p.active = true; break;
      case ProbeKind::Internal: p.active = cs.is_mia(p.target); break;
      case ProbeKind::Loop:
      case ProbeKind::Branch: p.active = changed.count(p.target) > 0; break;
    }
  }
  return out;
}

inline InstrumentationModel update_instrumentation(const ChangeSet& cs, const PerformanceModel& next,
                                                   bool coarse = false) {
  return update_instrumentation(InstrumentationModel{}, cs, next, coarse);
}

/// 1 - active element probes (adaptive) / active element probes (full).
inline double probe_overhead_reduction(const InstrumentationModel& full, const InstrumentationModel& adaptive) {
  const std::size_t base = full.active_element_probes();
  if (base == 0) throw Error("full instrumentation has no element probes");
  const double r = 1.0 - static_cast<double>(adaptive.active_element_probes()) / static_cast<double>(base);
  return std::clamp(r, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Monitoring configuration

struct MonitoringConfig {
  std::set<std::pair<ProbeKind, std::string>> active;

  bool enabled(ProbeKind kind, const std::string& target) const { return active.count({kind, target}) > 0; }

  static MonitoringConfig everything(const PerformanceModel& m) {
    MonitoringConfig c;
    for (const auto& p : full_instrumentation(m).probes) c.active.insert({p.kind, p.target});
    return c;
  }
};

inline json emit_monitoring_config(const InstrumentationModel& im) {
  json probes = json::array();
  for (const auto& p : im.probes) {
    if (p.active) probes.push_back({{"kind", to_string(p.kind)}, {"target", p.target}});
  }
  return {{"activeProbes", probes}};
}

inline MonitoringConfig parse_monitoring_config(const json& j) {
  MonitoringConfig c;
  for (const auto& p : j.at("activeProbes")) {
    c.active.insert({probe_kind_from(p.at("kind").get<std::string>()), p.at("target").get<std::string>()});
  }
  return c;
}

inline json to_json(const InstrumentationModel& im) {
  json probes = json::array();
  for (const auto& p : im.probes) {
    probes.push_back({{"id", p.id}, {"kind", to_string(p.kind)}, {"target", p.target}, {"active", p.active}});
  }
  return {{"probes", probes}};
}

inline json to_json(const ChangeSet& cs) {
  json j;
  const auto as_json = [](const std::map<std::string, std::set<std::string>>& m) {
    json o = json::object();
    for (const auto& [service, ids] : m) o[service] = ids;
    return o;
  };
  j["added"] = as_json(cs.added);
  j["removed"] = as_json(cs.removed);
  j["modified"] = as_json(cs.modified);
  j["mia"] = cs.mias();
  j["nmia"] = cs.nmias();
  return j;
}

}  // namespace perfcal::instrument
