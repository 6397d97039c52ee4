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

// Dev-time calibration and Ops-time self-validation pipelines.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "perfcal/deplearn.hpp"
#include "perfcal/instrument.hpp"
#include "perfcal/model.hpp"
#include "perfcal/pipeline/usage.hpp"
#include "perfcal/rde.hpp"
#include "perfcal/records.hpp"
#include "perfcal/validate.hpp"

namespace perfcal::pipeline {

struct PipelineConfig {
  std::string old_model;  // empty: first commit
  std::string new_model;
  std::string records;
  std::string out_dir = "out";
  std::string commit_id;
  double train_ratio = 0.7;
  std::uint64_t split_seed = 0;
  double low_utilization = 0.20;
  std::size_t reps = 100;
  std::size_t sim_calls = 5000;
  double ks_threshold = 0.20;
  double deployment_threshold = 0.95;
  std::uint64_t seed = 0;
  bool parametric = true;  // false: distributions only, no dependencies
  bool apply = false;      // apply detected deployment changes
  unsigned threads = 1;

  static PipelineConfig from_json(const json& j) {
    PipelineConfig c;
    c.old_model = j.value("oldModel", c.old_model);
    c.new_model = j.value("newModel", c.new_model);
    c.records = j.value("records", c.records);
    c.out_dir = j.value("outDir", c.out_dir);
    c.commit_id = j.value("commitId", c.commit_id);
    c.train_ratio = j.value("trainRatio", c.train_ratio);
    c.split_seed = j.value("splitSeed", c.split_seed);
    c.low_utilization = j.value("lowUtilization", c.low_utilization);
    c.reps = j.value("reps", c.reps);
    c.sim_calls = j.value("simCalls", c.sim_calls);
    c.ks_threshold = j.value("ksThreshold", c.ks_threshold);
    c.deployment_threshold = j.value("deploymentThreshold", c.deployment_threshold);
    c.seed = j.value("seed", c.seed);
    c.parametric = j.value("parametric", c.parametric);
    c.apply = j.value("apply", c.apply);
    c.threads = j.value("threads", c.threads);
    c.check();
    return c;
  }

  json to_json() const {
    return {{"oldModel", old_model},       {"newModel", new_model},     {"records", records},
            {"outDir", out_dir},           {"commitId", commit_id},     {"trainRatio", train_ratio},
            {"splitSeed", split_seed},     {"lowUtilization", low_utilization}, {"reps", reps},
            {"simCalls", sim_calls},       {"ksThreshold", ks_threshold},
            {"deploymentThreshold", deployment_threshold}, {"seed", seed}, {"parametric", parametric},
            {"apply", apply},              {"threads", threads}};
  }

  void check() const {
    const auto unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!unit(train_ratio)) throw Error("config: trainRatio must lie in (0,1)");
    if (!unit(low_utilization)) throw Error("config: lowUtilization must lie in (0,1)");
    if (!unit(ks_threshold)) throw Error("config: ksThreshold must lie in (0,1)");
    if (!unit(deployment_threshold)) throw Error("config: deploymentThreshold must lie in (0,1)");
    if (reps < 1) throw Error("config: reps must be >= 1");
    if (sim_calls < 1) throw Error("config: simCalls must be >= 1");
  }

  validate::ValidationConfig validation() const {
    validate::ValidationConfig v;
    v.reps = reps;
    v.base_seed = seed;
    v.threshold = ks_threshold;
    v.sim.max_calls = sim_calls;
    v.threads = threads;
    return v;
  }
};

/// Wall time per stage in seconds.
struct StageTiming {
  double load_records = 0.0;
  double calibration = 0.0;
  double usage_adjustment = 0.0;
  double self_validation = 0.0;
  double total = 0.0;

  json to_json() const {
    return {{"Load Records", load_records},
            {"PM Calibration", calibration},
            {"UM Adjustment", usage_adjustment},
            {"Self-Validation", self_validation},
            {"Total", total}};
  }
};

namespace detail {

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - start_).count();
    start_ = now;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

// Runs `fn`, prefixing errors with the stage name.
template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const CalibrationError&) {
    throw;
  } catch (const std::exception& e) {
    throw CalibrationError(name, e.what());
  }
}

inline std::vector<std::string> external_keys(const model::ExternalCall& call, const model::PerformanceModel& m,
                                              const std::vector<CallTrace>& traces) {
  std::set<std::string> keys;
  for (const auto& [k, _] : call.arguments) keys.insert(k);
  const auto ref = model::find_action(m, call.id);
  for (const auto& t : traces) {
    for (const auto& n : t.nodes) {
      if (n.call.service != ref.seff->service) continue;
      for (std::size_t c : n.children) {
        const auto& child = t.nodes[c].call;
        if (child.service != call.target) continue;
        for (const auto& [name, p] : child.params.params()) {
          if (p.value) keys.insert(name + ".VALUE");
          if (p.number_of_elements) keys.insert(name + ".NUMBER_OF_ELEMENTS");
          if (p.byte_size) keys.insert(name + ".BYTESIZE");
          if (p.type) keys.insert(name + ".TYPE");
        }
      }
    }
  }
  return {keys.begin(), keys.end()};
}

}  // namespace detail

/// Model calibration from a record batch: loops and branches first, then
/// external-call arguments, then incremental resource demand estimation
/// for the modified internal actions. Only changed elements are
/// re-learned; every other parameter keeps its expression.
struct CalibrationOutcome {
  model::PerformanceModel model;
  instrument::ChangeSet changes;
  instrument::InstrumentationModel instrumentation;
  std::vector<CallTrace> train;
  std::vector<CallTrace> validation;
  std::optional<UsageAdjustment> usage;
  std::optional<validate::ValidationReport> report;
  StageTiming timing;
  json diagnostics = json::object();  // per PMP
  std::vector<std::string> warnings;
  json records = json::object();
  json rde = json::object();

  bool pass() const { return report && report->pass; }

  json to_json() const {
    json j;
    j["commitId"] = model.commit_id;
    j["changes"] = instrument::to_json(changes);
    j["instrumentation"] = instrument::emit_monitoring_config(instrumentation);
    j["records"] = records;
    j["pmps"] = diagnostics;
    j["rde"] = rde;
    j["warnings"] = warnings;
    if (usage) j["usageModel"] = usage->to_json();
    if (report) j["validation"] = report->to_json();
    j["timing"] = timing.to_json();
    j["verdict"] = report ? report->verdict() : "NONE";
    return j;
  }
};

struct CalibrateOptions {
  bool validate = true;  // run usage adjustment and self-validation
};

inline CalibrationOutcome calibrate(const model::PerformanceModel* old, const model::PerformanceModel& next,
                                    const records::RecordBatch& batch, const PipelineConfig& cfg,
                                    const CalibrateOptions& opt = {}) {
  cfg.check();
  detail::Stopwatch total, sw;
  CalibrationOutcome out;
  out.model = next;
  if (!cfg.commit_id.empty()) out.model.commit_id = cfg.commit_id;

  // Load: correlation and train / validation split.
  const auto corr = detail::stage("Load Records", [&] { return records::correlate(batch); });
  const auto split =
      detail::stage("Load Records", [&] { return records::split_train_validation(corr.traces, cfg.train_ratio, cfg.split_seed); });
  out.train = split.train;
  out.validation = split.validation;
  out.records = {{"counts", batch.counts()},
                 {"diagnostics", batch.diagnostics.size()},
                 {"traces", corr.traces.size()},
                 {"orphanedRecords", corr.orphaned_records},
                 {"train", split.train.size()},
                 {"validation", split.validation.size()}};
  out.timing.load_records = sw.lap();

  detail::stage("PM Calibration", [&] {
    const model::PerformanceModel empty;
    out.changes = instrument::diff_models(old ? *old : empty, next);
    out.instrumentation = instrument::update_instrumentation(out.changes, next);
    const auto changed = out.changes.changed();
    deplearn::LearnConfig lc;
    lc.seed = cfg.seed;
    lc.parametric = cfg.parametric;

    // Loops and branches.
    for (auto& seff : out.model.seffs) {
      model::for_each_action_mut(seff.actions, [&](model::Action& a) {
        if (!changed.count(a.id())) return;
        try {
          if (auto* loop = a.as<model::Loop>()) {
            const auto r = deplearn::learn_loop(records::dataset_for(out.model, loop->id, split.train), lc);
            loop->iterations = r.expression;
            out.diagnostics[loop->id] = r.to_json();
          } else if (auto* br = a.as<model::Branch>()) {
            const auto r = deplearn::learn_branch(records::dataset_for(out.model, br->id, split.train),
                                                  br->transitions.size(), lc);
            json d = json::array();
            for (std::size_t t = 0; t < r.size(); ++t) {
              br->transitions[t].condition = r[t].expression;
              d.push_back(r[t].to_json());
            }
            out.diagnostics[br->id] = d;
          }
        } catch (const RecordError& e) {
          out.warnings.push_back(std::string(e.what()) + "; keeping the previous expression");
        }
      });
    }

    // External-call arguments.
    for (auto& seff : out.model.seffs) {
      model::for_each_action_mut(seff.actions, [&](model::Action& a) {
        auto* call = a.as<model::ExternalCall>();
        if (!call || !changed.count(call->id)) return;
        json d = json::object();
        for (const auto& key : detail::external_keys(*call, out.model, split.train)) {
          try {
            const auto r =
                deplearn::learn_external_args(records::argument_dataset(out.model, call->id, key, split.train), key, lc);
            call->arguments[key] = r.binding;
            d[key] = {{"binding", model::detail::binding_to_json(r.binding)}, {"method", r.method}};
          } catch (const RecordError& e) {
            out.warnings.push_back(std::string(e.what()) + "; keeping the previous binding");
          }
        }
        out.diagnostics[call->id] = d;
      });
    }

    // Incremental resource demand estimation for the MIAs.
    std::vector<CallTrace> all = split.train;
    all.insert(all.end(), split.validation.begin(), split.validation.end());
    std::vector<bool> training(all.size(), false);
    std::fill(training.begin(), training.begin() + static_cast<std::ptrdiff_t>(split.train.size()), true);
    rde::RdeConfig rc;
    rc.low_utilization = cfg.low_utilization;
    const auto est = rde::estimate(out.model, out.changes, all, batch.utilizations, &training, rc);
    std::size_t low = 0, clamped = 0;
    for (const auto& w : est.windows) {
      low += w.low_utilization && !w.stats.mias.empty();
      clamped += w.clamp_residual < 0.0;
    }
    out.rde = {{"windows", est.windows.size()}, {"lowUtilizationWindows", low}, {"clampedWindows", clamped},
               {"observations", est.observations.size()}};
    out.warnings.insert(out.warnings.end(), est.warnings.begin(), est.warnings.end());
    for (const auto& id : out.changes.mias()) {
      model::Action* act = model::find_action_mut(out.model, id);
      auto* ia = act ? act->as<model::InternalAction>() : nullptr;
      if (!ia) continue;
      if (ia->resource == model::ResourceType::Delay) {
        // Pure latency: the measured response time is the demand.
        std::vector<records::Observation> obs;
        for (const auto& t : split.train) {
          for (const auto& n : t.nodes) {
            for (const auto& r : n.internals) {
              if (r.action == id) obs.push_back({n.call.params, static_cast<double>(r.end_us - r.start_us) / 1e6, {}});
            }
          }
        }
        if (obs.empty()) {
          out.warnings.push_back("no observations for delay '" + id + "'; keeping the previous expression");
          continue;
        }
        const auto r = deplearn::learn_rd(records::build_dataset(obs), lc);
        ia->demand = r.expression;
        out.diagnostics[id] = r.to_json();
        continue;
      }
      const auto data = rde::rd_dataset(est.observations, id);
      if (data.rows() == 0) {
        out.warnings.push_back("no demand observations for '" + id + "'; keeping the previous expression");
        continue;
      }
      const auto r = deplearn::learn_rd(data, lc);
      ia->demand = r.expression;
      out.diagnostics[id] = r.to_json();
    }
    model::validate(out.model);
  });
  out.timing.calibration = sw.lap();

  if (opt.validate) {
    // Think times need consecutive calls of a session, so the usage model
    // comes from every trace; response times come from the validation part.
    out.usage = detail::stage("UM Adjustment", [&] { return adjust_usage(corr.traces); });
    out.model.usage = out.usage->usage;
    out.timing.usage_adjustment = sw.lap();
    out.report = detail::stage("Self-Validation", [&] {
      return validate::self_validate(out.model, out.usage->usage, measured_samples(split.validation), cfg.validation());
    });
    out.timing.self_validation = sw.lap();
  }
  out.timing.total = total.lap();
  return out;
}

// ---------------------------------------------------------------------------
// Ops time

struct OpsOutcome {
  UsageAdjustment usage;
  DeploymentReport deployment;
  validate::ValidationReport report;
  std::vector<std::string> stale_services;
  std::vector<std::string> stale_pmps;
  instrument::InstrumentationModel instrumentation;
  model::PerformanceModel model;  // with the adjusted usage (and deployment when applied)
  StageTiming timing;

  json to_json() const {
    return {{"usageModel", usage.to_json()},
            {"deployment", deployment.to_json()},
            {"validation", report.to_json()},
            {"staleServices", stale_services},
            {"stalePmps", stale_pmps},
            {"instrumentation", instrument::emit_monitoring_config(instrumentation)},
            {"timing", timing.to_json()},
            {"verdict", report.verdict()}};
  }
};

/// Services whose average KS lies in the top quartile (>= inclusive Q3).
inline std::vector<std::string> stale_services(const std::map<std::string, double>& service_ks) {
  if (service_ks.empty()) return {};
  std::vector<double> v;
  for (const auto& [_, ks] : service_ks) v.push_back(ks);
  std::sort(v.begin(), v.end());
  const double q3 = validate::quantile_sorted(v, 0.75);
  std::vector<std::string> out;
  for (const auto& [s, ks] : service_ks) {
    if (ks >= q3) out.push_back(s);
  }
  return out;
}

inline OpsOutcome opstime(const model::PerformanceModel& m, const records::RecordBatch& batch, const PipelineConfig& cfg) {
  cfg.check();
  detail::Stopwatch total, sw;
  OpsOutcome out;
  const auto corr = detail::stage("Load Records", [&] { return records::correlate(batch); });
  out.timing.load_records = sw.lap();
  out.model = m;
  out.usage = detail::stage("UM Adjustment", [&] { return adjust_usage(corr.traces); });
  out.deployment = detail::stage("UM Adjustment", [&] {
    return detect_deployment_changes(corr.traces, m, cfg.deployment_threshold);
  });
  out.model.usage = out.usage.usage;
  if (cfg.apply) apply_deployment(out.model, out.deployment);
  out.timing.usage_adjustment = sw.lap();
  out.report = detail::stage("Self-Validation", [&] {
    return validate::self_validate(out.model, out.usage.usage, measured_samples(corr.traces), cfg.validation());
  });
  out.timing.self_validation = sw.lap();

  out.instrumentation = instrument::coarse_instrumentation(out.model);
  if (!out.report.pass) {
    out.stale_services = stale_services(out.report.service_ks);
    const std::set<std::string> stale(out.stale_services.begin(), out.stale_services.end());
    for (const auto& seff : out.model.seffs) {
      if (!stale.count(seff.service)) continue;
      model::for_each_action(seff.actions, [&](const model::Action& a) {
        if (a.kind() != model::ActionKind::External) out.stale_pmps.push_back(a.id());
        for (auto& p : out.instrumentation.probes) {
          if (p.target == a.id()) p.active = true;
        }
      });
    }
  }
  out.timing.total = total.lap();
  return out;
}

// ---------------------------------------------------------------------------
// File-based entry points

inline records::RecordBatch load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RecordError("cannot open records file '" + path.string() + "'");
  return records::parse_records(in);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::string timing_text(const StageTiming& t) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "Stage timing (s)\n  Load Records     %9.3f\n  PM Calibration   %9.3f\n  UM Adjustment    %9.3f\n"
                "  Self-Validation  %9.3f\n  Total            %9.3f\n",
                t.load_records, t.calibration, t.usage_adjustment, t.self_validation, t.total);
  return buf;
}

/// Reads models and records named in `cfg`, calibrates, and writes
/// model.json, instrumentation.json, report.json and report.txt.
inline CalibrationOutcome devtime_pipeline(const PipelineConfig& cfg) {
  detail::Stopwatch sw;
  const auto next = detail::stage("Load Records", [&] { return model::load_model(cfg.new_model); });
  std::optional<model::PerformanceModel> old;
  if (!cfg.old_model.empty()) old = detail::stage("Load Records", [&] { return model::load_model(cfg.old_model); });
  const auto batch = detail::stage("Load Records", [&] { return load_records(cfg.records); });
  const double load = sw.lap();
  auto out = calibrate(old ? &*old : nullptr, next, batch, cfg);
  out.timing.load_records += load;
  out.timing.total += load;

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  model::save_model(out.model, dir / "model.json");
  write_text(dir / "instrumentation.json", instrument::to_json(out.instrumentation).dump(2) + "\n");
  write_text(dir / "report.json", out.to_json().dump(2) + "\n");
  std::string text = "Calibration of " + out.model.commit_id + "\n\n";
  if (out.report) text += out.report->to_text() + "\n";
  text += timing_text(out.timing);
  for (const auto& w : out.warnings) text += "warning: " + w + "\n";
  write_text(dir / "report.txt", text);
  return out;
}

inline OpsOutcome opstime_pipeline(const PipelineConfig& cfg) {
  detail::Stopwatch sw;
  const auto m = detail::stage("Load Records", [&] { return model::load_model(cfg.new_model); });
  const auto batch = detail::stage("Load Records", [&] { return load_records(cfg.records); });
  const double load = sw.lap();
  auto out = opstime(m, batch, cfg);
  out.timing.load_records += load;
  out.timing.total += load;

  const std::filesystem::path dir(cfg.out_dir);
  std::filesystem::create_directories(dir);
  model::save_model(out.model, dir / "model.json");
  write_text(dir / "instrumentation.json", instrument::to_json(out.instrumentation).dump(2) + "\n");
  write_text(dir / "report.json", out.to_json().dump(2) + "\n");
  std::string text = "Ops-time validation\n\n" + out.report.to_text() + "\n" + timing_text(out.timing);
  for (const auto& u : out.deployment.updates) {
    text += "deployment: " + u.component + " " + u.old_host + " -> " + u.new_host + (cfg.apply ? " (applied)" : "") + "\n";
  }
  for (const auto& s : out.stale_services) text += "stale service: " + s + "\n";
  write_text(dir / "report.txt", text);
  return out;
}

}  // namespace perfcal::pipeline
