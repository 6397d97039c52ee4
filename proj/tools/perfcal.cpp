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


// perfcal command-line tool. Exit codes: 0 PASS or success, 2 validation
// FAIL, 1 error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "perfcal/perfcal.hpp"

namespace fs = std::filesystem;
using namespace perfcal;
using perfcal::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> reps;
  bool apply = false;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "pipeline configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--reps", c.reps, "simulation repetitions")->check(CLI::PositiveNumber);
  cmd->add_flag("--apply", c.apply, "apply detected deployment changes");
  cmd->add_option("--out", c.out, "output directory");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error("'" + path + "': " + e.what());
  }
}

pipeline::PipelineConfig load_config(const Common& c) {
  auto cfg = c.config.empty() ? pipeline::PipelineConfig{} : pipeline::PipelineConfig::from_json(read_json(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (c.reps) cfg.reps = *c.reps;
  if (c.apply) cfg.apply = true;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.check();
  return cfg;
}

fs::path out_dir(const Common& c, const pipeline::PipelineConfig& cfg) {
  fs::path dir = c.out.empty() ? fs::path(cfg.out_dir) : fs::path(c.out);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const json& j) { pipeline::write_text(path, j.dump(2) + "\n"); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perfcal: continuous calibration of architectural performance models"};
  app.require_subcommand(1);

  Common common;
  std::string old_path, new_path, model_path, records_path, monitoring_path;
  bool coarse = false;
  int users = 0;
  std::size_t calls = 0;
  double think = -1.0;

  auto* diff = app.add_subcommand("diff", "list modified (MIA) and unmodified (NMIA) internal actions");
  diff->add_option("old", old_path, "previous model version")->required()->check(CLI::ExistingFile);
  diff->add_option("new", new_path, "new model version")->required()->check(CLI::ExistingFile);
  add_common(diff, common);

  auto* instr = app.add_subcommand("instrument", "derive the adaptive instrumentation for a model change");
  instr->add_option("old", old_path, "previous model version (omit for a first commit)")->check(CLI::ExistingFile);
  instr->add_option("--new", new_path, "new model version")->required()->check(CLI::ExistingFile);
  instr->add_flag("--coarse", coarse, "service probes only");
  add_common(instr, common);

  auto* gen = app.add_subcommand("generate", "generate synthetic monitoring records from a truth model");
  gen->add_option("model", model_path, "truth model")->required()->check(CLI::ExistingFile);
  gen->add_option("--users", users, "closed population (default: model usage)")->check(CLI::PositiveNumber);
  gen->add_option("--calls", calls, "completed entry-level calls")->check(CLI::PositiveNumber);
  gen->add_option("--think", think, "exponential think time mean in seconds")->check(CLI::NonNegativeNumber);
  gen->add_option("--monitoring", monitoring_path, "monitoring configuration (JSON)")->check(CLI::ExistingFile);
  gen->add_flag("--coarse", coarse, "service probes only");
  add_common(gen, common);

  auto* cal = app.add_subcommand("calibrate", "calibrate a model version from records without self-validation");
  cal->add_option("new", new_path, "new model version")->check(CLI::ExistingFile);
  cal->add_option("records", records_path, "monitoring records (JSONL)")->check(CLI::ExistingFile);
  cal->add_option("--old", old_path, "previous model version")->check(CLI::ExistingFile);
  add_common(cal, common);

  auto* sim = app.add_subcommand("simulate", "simulate a model's usage scenario");
  sim->add_option("model", model_path, "model")->required()->check(CLI::ExistingFile);
  sim->add_option("--users", users, "closed population override")->check(CLI::PositiveNumber);
  sim->add_option("--calls", calls, "completed entry-level calls")->check(CLI::PositiveNumber);
  add_common(sim, common);

  auto* val = app.add_subcommand("validate", "compare simulated with measured response times");
  val->add_option("model", model_path, "calibrated model")->required()->check(CLI::ExistingFile);
  val->add_option("records", records_path, "monitoring records (JSONL)")->required()->check(CLI::ExistingFile);
  add_common(val, common);

  auto* dev = app.add_subcommand("devtime", "run the development-time calibration pipeline");
  add_common(dev, common);
  auto* ops = app.add_subcommand("opstime", "run the operations-time validation pipeline");
  add_common(ops, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    auto cfg = load_config(common);

    if (diff->parsed()) {
      const auto cs = instrument::diff_models(model::load_model(old_path), model::load_model(new_path));
      const json j = instrument::to_json(cs);
      if (!common.out.empty()) write_json(out_dir(common, cfg) / "changes.json", j);
      std::cout << j.dump(2) << "\n";
      return 0;
    }

    if (instr->parsed()) {
      const auto next = model::load_model(new_path);
      const auto old = old_path.empty() ? model::PerformanceModel{} : model::load_model(old_path);
      const auto cs = instrument::diff_models(old, next);
      const auto im = instrument::update_instrumentation(cs, next, coarse);
      const auto dir = out_dir(common, cfg);
      write_json(dir / "instrumentation.json", instrument::to_json(im));
      write_json(dir / "monitoring.json", instrument::emit_monitoring_config(im));
      const double reduction =
          instrument::probe_overhead_reduction(instrument::full_instrumentation(next), im);
      std::printf("active element probes: %zu of %zu (reduction %.2f)\n", im.active_element_probes(),
                  im.element_probes(), reduction);
      return 0;
    }

    if (gen->parsed()) {
      pipeline::WorkloadSpec spec;
      spec.truth = model::load_model(model_path);
      spec.users = users;
      if (calls > 0) spec.calls = calls;
      if (think >= 0.0) spec.think = think > 0.0 ? pipeline::exponential_pmf(think) : stoex::double_lit(0.0);
      spec.seed = cfg.seed;
      if (!monitoring_path.empty()) spec.monitoring = instrument::parse_monitoring_config(read_json(monitoring_path));
      if (coarse) {
        instrument::MonitoringConfig mc;
        for (const auto& p : instrument::coarse_instrumentation(spec.truth).probes) {
          if (p.active) mc.active.insert({p.kind, p.target});
        }
        spec.monitoring = mc;
      }
      const auto batch = pipeline::generate_workload(spec);
      const auto dir = out_dir(common, cfg);
      pipeline::write_workload(spec, batch, dir);
      for (const auto& [kind, n] : batch.counts()) std::printf("%-12s %zu\n", kind.c_str(), n);
      return 0;
    }

    if (cal->parsed()) {
      if (!new_path.empty()) cfg.new_model = new_path;
      if (!records_path.empty()) cfg.records = records_path;
      if (!old_path.empty()) cfg.old_model = old_path;
      if (cfg.new_model.empty() || cfg.records.empty()) throw Error("calibrate needs a new model and a records file");
      const auto next = model::load_model(cfg.new_model);
      std::optional<model::PerformanceModel> old;
      if (!cfg.old_model.empty()) old = model::load_model(cfg.old_model);
      const auto out =
          pipeline::calibrate(old ? &*old : nullptr, next, pipeline::load_records(cfg.records), cfg, {false});
      const auto dir = out_dir(common, cfg);
      model::save_model(out.model, dir / "model.json");
      write_json(dir / "instrumentation.json", instrument::to_json(out.instrumentation));
      write_json(dir / "report.json", out.to_json());
      pipeline::write_text(dir / "report.txt", pipeline::timing_text(out.timing));
      std::cout << pipeline::timing_text(out.timing);
      return 0;
    }

    if (sim->parsed()) {
      auto m = model::load_model(model_path);
      if (!m.usage) throw ModelError("/usage", "model has no usage model");
      if (users > 0) m.usage->population = users;
      sim::SimConfig sc;
      sc.seed = cfg.seed;
      sc.max_calls = calls > 0 ? calls : cfg.sim_calls;
      const auto runs = sim::repeat_simulations(m, *m.usage, common.reps ? *common.reps : 1, cfg.seed, sc, cfg.threads);
      const auto dir = out_dir(common, cfg);
      std::ofstream samples(dir / "samples.jsonl");
      json summary = json::array();
      for (const auto& r : runs) {
        sim::write_samples(r, samples);
        json util = json::object();
        for (const auto& [h, u] : r.utilization) util[h] = u;
        summary.push_back({{"throughput", r.throughput()},
                           {"meanResponseMs", r.mean_response_ms(r.entry_service)},
                           {"utilization", util},
                           {"responseQuartiles", validate::quartile_summary(r.entry_samples()).to_json()}});
      }
      write_json(dir / "simulation.json", summary);
      std::cout << summary.dump(2) << "\n";
      return 0;
    }

    if (val->parsed()) {
      const auto m = model::load_model(model_path);
      if (!m.usage) throw ModelError("/usage", "model has no usage model");
      const auto traces = records::correlate(pipeline::load_records(records_path)).traces;
      const auto report = validate::self_validate(m, *m.usage, pipeline::measured_samples(traces), cfg.validation());
      const auto dir = out_dir(common, cfg);
      write_json(dir / "report.json", report.to_json());
      pipeline::write_text(dir / "report.txt", report.to_text());
      std::cout << report.to_text();
      return report.pass ? 0 : 2;
    }

    if (dev->parsed()) {
      const auto out = pipeline::devtime_pipeline(cfg);
      if (out.report) std::cout << out.report->to_text();
      std::cout << pipeline::timing_text(out.timing);
      return out.pass() ? 0 : 2;
    }

    if (ops->parsed()) {
      const auto out = pipeline::opstime_pipeline(cfg);
      std::cout << out.report.to_text() << pipeline::timing_text(out.timing);
      for (const auto& u : out.deployment.updates) {
        std::cout << "deployment: " << u.component << " " << u.old_host << " -> " << u.new_host << "\n";
      }
      for (const auto& s : out.stale_services) std::cout << "stale service: " << s << "\n";
      return out.report.pass ? 0 : 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "perfcal: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
