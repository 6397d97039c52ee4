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


#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "fixtures.hpp"
#include "perfcal/pipeline.hpp"

using namespace perfcal;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(PERFCAL_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Workspace {
  fs::path dir = fs::temp_directory_path() / "perfcal_cli_test";
  Workspace() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("command line pipeline round trip and exit codes", "[cli]") {
  Workspace ws;
  const auto truth = fixtures::train_model(true);
  model::save_model(truth, ws / "old.json");
  auto next = truth;
  next.commit_id = "c2";
  model::find_action_mut(next, "trainForRecommender")->as<model::InternalAction>()->code = "v2";
  model::save_model(next, ws / "new.json");

  CHECK(run("diff " + (ws / "old.json") + " " + (ws / "new.json") + " --out " + (ws / "diff")) == 0);
  CHECK(fs::exists(ws / "diff/changes.json"));
  CHECK(run("instrument " + (ws / "old.json") + " --new " + (ws / "new.json") + " --out " + (ws / "inst")) == 0);
  const auto mc = instrument::parse_monitoring_config(json::parse(std::ifstream(ws / "inst/monitoring.json")));
  CHECK(mc.enabled(instrument::ProbeKind::Internal, "trainForRecommender"));
  CHECK_FALSE(mc.enabled(instrument::ProbeKind::Internal, "preprocess"));

  REQUIRE(run("generate " + (ws / "old.json") + " --calls 2000 --seed 5 --out " + (ws / "data")) == 0);
  CHECK(fs::exists(ws / "data/truth.json"));

  std::ofstream(ws / "cfg.json") << json{{"oldModel", ws / "old.json"},
                                         {"newModel", ws / "new.json"},
                                         {"records", ws / "data/records.jsonl"},
                                         {"outDir", ws / "dev"},
                                         {"simCalls", 1500}}
                                        .dump();
  CHECK(run("devtime --config " + (ws / "cfg.json") + " --reps 3") == 0);
  for (const char* f : {"model.json", "instrumentation.json", "report.json", "report.txt"}) {
    CHECK(fs::exists(fs::path(ws / "dev") / f));
  }
  const auto calibrated = model::load_model(ws / "dev/model.json");
  CHECK(stoex::to_string(model::find_action(calibrated, "preprocess").action->as<model::InternalAction>()->demand) ==
        stoex::to_string(model::find_action(truth, "preprocess").action->as<model::InternalAction>()->demand));

  CHECK(run("validate " + (ws / "dev/model.json") + " " + (ws / "data/records.jsonl") + " --reps 3 --out " +
            (ws / "val")) == 0);
  CHECK(run("simulate " + (ws / "dev/model.json") + " --calls 300 --out " + (ws / "sim")) == 0);
  CHECK(fs::exists(ws / "sim/samples.jsonl"));

  // A model whose demands are ten times too large fails validation.
  auto slow = truth;
  for (auto& seff : slow.seffs) {
    model::for_each_action_mut(seff.actions, [](model::Action& a) {
      if (auto* ia = a.as<model::InternalAction>()) ia->demand = stoex::int_lit(10) * ia->demand;
    });
  }
  model::save_model(slow, ws / "slow.json");
  CHECK(run("validate " + (ws / "slow.json") + " " + (ws / "data/records.jsonl") + " --reps 3 --out " +
            (ws / "val2")) == 2);

  CHECK(run("validate " + (ws / "slow.json") + " " + (ws / "missing.jsonl")) == 1);
  CHECK(run("frobnicate") == 1);
  std::ofstream(ws / "bad.json") << R"({"ksThreshold": 2})";
  CHECK(run("devtime --config " + (ws / "bad.json")) == 1);
}
