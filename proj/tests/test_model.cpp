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

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "fixtures.hpp"
#include "perfcal/model.hpp"

using namespace perfcal;
using namespace perfcal::model;
using Catch::Approx;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("perfcal_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_actions(const PerformanceModel& m, const std::string& service) {
  std::size_t n = 0;
  for_each_action(m.seff_for(service)->actions, [&](const Action&) { ++n; });
  return n;
}

// Replaces the demand of one internal action.
void set_demand(PerformanceModel& m, const std::string& id, const std::string& expr) {
  Action* a = find_action_mut(m, id);
  REQUIRE(a);
  a->as<InternalAction>()->demand = stoex::parse(expr);
}

}  // namespace

TEST_CASE("model: minimal model round-trips byte-identically", "[model]") {
  const auto dir = temp_dir("roundtrip");
  const PerformanceModel m = fixtures::minimal_model();
  save_model(m, dir / "a.json");
  const PerformanceModel loaded = load_model(dir / "a.json");
  save_model(loaded, dir / "b.json");
  CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
  CHECK(to_canonical_string(loaded) == to_canonical_string(m));
}

TEST_CASE("model: canonical form sorts keys with two-space indent", "[model]") {
  const std::string text = to_canonical_string(fixtures::minimal_model());
  CHECK(text.find("{\n  \"allocation\"") == 0);
  CHECK(text.back() == '\n');
  CHECK(text.find("\"commitId\"") < text.find("\"components\""));
}

TEST_CASE("model: fixtures load and match authored structure", "[model]") {
  const PerformanceModel book = fixtures::book_sale_model();
  CHECK(count_actions(book, "bookSale") == 9);
  std::size_t loops = 0;
  for_each_action(book.seff_for("bookSale")->actions, [&](const Action& a) { loops += a.kind() == ActionKind::Loop; });
  CHECK(loops == 2);

  const PerformanceModel train = fixtures::train_model();
  CHECK(count_actions(train, "train") == 5);  // 4 instrumentable elements + one external call
  CHECK(train.seff_for("getOrderItems") == nullptr);
  CHECK(fixtures::train_model(true).seff_for("getOrderItems") != nullptr);
  CHECK(*train.host_of("train") == "app");
}

TEST_CASE("model: branch body without external call names the branch", "[model]") {
  json j = json::parse(fixtures::train_json());
  j["seffs"][0]["actions"].push_back(
      {{"kind", "branch"},
       {"id", "badBranch"},
       {"transitions", json::array({{{"condition", "true"},
                                     {"body", json::array({{{"kind", "internal"}, {"id", "x"}, {"demand", "1"}}})}}})}});
  try {
    (void)from_json(j);
    FAIL("expected a ModelError");
  } catch (const ModelError& e) {
    CHECK(std::string(e.what()).find("badBranch") != std::string::npos);
    CHECK(e.pointer() == "/seffs/0/actions/3/transitions/0/body");
  }
}

TEST_CASE("model: schema and reference errors carry JSON pointers", "[model]") {
  json j = json::parse(fixtures::train_json());
  SECTION("missing field") {
    j["seffs"][0]["actions"][0].erase("demand");
    try {
      (void)from_json(j);
      FAIL();
    } catch (const ModelError& e) {
      CHECK(e.pointer() == "/seffs/0/actions/0/demand");
    }
  }
  SECTION("dangling host") {
    j["allocation"]["Recommender"] = "nowhere";
    CHECK_THROWS_AS(from_json(j), ModelError);
  }
  SECTION("dangling service") {
    j["seffs"][0]["actions"][1]["body"][0]["target"] = "ghost";
    try {
      (void)from_json(j);
      FAIL();
    } catch (const ModelError& e) {
      CHECK(e.pointer() == "/seffs/0/actions/1/body/0/target");
    }
  }
  SECTION("duplicate action id") {
    j["seffs"][0]["actions"][2]["id"] = "preprocess";
    CHECK_THROWS_AS(from_json(j), ModelError);
  }
  SECTION("bad expression") {
    j["seffs"][0]["actions"][0]["demand"] = "1 +";
    try {
      (void)from_json(j);
      FAIL();
    } catch (const ModelError& e) {
      CHECK(e.pointer() == "/seffs/0/actions/0/demand");
    }
  }
  SECTION("resource constraints") {
    j["resourceEnvironment"]["containers"][0]["rate"] = 0;
    CHECK_THROWS_AS(from_json(j), ModelError);
    j["resourceEnvironment"]["containers"][0]["rate"] = 1;
    j["resourceEnvironment"]["containers"][0]["processors"] = 0;
    CHECK_THROWS_AS(from_json(j), ModelError);
  }
  SECTION("population") {
    j["usageModel"]["population"] = 0;
    CHECK_THROWS_AS(from_json(j), ModelError);
  }
}

TEST_CASE("model: probabilistic branch must sum to one", "[model]") {
  json j = json::parse(fixtures::book_sale_json());
  const json call = {{"kind", "external"}, {"id", "e1"}, {"target", "getStockItem"}};
  json call2 = call;
  call2["id"] = "e2";
  j["seffs"][0]["actions"].push_back(
      {{"kind", "branch"},
       {"id", "coin"},
       {"transitions", json::array({{{"condition", "IntPMF[(0;0.7)(1;0.3)]"}, {"body", json::array({call})}},
                                    {{"condition", "IntPMF[(0;0.4)(1;0.6)]"}, {"body", json::array({call2})}}})}});
  CHECK_THROWS_AS(from_json(j), ModelError);
  j["seffs"][0]["actions"].back()["transitions"][1]["condition"] = "IntPMF[(0;0.3)(1;0.7)]";
  CHECK_NOTHROW(from_json(j));
}

TEST_CASE("version store: snapshots are isolated", "[model]") {
  VersionStore store;
  store.store("c1", fixtures::train_model());
  store.store("c2", fixtures::train_model());
  PerformanceModel c2 = store.get("c2");
  set_demand(c2, "trainForRecommender", "0.5");
  const auto* ia = find_action(store.get("c1"), "trainForRecommender").action->as<InternalAction>();
  CHECK(stoex::to_string(ia->demand).find("popularity") != std::string::npos);
  const auto* stored_c2 = find_action(store.get("c2"), "trainForRecommender").action->as<InternalAction>();
  CHECK(stoex::to_string(stored_c2->demand) != "0.5");
}

TEST_CASE("version store: four train commits and error paths", "[model]") {
  VersionStore store;
  const char* algos[] = {"0.01", "0.02", "0.03", "0.04"};
  for (int i = 0; i < 4; ++i) {
    PerformanceModel m = fixtures::train_model();
    set_demand(m, "trainForRecommender", algos[i]);
    store.store("c" + std::to_string(i + 1), m);
  }
  CHECK(store.commits().size() == 4);
  for (int i = 0; i < 4; ++i) {
    const auto v = store.version("c" + std::to_string(i + 1));
    CHECK(v.model.commit_id == v.commit);
    CHECK(stoex::to_string(find_action(v.model, "trainForRecommender").action->as<InternalAction>()->demand) ==
          algos[i]);
    if (i > 0) CHECK(*v.parent == "c" + std::to_string(i));
  }
  CHECK_THROWS_AS(store.get("c9"), ModelError);
  CHECK_THROWS_AS(store.store("c2", fixtures::train_model()), ModelError);
  CHECK_THROWS_AS(store.store("c5", fixtures::train_model(), std::string("c0")), ModelError);
}

TEST_CASE("version store: persistence is idempotent", "[model]") {
  const auto dir = temp_dir("store");
  VersionStore store;
  store.store("c1", fixtures::train_model());
  store.store("c2", fixtures::book_sale_model());
  store.save(dir);
  const VersionStore loaded = VersionStore::load(dir);
  CHECK(loaded.commits() == store.commits());
  for (const auto& c : store.commits()) {
    CHECK(to_canonical_string(loaded.get(c)) == to_canonical_string(store.get(c)));
  }
  CHECK(*loaded.version("c2").parent == "c1");
}

TEST_CASE("version store: concurrent readers", "[model]") {
  VersionStore store;
  store.store("c1", fixtures::train_model());
  std::vector<std::thread> readers;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      for (int i = 0; i < 50; ++i) ok += store.get("c1").services.size() == 2;
    });
  }
  for (auto& r : readers) r.join();
  CHECK(ok == 200);
}

TEST_CASE("walk_seff: single internal action", "[model]") {
  const PerformanceModel m = fixtures::minimal_model("5");
  const TraversalTrace t = walk_seff(*m.seff_for("s"), {});
  REQUIRE(t.visits.size() == 1);
  CHECK(t.visits[0].action == "ia");
  CHECK(t.visits[0].demand == 5.0);
  CHECK(t.total_demand == 5.0);
}

TEST_CASE("walk_seff: loop repeats its body", "[model]") {
  Seff seff{"s", {Action{Loop{"l", stoex::parse("n.NUMBER_OF_ELEMENTS"),
                              {Action{ExternalCall{"call", "other", {}, ""}}}, ""}}}};
  EvalEnv env;
  env["n"].number_of_elements = 3;
  const TraversalTrace t = walk_seff(seff, env);
  const auto calls = std::count_if(t.visits.begin(), t.visits.end(), [](const Visit& v) { return v.action == "call"; });
  CHECK(calls == 3);
}

TEST_CASE("walk_seff: train SEFF matches a hand-expanded traversal", "[model]") {
  const PerformanceModel m = fixtures::train_model();
  for (const std::string algo : {"popularity", "slopeone"}) {
    for (int n : {0, 1, 7}) {
      EvalEnv env;
      env["orders"].number_of_elements = n;
      env["algorithm"].type = algo;
      const TraversalTrace t = walk_seff(*m.seff_for("train"), env);
      const double train_rd = algo == "popularity" ? 0.01 : 0.02 + 0.001 * n;
      const double expected = (0.001 * n + 0.002) + n * 0.0005 + train_rd;
      CHECK(t.total_demand == Approx(expected).epsilon(1e-12));
      CHECK(t.visits.size() == static_cast<std::size_t>(3 + 2 * n));
    }
  }
}

TEST_CASE("walk_seff: branch selection and loop-count errors", "[model]") {
  const auto call = [](const std::string& id) { return Action{ExternalCall{id, "x", {}, ""}}; };
  Branch b{"b",
           {{stoex::parse("n.VALUE > 10"), {call("big")}}, {stoex::parse("n.VALUE <= 10"), {call("small")}}},
           ""};
  Seff seff{"s", {Action{b}}};
  EvalEnv env;
  env["n"].value = 11;
  CHECK(walk_seff(seff, env).visits.back().action == "big");
  env["n"].value = 3;
  CHECK(walk_seff(seff, env).visits.back().action == "small");

  Branch none{"none", {{stoex::parse("false"), {call("a")}}}, ""};
  CHECK_THROWS_AS(walk_seff(Seff{"s", {Action{none}}}, {}), EvalError);

  for (const char* count : {"-1", "1.5"}) {
    Seff bad{"s", {Action{Loop{"l", stoex::parse(count), {call("c")}, ""}}}};
    CHECK_THROWS_AS(walk_seff(bad, {}), EvalError);
  }
}

TEST_CASE("walk_seff: sampled branch frequencies follow probabilities", "[model]") {
  const auto call = [](const std::string& id) { return Action{ExternalCall{id, "x", {}, ""}}; };
  Branch b{"b",
           {{stoex::probability_bool(0.3), {call("a")}}, {stoex::probability_bool(0.7), {call("b")}}},
           ""};
  Seff seff{"s", {Action{b}}};
  Rng rng(7);
  int a = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) a += walk_seff(seff, {}, WalkMode::Sample, &rng).visits.back().action == "a";
  CHECK(a / double(n) == Approx(0.3).margin(0.015));
}

TEST_CASE("walk_seff: properties", "[model][property]") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    // Flat SEFF: visit order equals list order; total equals sum of visits.
    Seff seff{"s", {}};
    const int len = 1 + static_cast<int>(rng.below(8));
    for (int i = 0; i < len; ++i) {
      if (rng.uniform() < 0.3) {
        seff.actions.push_back(Action{ExternalCall{"e" + std::to_string(i), "x", {}, ""}});
      } else {
        seff.actions.push_back(Action{InternalAction{"i" + std::to_string(i), ResourceType::Cpu,
                                                     stoex::double_pmf({{rng.uniform(), 0.5}, {1.0 + rng.uniform(), 0.5}}),
                                                     ""}});
      }
    }
    const TraversalTrace t = walk_seff(seff, {}, WalkMode::Sample, &rng);
    REQUIRE(t.visits.size() == seff.actions.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < t.visits.size(); ++i) {
      CHECK(t.visits[i].action == seff.actions[i].id());
      sum += t.visits[i].demand;
    }
    CHECK(t.total_demand == sum);
  }
}

TEST_CASE("bind_arguments: callee environment from caller", "[model]") {
  std::map<std::string, Binding> args;
  args.emplace("order.VALUE", stoex::parse("2 * orders.NUMBER_OF_ELEMENTS"));
  args.emplace("kind.TYPE", LabelDistribution{{{"big", stoex::parse("orders.NUMBER_OF_ELEMENTS > 5")},
                                               {"small", stoex::parse("true")}}});
  EvalEnv caller;
  caller["orders"].number_of_elements = 6;
  const EvalEnv callee = bind_arguments(args, caller, WalkMode::Evaluate, nullptr);
  CHECK(std::get<double>(callee.lookup("order", stoex::Characterization::Value)) == 12.0);
  CHECK(std::get<std::string>(callee.lookup("kind", stoex::Characterization::Type)) == "big");
}
