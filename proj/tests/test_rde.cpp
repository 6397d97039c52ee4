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

#include "fixtures.hpp"
#include "perfcal/rde.hpp"

using namespace perfcal;
using namespace perfcal::rde;
using Catch::Approx;

namespace {

// A trace holding one call of `service` with the given internal records.
CallTrace one_call(const std::string& id, const std::string& service, const std::string& host, std::int64_t entry,
                   std::int64_t exit, EvalEnv params = {}, std::vector<records::InternalRecord> internals = {}) {
  CallTrace t;
  t.nodes.push_back(records::CallNode{
      records::CallRecord{id, service, std::nullopt, host, entry, exit, std::move(params), std::nullopt},
      std::nullopt,
      {},
      std::move(internals),
      {},
      {}});
  return t;
}

std::vector<WindowCall> calls_of(const std::vector<CallTrace>& traces) {
  std::vector<WindowCall> out;
  for (const auto& t : traces) out.push_back({&t.nodes[0], &t, true});
  return out;
}

instrument::ChangeSet classify(std::initializer_list<std::pair<const char*, bool>> mia) {
  instrument::ChangeSet cs;
  for (const auto& [id, is_mia] : mia) {
    cs.classification[id] = is_mia ? instrument::Classification::Mia : instrument::Classification::Nmia;
  }
  return cs;
}

}  // namespace

TEST_CASE("MIA utilization clamp rule", "[rde]") {
  CHECK(mia_utilization(0.5, 0.2).value == Approx(0.3).epsilon(1e-15));
  const auto clamped = mia_utilization(0.10, 0.15);
  CHECK(clamped.value == 0.0);
  CHECK(clamped.clamp_residual == Approx(-0.05).epsilon(1e-12));
  CHECK(mia_utilization(0.0, 0.0).value == 0.0);
}

TEST_CASE("MIA utilization apportioning", "[rde]") {
  WindowStats w;
  w.mias["a"] = {1, 2.0};
  w.mias["b"] = {3, 1.0};
  auto s = apportion_mias(w, 0.5);
  CHECK(s["a"] == Approx(0.2).epsilon(1e-12));
  CHECK(s["b"] == Approx(0.3).epsilon(1e-12));
  WindowStats single;
  single.mias["x"] = {4, 0.1};
  CHECK(apportion_mias(single, 0.42)["x"] == 0.42);
  WindowStats three;
  for (const char* id : {"p", "q", "r"}) three.mias[id] = {2, 0.5};
  for (const auto& [_, u] : apportion_mias(three, 0.3)) CHECK(u == Approx(0.1).epsilon(1e-12));
  WindowStats zero;
  zero.mias["z"] = {1, 0.0};
  CHECK_THROWS_AS(apportion_mias(zero, 0.3), CalibrationError);
}

TEST_CASE("service demand law", "[rde]") {
  CHECK(service_demand(0.4, 60, 120) == Approx(0.2).epsilon(1e-15));
  CHECK(service_demand(0.0, 10, 3) == 0.0);
  CHECK_THROWS_AS(service_demand(0.4, 60, 0), CalibrationError);
}

TEST_CASE("NMIA utilization prediction", "[rde]") {
  const auto m = fixtures::minimal_model("0.05");
  const auto cs = classify({{"ia", false}});
  std::vector<CallTrace> traces{one_call("1", "s", "h", 0, 100), one_call("2", "s", "h", 200, 300)};
  CHECK(predict_nmia_utilization(m, cs, {}, calls_of(traces), "h", 10.0) == Approx(0.01).epsilon(1e-12));
  CHECK(predict_nmia_utilization(m, cs, {}, {}, "h", 10.0) == 0.0);
}

TEST_CASE("NMIA utilization over the train SEFF matches a hand sum", "[rde]") {
  auto m = fixtures::train_model();
  m.resources.containers[0].rate = 2.0;
  const auto cs = classify({{"preprocess", false}, {"collectItems", true}, {"trainForRecommender", true}});
  std::vector<CallTrace> traces;
  double expected = 0.0;
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const int n = static_cast<int>(rng.below(30));
    EvalEnv env;
    env["orders"].number_of_elements = n;
    env["algorithm"].type = "popularity";
    traces.push_back(one_call(std::to_string(i), "train", "app", i, i + 1, env));
    expected += (0.001 * n + 0.002) / 2.0;
  }
  expected /= 10.0;
  CHECK(predict_nmia_utilization(m, cs, {}, calls_of(traces), "app", 10.0) == Approx(expected).epsilon(1e-12));
}

TEST_CASE("NMIA prediction uses recorded loop counts when monitored", "[rde]") {
  const auto m = fixtures::train_model();
  const auto cs = classify({{"preprocess", true}, {"collectItems", false}, {"trainForRecommender", true}});
  EvalEnv env;
  env["orders"].number_of_elements = 10;  // model says 10 iterations
  auto t = one_call("1", "train", "app", 0, 1, env);
  t.nodes[0].loops.push_back({"1", "orderLoop", 4});
  const std::vector<CallTrace> traces{t};
  const Monitored mon = Monitored::of(traces);
  CHECK(predicted_nmia_work(m, cs, mon, t.nodes[0]) == Approx(4 * 0.0005).epsilon(1e-12));
  CHECK(predicted_nmia_work(m, cs, {}, t.nodes[0]) == Approx(10 * 0.0005).epsilon(1e-12));
}

TEST_CASE("estimate_window: low utilization uses response times", "[rde]") {
  auto m = fixtures::minimal_model("0.05", 4.0);
  const auto cs = classify({{"ia", true}});
  std::vector<CallTrace> traces{one_call("1", "s", "h", 0, 100000, {}, {{"1", "ia", 1000, 31000}}),
                                one_call("2", "s", "h", 0, 100000, {}, {{"2", "ia", 5000, 25000}})};
  Window w{{"h", 0, 10.0, {0.1}}, calls_of(traces)};
  const auto est = estimate_window(m, cs, {}, w);
  CHECK(est.low_utilization);
  REQUIRE(est.observations.size() == 2);
  CHECK(est.observations[0].demand == Approx(0.030 * 4.0).epsilon(1e-12));
  CHECK(est.observations[1].demand == Approx(0.020 * 4.0).epsilon(1e-12));
}

TEST_CASE("estimate_window: estimation chain reproduces a hand computation", "[rde]") {
  // Host: 2 processors, rate 2. NMIA 'n1' demand 0.5 work-units per call of s.
  model::PerformanceModel m = fixtures::minimal_model("0.5", 2.0);
  m.resources.containers[0].processors = 2;
  auto& actions = m.seffs[0].actions;
  actions[0].as<model::InternalAction>()->id = "n1";
  actions.push_back(model::Action{model::InternalAction{"m1", model::ResourceType::Cpu, stoex::parse("1"), ""}});
  const auto cs = classify({{"n1", false}, {"m1", true}});
  std::vector<CallTrace> traces;
  const double responses[] = {0.2, 0.4, 0.6};
  for (int i = 0; i < 3; ++i) {
    const auto us = static_cast<std::int64_t>(responses[i] * 1e6);
    traces.push_back(one_call(std::to_string(i), "s", "h", 0, 2000000, {}, {{std::to_string(i), "m1", 0, us}}));
  }
  Window w{{"h", 0, 10.0, {0.5, 0.7}}, calls_of(traces)};
  const auto est = estimate_window(m, cs, {}, w);
  // Hand computation.
  const double u_r = 0.6;
  const double u_n = 3 * (0.5 / 2.0) / (10.0 * 2);
  const double u_m = u_r - u_n;
  const double busy = u_m * 10.0 * 2;
  CHECK(est.nmia_utilization == Approx(u_n).epsilon(1e-12));
  CHECK(est.mia_utilization == Approx(u_m).epsilon(1e-12));
  CHECK(est.demands_s.at("m1") == Approx(busy / 3).epsilon(1e-12));
  REQUIRE(est.observations.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(est.observations[i].demand == Approx(busy * responses[i] / 1.2 * 2.0).epsilon(1e-9));
  }
}

TEST_CASE("estimate_window: no MIA visits gives no observations", "[rde]") {
  const auto m = fixtures::minimal_model("0.05");
  const auto cs = classify({{"ia", false}});
  std::vector<CallTrace> traces{one_call("1", "s", "h", 0, 100)};
  const auto est = estimate_window(m, cs, {}, Window{{"h", 0, 10.0, {0.7}}, calls_of(traces)});
  CHECK(est.observations.empty());
}

TEST_CASE("estimate_window: conservation and clamp warning", "[rde][property]") {
  Rng rng(9);
  model::PerformanceModel m = fixtures::minimal_model("0.3");
  m.seffs[0].actions[0].as<model::InternalAction>()->id = "n1";
  for (const char* id : {"a", "b"}) {
    m.seffs[0].actions.push_back(model::Action{model::InternalAction{id, model::ResourceType::Cpu, stoex::parse("1"), ""}});
  }
  const auto cs = classify({{"n1", false}, {"a", true}, {"b", true}});
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<CallTrace> traces;
    const int calls = 1 + static_cast<int>(rng.below(20));
    for (int i = 0; i < calls; ++i) {
      const auto ra = static_cast<std::int64_t>(1 + rng.below(100000));
      const auto rb = static_cast<std::int64_t>(1 + rng.below(100000));
      traces.push_back(one_call(std::to_string(i), "s", "h", 0, 300000, {},
                                {{std::to_string(i), "a", 0, ra}, {std::to_string(i), "b", 0, rb}}));
    }
    const double u = 0.2 + 0.8 * rng.uniform();
    const auto est = estimate_window(m, cs, {}, Window{{"h", 0, 10.0, {u}}, calls_of(traces)});
    double sum = est.nmia_utilization;
    for (const auto& [_, s] : est.shares) sum += s;
    const double eps = -est.clamp_residual;
    CHECK(sum <= u + eps + 1e-12);
    CHECK(sum >= u - 1e-12);
    CHECK(est.warnings.empty() == (eps == 0.0));
  }
}

TEST_CASE("work-unit normalization is multiplicative in the rate", "[rde][property]") {
  const auto cs = classify({{"ia", true}});
  std::vector<CallTrace> traces{one_call("1", "s", "h", 0, 100000, {}, {{"1", "ia", 0, 42000}}),
                                one_call("2", "s", "h", 0, 100000, {}, {{"2", "ia", 0, 17000}})};
  for (double u : {0.1, 0.6}) {
    const auto slow = estimate_window(fixtures::minimal_model("1", 1.0), cs, {}, Window{{"h", 0, 10.0, {u}}, calls_of(traces)});
    const auto fast = estimate_window(fixtures::minimal_model("1", 2.0), cs, {}, Window{{"h", 0, 10.0, {u}}, calls_of(traces)});
    for (std::size_t i = 0; i < slow.observations.size(); ++i) {
      CHECK(fast.observations[i].demand == 2.0 * slow.observations[i].demand);
    }
  }
}

TEST_CASE("assign_windows groups calls by host and exit time", "[rde]") {
  std::vector<CallTrace> traces{one_call("1", "s", "h", 0, 5'000'000), one_call("2", "s", "h", 9'000'000, 10'000'000),
                                one_call("3", "s", "other", 0, 1), one_call("4", "s", "h", 0, 25'000'000)};
  std::vector<records::UtilizationRecord> utils{{"h", 0, 10.0, {0.5}}, {"h", 10'000'000, 10.0, {0.5}}};
  const std::vector<bool> training{true, false, true, true};
  const auto w = assign_windows(traces, utils, &training);
  REQUIRE(w.size() == 2);
  CHECK(w[0].calls.size() == 1);
  CHECK(w[1].calls.size() == 1);
  CHECK(!w[1].calls[0].training);
}

TEST_CASE("own response time excludes nested calls", "[rde]") {
  CallTrace t = one_call("A", "s", "h", 0, 1000);
  t.nodes.push_back(records::CallNode{records::CallRecord{"B", "t", std::string("A"), "h", 200, 500, {}, std::nullopt}, 0, {}, {}, {}, {}});
  t.nodes[0].children.push_back(1);
  CHECK(own_response_seconds({"A", "x", 100, 700}, t.nodes[0], t) == Approx(300e-6).epsilon(1e-12));
}
