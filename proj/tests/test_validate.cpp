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

#include <cmath>

#include "fixtures.hpp"
#include "perfcal/validate.hpp"

using namespace perfcal;
using namespace perfcal::validate;
using Catch::Approx;

namespace {

// O(n*m) supremum over every sample point.
double brute_ks(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (const auto* src : {&a, &b}) {
    for (double x : *src) {
      std::size_t ca = 0, cb = 0;
      for (double v : a) ca += v <= x;
      for (double v : b) cb += v <= x;
      d = std::max(d, std::abs(static_cast<double>(ca) / static_cast<double>(a.size()) -
                               static_cast<double>(cb) / static_cast<double>(b.size())));
    }
  }
  return d;
}

std::vector<double> random_samples(Rng& rng, std::size_t n, bool ties) {
  std::vector<double> v(n);
  for (auto& x : v) x = ties ? static_cast<double>(rng.below(20)) : rng.exponential(3.0);
  return v;
}

}  // namespace

TEST_CASE("ks_statistic examples", "[validate][ks]") {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  CHECK(ks_statistic(a, a) == 0.0);
  CHECK(ks_statistic(a, b) == 1.0);
  CHECK(ks_statistic(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 3, 4, 5}) == 0.25);
  CHECK_THROWS_AS(ks_statistic(std::vector<double>{}, a), EvalError);
}

TEST_CASE("ks_statistic equals the brute-force supremum", "[validate][ks][property]") {
  Rng rng(77);
  for (int t = 0; t < 500; ++t) {
    const auto a = random_samples(rng, 1 + rng.below(200), t % 2 == 0);
    const auto b = random_samples(rng, 1 + rng.below(200), t % 3 == 0);
    REQUIRE(ks_statistic(a, b) == brute_ks(a, b));
    REQUIRE(ks_statistic(a, b) == ks_statistic(b, a));
  }
}

TEST_CASE("ks_statistic is invariant under increasing transforms", "[validate][ks][property]") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    auto a = random_samples(rng, 50, false);
    auto b = random_samples(rng, 70, false);
    const double d = ks_statistic(a, b);
    for (auto* v : {&a, &b}) {
      for (double& x : *v) x = std::exp(x / 4.0) + 3.0;
    }
    CHECK(ks_statistic(a, b) == d);
  }
}

TEST_CASE("wasserstein1 examples", "[validate][w1]") {
  const std::vector<double> a{0, 0, 10}, b{0, 5, 5};
  CHECK(wasserstein1(a, b) == Approx(10.0 / 3.0).margin(1e-12));
  CHECK(wasserstein1(a, a) == 0.0);
  std::vector<double> shifted = a;
  for (double& x : shifted) x += 2.5;
  CHECK(wasserstein1(a, shifted) == Approx(2.5).margin(1e-12));
  CHECK(wasserstein1(std::vector<double>{0.0}, std::vector<double>{0.0, 1.0}) == Approx(0.5));
  CHECK_THROWS_AS(wasserstein1(a, std::vector<double>{}), EvalError);
}

TEST_CASE("wasserstein1 identities", "[validate][w1][property]") {
  Rng rng(19);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(100);
    auto a = random_samples(rng, n, t % 2 == 0);
    auto b = random_samples(rng, n, false);
    // Equal sizes: mean distance of order statistics.
    auto sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double pair = 0.0;
    for (std::size_t i = 0; i < n; ++i) pair += std::abs(sa[i] - sb[i]);
    pair /= static_cast<double>(n);
    CHECK(wasserstein1(a, b) == Approx(pair).margin(1e-9));
    CHECK(wasserstein1(a, b) == Approx(wasserstein1(b, a)).margin(1e-12));
    // Shift and scale.
    const double c = rng.uniform() * 10.0 - 5.0;
    const double k = 0.1 + rng.uniform() * 5.0;
    auto as = a, ak = a, bk = b;
    for (double& x : as) x += c;
    for (double& x : ak) x *= k;
    for (double& x : bk) x *= k;
    CHECK(wasserstein1(a, as) == Approx(std::abs(c)).margin(1e-9));
    CHECK(wasserstein1(ak, bk) == Approx(k * wasserstein1(a, b)).margin(1e-9));
    // Triangle inequality on unequal sizes.
    const auto z = random_samples(rng, 1 + rng.below(100), false);
    const auto y = random_samples(rng, 1 + rng.below(100), true);
    CHECK(wasserstein1(a, y) <= wasserstein1(a, z) + wasserstein1(z, y) + 1e-9);
  }
}

TEST_CASE("quartile_summary", "[validate]") {
  const auto q = quartile_summary(std::vector<double>{5, 1, 4, 2, 3});
  CHECK(q.min == 1);
  CHECK(q.q1 == 2);
  CHECK(q.q2 == 3);
  CHECK(q.q3 == 4);
  CHECK(q.max == 5);
  CHECK(q.avg == 3);
  const auto s = quartile_summary(std::vector<double>{7});
  for (double v : {s.min, s.q1, s.q2, s.q3, s.max, s.avg}) CHECK(v == 7);
  CHECK(quartile_summary(std::vector<double>{1, 2, 3, 4}).q1 == Approx(1.75));
  CHECK_THROWS_AS(quartile_summary(std::vector<double>{}), EvalError);
}

TEST_CASE("report renders the quartile table", "[validate]") {
  ValidationReport r;
  r.service = "bookSale";
  r.monitoring = {31, 101, 130, 187, 461, 143};
  r.simulation = {30, 100, 128, 190, 455, 141};
  r.ks = {0.1248, 0.1467, 0.1774};
  r.w1 = {1, 2, 3};
  r.ks_aggregate = aggregate(r.ks);
  r.w1_aggregate = aggregate(r.w1);
  const auto text = r.to_text();
  CHECK(text.find("Monitoring         31.0      101.0      130.0      187.0      461.0      143.0") !=
        std::string::npos);
  const auto j = r.to_json();
  CHECK(j.at("quartiles").at("monitoring").at("q1") == 101.0);
  CHECK(j.at("aggregates").at("ks").at("max") == 0.1774);
}

TEST_CASE("aggregate is recomputable from the list", "[validate][property]") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto v = random_samples(rng, 1 + rng.below(30), false);
    const auto a = aggregate(v);
    CHECK(a.min <= a.median);
    CHECK(a.median <= a.max);
    double s = 0.0;
    for (double x : v) s += x;
    CHECK(a.avg == Approx(s / static_cast<double>(v.size())));
  }
}

TEST_CASE("self-validation of a model against its own output", "[validate][selfcheck]") {
  auto m = fixtures::book_sale_model();
  sim::SimConfig truth_cfg;
  truth_cfg.seed = 1000;
  truth_cfg.max_calls = 5500;
  truth_cfg.warmup = 500;
  const auto truth = sim::run_simulation(m, truth_cfg);
  REQUIRE(truth.entry_samples().size() == 5000);

  ValidationConfig cfg;
  cfg.reps = 8;
  cfg.sim.max_calls = 5500;
  const auto same = self_validate(m, *m.usage, truth.response_ms, cfg);
  CHECK(same.ks.size() == 8);
  CHECK(same.ks_aggregate.avg <= 0.05);
  CHECK(same.pass);
  CHECK(same.service_ks.count("processPayment"));

  // Corrupt every resource demand by a factor of two.
  auto bad = m;
  for (auto& seff : bad.seffs) {
    model::for_each_action_mut(seff.actions, [](model::Action& a) {
      if (auto* ia = a.as<model::InternalAction>()) ia->demand = stoex::int_lit(2) * ia->demand;
    });
  }
  const auto worse = self_validate(bad, *bad.usage, truth.response_ms, cfg);
  CHECK(worse.ks_aggregate.avg > same.ks_aggregate.avg + 0.2);
  CHECK(worse.ks_aggregate.min > same.ks_aggregate.max);
}
