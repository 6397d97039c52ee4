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
#include <numeric>
#include <string>
#include <vector>

#include "perfcal/stoex.hpp"

using namespace perfcal;
using namespace perfcal::stoex;
using Catch::Approx;

namespace {

EvalEnv env_with_value(const std::string& name, double v) {
  EvalEnv env;
  env[name].value = v;
  return env;
}

// Random grammar-conforming expression text, used for the round-trip property.
std::string random_expr(Rng& rng, int depth) {
  static const char* kParams[] = {"n", "items", "file", "max"};
  static const char* kChars[] = {"VALUE", "NUMBER_OF_ELEMENTS", "BYTESIZE"};
  const auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.below(n)); };
  if (depth == 0 || rng.uniform() < 0.25) {
    switch (pick(6)) {
      case 0: return std::to_string(pick(100));
      case 1: return std::to_string(pick(100)) + "." + std::to_string(pick(1000));
      case 2: return std::string(kParams[pick(4)]) + "." + kChars[pick(3)];
      case 3: return "IntPMF[(1;0.25)(3;0.75)]";
      case 4: return "DoublePMF[(0.5;0.5)(1.5;0.5)]";
      default: return pick(2) ? "true" : "premium";
    }
  }
  static const char* kOps[] = {" + ", " - ", " * ", " / ", " <= ", " < ", " >= ", " > ", " == ", " AND ", " OR "};
  switch (pick(5)) {
    case 0: return "-" + random_expr(rng, depth - 1);
    case 1: return "SQRT(" + random_expr(rng, depth - 1) + ")";
    case 2: return "NOT " + random_expr(rng, depth - 1);
    case 3: return "(" + random_expr(rng, depth - 1) + kOps[pick(11)] + random_expr(rng, depth - 1) + ")";
    default: return "(" + random_expr(rng, depth - 1) + ")^" + std::to_string(pick(4));
  }
}

}  // namespace

TEST_CASE("parse: comparison with characterizations", "[stoex]") {
  const StoExpr e = parse("file.BYTESIZE <= 5 * max.VALUE");
  const StoExpr expected = binary(BinaryOp::Le, param("file", Characterization::ByteSize),
                                  int_lit(5) * param("max", Characterization::Value));
  CHECK(e == expected);
}

TEST_CASE("parse: IntPMF literal", "[stoex]") {
  const StoExpr e = parse("IntPMF[(1;0.4)(2;0.6)]");
  CHECK(e == int_pmf({{1, 0.4}, {2, 0.6}}));
}

TEST_CASE("parse: precedence", "[stoex]") {
  CHECK(parse("2*3+1") == (int_lit(2) * int_lit(3)) + int_lit(1));
  CHECK(parse("1 + 2 * 3") == int_lit(1) + (int_lit(2) * int_lit(3)));
  CHECK(parse("a.VALUE > 1 AND b.VALUE < 2 OR c.VALUE == 3") ==
        ((binary(BinaryOp::Gt, param("a", Characterization::Value), int_lit(1)) &&
          binary(BinaryOp::Lt, param("b", Characterization::Value), int_lit(2))) ||
         binary(BinaryOp::Eq, param("c", Characterization::Value), int_lit(3))));
  CHECK(parse("10 - 4 - 3") == (int_lit(10) - int_lit(4)) - int_lit(3));
}

TEST_CASE("parse: errors carry position", "[stoex]") {
  try {
    parse("n.FOO + 1");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position() == 2);
    CHECK(std::string(e.what()).find("unknown characterization") != std::string::npos);
  }
  CHECK_THROWS_AS(parse("2 +"), ParseError);
  CHECK_THROWS_AS(parse("(1 + 2"), ParseError);
  CHECK_THROWS_AS(parse(""), ParseError);
  CHECK_THROWS_AS(parse("IntPMF[(1;0.5)(2;0.6)]"), ParseError);  // sums to 1.1
  CHECK_THROWS_AS(parse("IntPMF[(2;0.5)(1;0.5)]"), ParseError);  // not increasing
  CHECK_THROWS_AS(parse("IntPMF[(1.5;1.0)]"), ParseError);
  CHECK_THROWS_AS(parse("1 2"), ParseError);
}

TEST_CASE("render/parse round trip on generated expressions", "[stoex][property]") {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const std::string text = random_expr(rng, 4);
    const StoExpr first = parse(text);
    const std::string rendered = to_string(first);
    INFO(text << "  ->  " << rendered);
    CHECK(parse(rendered) == first);
  }
}

TEST_CASE("render: canonical forms", "[stoex]") {
  CHECK(to_string(parse("2*3+1")) == "2 * 3 + 1");
  CHECK(to_string(parse("(1+2)*3")) == "(1 + 2) * 3");
  CHECK(to_string(parse("NOT (n.VALUE > 10)")) == "NOT (n.VALUE > 10)");
  CHECK(to_string(parse("DoublePMF[(5;1)]")) == "DoublePMF[(5.0;1.0)]");
  CHECK(to_string(parse("t.TYPE == \"two words\"")) == "t.TYPE == \"two words\"");
}

TEST_CASE("evaluate: deterministic semantics", "[stoex]") {
  CHECK(std::get<std::int64_t>(evaluate(parse("2*3+1"))) == 7);
  CHECK(as_number(evaluate(parse("n.VALUE^2"), env_with_value("n", 3))) == 9.0);
  CHECK(std::get<bool>(evaluate(parse("n.VALUE > 10"), env_with_value("n", 10))) == false);
  CHECK(as_number(evaluate(parse("7 / 2"))) == 3.5);
  CHECK(as_number(evaluate(parse("SQRT(16)"))) == 4.0);
  CHECK(as_number(evaluate(parse("(1 < 2) * 5"))) == 5.0);

  EvalEnv env;
  env["rec"].type = "premium";
  CHECK(std::get<bool>(evaluate(parse("rec.TYPE == premium"), env)));
  CHECK_FALSE(std::get<bool>(evaluate(parse("rec.TYPE == basic"), env)));
}

TEST_CASE("evaluate: error paths", "[stoex]") {
  CHECK_THROWS_AS(evaluate(parse("1 / 0")), EvalError);
  CHECK_THROWS_AS(evaluate(parse("n.VALUE + 1")), EvalError);
  CHECK_THROWS_AS(evaluate(parse("IntPMF[(1;1.0)] + 1")), EvalError);
  CHECK_THROWS_AS(evaluate(parse("2 ^ 0.5")), EvalError);
  CHECK_THROWS_AS(evaluate(parse("premium + 1")), EvalError);
  CHECK_THROWS_AS(evaluate(parse("premium == 1")), EvalError);
  EvalEnv env;
  env["n"].value = 2.0;
  CHECK_THROWS_AS(evaluate(parse("n.NUMBER_OF_ELEMENTS"), env), EvalError);
}

TEST_CASE("sample: IntPMF frequency converges", "[stoex]") {
  // Law of large numbers: 10^5 draws, sd of the frequency is ~0.0015.
  const StoExpr e = parse("IntPMF[(1;0.4)(2;0.6)]");
  Rng rng(2024);
  int ones = 0;
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) {
    if (std::get<std::int64_t>(sample(e, {}, rng)) == 1) ++ones;
  }
  const double freq = static_cast<double>(ones) / kDraws;
  CHECK(freq >= 0.39);
  CHECK(freq <= 0.41);
}

TEST_CASE("sample: degenerate and closed under arithmetic", "[stoex]") {
  Rng rng(1);
  const StoExpr single = double_pmf({{5.0, 1.0}});
  for (int i = 0; i < 100; ++i) CHECK(as_number(sample(single, {}, rng)) == 5.0);
  const StoExpr shifted = parse("2 + IntPMF[(0;0.5)(1;0.5)]");
  bool saw2 = false, saw3 = false;
  for (int i = 0; i < 200; ++i) {
    const auto v = std::get<std::int64_t>(sample(shifted, {}, rng));
    CHECK((v == 2 || v == 3));
    saw2 |= v == 2;
    saw3 |= v == 3;
  }
  CHECK((saw2 && saw3));
}

TEST_CASE("sample: equals evaluate for PMF-free expressions, reproducible by seed", "[stoex][property]") {
  Rng gen(99);
  for (int i = 0; i < 200; ++i) {
    const double n = static_cast<double>(gen.below(50));
    const StoExpr e = parse("3 * n.VALUE^2 + SQRT(n.VALUE) - 1 / (n.VALUE + 1)");
    const EvalEnv env = env_with_value("n", n);
    Rng rng(i);
    CHECK(as_number(sample(e, env, rng)) == as_number(evaluate(e, env)));
  }
  const StoExpr stochastic = parse("DoublePMF[(1.0;0.2)(2.0;0.3)(4.0;0.5)] * IntPMF[(1;0.5)(3;0.5)]");
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(as_number(sample(stochastic, {}, a)) == as_number(sample(stochastic, {}, b)));
}

TEST_CASE("expectation: linear in PMFs, probabilities for boolean PMFs", "[stoex]") {
  CHECK(expectation(parse("IntPMF[(1;0.4)(2;0.6)]")) == Approx(1.6));
  CHECK(expectation(parse("0.002 * n.VALUE + DoublePMF[(0.4;0.5)(0.6;0.5)]"), env_with_value("n", 100)) ==
        Approx(0.7));
  CHECK(expectation(parse("(n.VALUE > 10) AND IntPMF[(0;0.25)(1;0.75)]"), env_with_value("n", 11)) == Approx(0.75));
  CHECK(expectation(parse("NOT IntPMF[(0;0.25)(1;0.75)]")) == Approx(0.25));
  CHECK_THROWS_AS(expectation(parse("IntPMF[(1;0.5)(2;0.5)] > 1")), EvalError);
}

TEST_CASE("build_double_pmf: examples", "[stoex]") {
  const std::vector<double> same{5, 5, 5};
  CHECK(build_double_pmf(same) == double_pmf({{5.0, 1.0}}));

  // Hand-binned: width (3-0)/2 = 1.5, bins [0,1.5) and [1.5,3].
  const std::vector<double> four{0, 1, 2, 3};
  CHECK(build_double_pmf(four, 2) == double_pmf({{0.75, 0.5}, {2.25, 0.5}}));

  CHECK_THROWS_AS(build_double_pmf(std::vector<double>{}), EvalError);
}

TEST_CASE("build_double_pmf: uniform frequencies and normalization", "[stoex][property]") {
  Rng rng(5);
  std::vector<double> u(1000);
  for (auto& x : u) x = rng.uniform();
  const StoExpr pmf = build_double_pmf(u, 10);
  const auto* node = pmf.as<DoublePmf>();
  REQUIRE(node != nullptr);
  REQUIRE(node->outcomes.size() == 10);
  for (const auto& o : node->outcomes) {
    CHECK(o.probability >= 0.07);
    CHECK(o.probability <= 0.13);
  }

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(1 + rng.below(300));
    for (auto& x : s) x = rng.uniform() * 100.0 - 20.0;
    const StoExpr built = build_double_pmf(s, 1 + static_cast<int>(rng.below(30)));
    const auto* p = built.as<DoublePmf>();
    double sum = 0.0;
    for (const auto& o : p->outcomes) sum += o.probability;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("real_to_int_pmf: examples", "[stoex]") {
  CHECK(real_to_int_pmf(1.6) == int_pmf({{1, 0.4}, {2, 0.6}}));
  CHECK(to_string(real_to_int_pmf(1.6)) == "IntPMF[(1;0.4)(2;0.6)]");
  CHECK(real_to_int_pmf(3.0) == int_pmf({{3, 1.0}}));
  CHECK(real_to_int_pmf(0.25) == int_pmf({{0, 0.75}, {1, 0.25}}));
}

TEST_CASE("real_to_int_pmf: expectation equals input for six-decimal values", "[stoex][property]") {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    // x = k / 10^6 with k drawn up to 10^9.
    const auto k = static_cast<std::int64_t>(rng.below(1000000000));
    const double x = static_cast<double>(k) / 1e6;
    const StoExpr built = real_to_int_pmf(x);
    const auto* pmf = built.as<IntPmf>();
    REQUIRE(pmf != nullptr);
    const std::int64_t floor_part = k / 1000000;
    const std::int64_t frac_micros = k % 1000000;
    if (frac_micros == 0) {
      REQUIRE(pmf->outcomes.size() == 1);
      CHECK(pmf->outcomes[0].value == floor_part);
      continue;
    }
    REQUIRE(pmf->outcomes.size() == 2);
    CHECK(pmf->outcomes[0].value == floor_part);
    // Rational check: the upper probability is exactly frac_micros / 10^6.
    CHECK(std::llround(pmf->outcomes[1].probability * 1e6) == frac_micros);
    CHECK(std::llround(pmf->outcomes[0].probability * 1e6) == 1000000 - frac_micros);
    CHECK(std::abs(mean_of(pmf->outcomes) - x) <= 1e-12 * std::max(1.0, x));
  }
}
