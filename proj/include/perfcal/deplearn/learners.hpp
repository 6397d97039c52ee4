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

// Learners turning datasets into stochastic expressions: resource demands,
// loop iteration counts, branch transition conditions and external-call
// arguments.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "perfcal/deplearn/regression.hpp"
#include "perfcal/deplearn/tree.hpp"
#include "perfcal/detail/json.hpp"
#include "perfcal/model.hpp"
#include "perfcal/records.hpp"
#include "perfcal/stoex.hpp"

namespace perfcal::deplearn {

using records::Dataset;
using stoex::StoExpr;

struct LearnConfig {
  std::uint64_t seed = 0;
  bool parametric = true;  // false: plain distributions, no dependencies
  int residual_bins = 20;
  double min_improvement = 0.02;
  std::size_t min_leaf = 5;
};

/// Learned expression plus fit diagnostics.
struct LearnedPmp {
  StoExpr expression;
  std::string method;
  double r2 = 0.0;
  double cv_rmse = 0.0;
  std::vector<std::string> terms;
  std::size_t residual_bins = 0;
  std::size_t rows = 0;

  json to_json() const {
    return {{"expression", stoex::to_string(expression)},
            {"method", method},
            {"r2", r2},
            {"cvRmse", cv_rmse},
            {"terms", terms},
            {"residualBins", residual_bins},
            {"rows", rows}};
  }
};

struct LearnedArgument {
  model::Binding binding;
  std::string method;  // constant | identity | regression | tree | distribution
};

enum class Transform { Linear, Square, Cube, Sqrt };

struct Term {
  std::size_t column;
  Transform transform;
};

namespace detail {

/// Rounds to 12 significant digits so exact decimal structure survives
/// floating-point noise.
inline double round_sig(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return std::strtod(buf, nullptr);
}

inline double apply(Transform t, double x) {
  switch (t) {
    case Transform::Linear: return x;
    case Transform::Square: return x * x;
    case Transform::Cube: return x * x * x;
    case Transform::Sqrt: return std::sqrt(x);
  }
  return x;
}

inline StoExpr column_expr(const std::string& name) {
  const auto [param, what] = model::split_key(name);
  return stoex::param(param, what);
}

inline StoExpr term_expr(const std::string& column, Transform t) {
  const StoExpr p = column_expr(column);
  switch (t) {
    case Transform::Linear: return p;
    case Transform::Square: return stoex::binary(stoex::BinaryOp::Pow, p, stoex::int_lit(2));
    case Transform::Cube: return stoex::binary(stoex::BinaryOp::Pow, p, stoex::int_lit(3));
    case Transform::Sqrt: return stoex::unary(stoex::UnaryOp::Sqrt, p);
  }
  return p;
}

inline std::string term_name(const std::string& column, Transform t) {
  switch (t) {
    case Transform::Linear: return column;
    case Transform::Square: return column + "^2";
    case Transform::Cube: return column + "^3";
    case Transform::Sqrt: return "SQRT(" + column + ")";
  }
  return column;
}

inline StoExpr sum(const std::vector<StoExpr>& parts) {
  if (parts.empty()) return stoex::int_lit(0);
  StoExpr e = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) e = e + parts[i];
  return e;
}

inline StoExpr all_of(const std::vector<StoExpr>& parts) {
  if (parts.empty()) return stoex::bool_lit(true);
  StoExpr e = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) e = e && parts[i];
  return e;
}

inline StoExpr any_of(const std::vector<StoExpr>& parts) {
  if (parts.empty()) return stoex::bool_lit(false);
  StoExpr e = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) e = e || parts[i];
  return e;
}

inline StoExpr number_lit(double v) {
  if (std::floor(v) == v && std::abs(v) < 9e15) return stoex::int_lit(static_cast<std::int64_t>(v));
  return stoex::double_lit(v);
}

/// Rows sorted by (numeric features, labels, target, target label).
inline Dataset canonical(const Dataset& d) {
  const auto order = canonical_order(d.rows(), [&](std::size_t a, std::size_t b) {
    if (d.x[a] != d.x[b]) return d.x[a] < d.x[b];
    if (d.labels[a] != d.labels[b]) return d.labels[a] < d.labels[b];
    if (d.y[a] != d.y[b]) return d.y[a] < d.y[b];
    return d.y_labels[a] < d.y_labels[b];
  });
  Dataset out;
  out.numeric_columns = d.numeric_columns;
  out.integral = d.integral;
  out.enum_columns = d.enum_columns;
  out.excluded = d.excluded;
  for (std::size_t i : order) {
    out.x.push_back(d.x[i]);
    out.labels.push_back(d.labels[i]);
    out.y.push_back(d.y[i]);
    out.y_labels.push_back(d.y_labels[i]);
    out.envs.push_back(d.envs[i]);
  }
  return out;
}

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& rows, std::optional<std::size_t> drop_enum) {
  Dataset out;
  out.numeric_columns = d.numeric_columns;
  out.integral = d.integral;
  for (std::size_t k = 0; k < d.enum_columns.size(); ++k) {
    if (k != drop_enum) out.enum_columns.push_back(d.enum_columns[k]);
  }
  for (std::size_t r : rows) {
    out.x.push_back(d.x[r]);
    std::vector<std::string> lab;
    for (std::size_t k = 0; k < d.labels[r].size(); ++k) {
      if (k != drop_enum) lab.push_back(d.labels[r][k]);
    }
    out.labels.push_back(std::move(lab));
    out.y.push_back(d.y[r]);
    out.y_labels.push_back(d.y_labels[r]);
    out.envs.push_back(d.envs[r]);
  }
  return out;
}

struct Candidates {
  std::vector<Term> terms;
  std::vector<Column> columns;
};

inline Candidates make_candidates(const Dataset& d, const std::vector<Transform>& transforms, bool integral_only) {
  Candidates c;
  for (std::size_t j = 0; j < d.numeric_columns.size(); ++j) {
    if (integral_only && !d.integral[j]) continue;
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& row : d.x) lo = std::min(lo, row[j]);
    for (const Transform t : transforms) {
      if (t == Transform::Sqrt && lo < 0.0) continue;
      Column col(d.rows());
      for (std::size_t r = 0; r < d.rows(); ++r) col[r] = apply(t, d.x[r][j]);
      c.terms.push_back({j, t});
      c.columns.push_back(std::move(col));
    }
  }
  return c;
}

// Class index per row by quartile bin of the target.
inline std::vector<int> quartile_classes(const std::vector<double>& y, int& classes) {
  std::vector<double> s = y;
  std::sort(s.begin(), s.end());
  const auto q = [&](double p) {
    const double h = (static_cast<double>(s.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
  };
  const double cuts[] = {q(0.25), q(0.5), q(0.75)};
  std::vector<int> out(y.size());
  classes = 4;
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = (y[i] > cuts[0]) + (y[i] > cuts[1]) + (y[i] > cuts[2]);
  return out;
}

inline TreeInput tree_input(const Dataset& d, bool numeric, bool categorical) {
  TreeInput in;
  if (numeric) {
    in.numeric_names = d.numeric_columns;
    in.numeric.assign(d.numeric_columns.size(), Column(d.rows()));
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t j = 0; j < d.numeric_columns.size(); ++j) in.numeric[j][r] = d.x[r][j];
    }
  }
  if (categorical) {
    in.categorical_names = d.enum_columns;
    in.categorical.assign(d.enum_columns.size(), std::vector<std::string>(d.rows()));
    for (std::size_t r = 0; r < d.rows(); ++r) {
      for (std::size_t k = 0; k < d.enum_columns.size(); ++k) in.categorical[k][r] = d.labels[r][k];
    }
  }
  return in;
}

// Boolean test of an internal tree node as an expression.
inline StoExpr node_test(const DecisionTree& t, const TreeNode& n, const std::vector<bool>& integral) {
  if (n.categorical) {
    return stoex::binary(stoex::BinaryOp::Eq, column_expr(t.categorical_names[n.feature]), stoex::enum_lit(n.label));
  }
  const bool whole = n.feature < integral.size() && integral[n.feature];
  // On integer data "x > 10.5" and "x > 10" select the same rows.
  const StoExpr threshold = whole ? number_lit(std::floor(n.threshold)) : stoex::double_lit(round_sig(n.threshold));
  return stoex::binary(stoex::BinaryOp::Gt, column_expr(t.numeric_names[n.feature]), threshold);
}

/// Per class: disjunction over leaves of (path conjunction [AND P(class)]),
/// where P(class) is the leaf's class frequency when the leaf is mixed.
/// A single-leaf tree yields pure probability expressions.
inline std::vector<StoExpr> tree_conditions(const DecisionTree& t, const std::vector<bool>& integral) {
  std::vector<std::vector<StoExpr>> parts(static_cast<std::size_t>(t.classes));
  struct Frame {
    int node;
    std::vector<StoExpr> path;
  };
  std::vector<Frame> stack{{0, {}}};
  while (!stack.empty()) {
    Frame f = std::move(stack.back());
    stack.pop_back();
    const TreeNode& n = t.nodes[f.node];
    if (n.leaf) {
      const double total = n.total();
      for (int c = 0; c < t.classes; ++c) {
        const double p = total > 0.0 ? n.counts[c] / total : 0.0;
        if (p <= 0.0) continue;
        std::vector<StoExpr> conj = f.path;
        if (p < 1.0) conj.push_back(stoex::probability_bool(p));
        parts[c].push_back(conj.empty() ? stoex::probability_bool(p) : all_of(conj));
      }
      continue;
    }
    const StoExpr test = node_test(t, n, integral);
    auto no_path = f.path;
    no_path.push_back(!test);
    auto yes_path = f.path;
    yes_path.push_back(test);
    stack.push_back({n.no, std::move(no_path)});
    stack.push_back({n.yes, std::move(yes_path)});
  }
  std::vector<StoExpr> out;
  for (auto& p : parts) out.push_back(any_of(p));
  return out;
}

inline bool degenerate(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo <= 1e-9 * std::max(1.0, std::max(std::abs(*lo), std::abs(*hi)));
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Residual constant C as a distribution (dropped when exactly zero).
inline std::optional<StoExpr> residual_expr(const std::vector<double>& c, int bins, std::size_t& used_bins) {
  if (degenerate(c)) {
    const double v = round_sig(mean(c));
    used_bins = 1;
    if (std::abs(v) < 1e-12) {
      used_bins = 0;
      return std::nullopt;
    }
    return stoex::double_pmf({{v, 1.0}});
  }
  std::vector<double> rounded;
  rounded.reserve(c.size());
  for (double x : c) rounded.push_back(round_sig(x));
  StoExpr e = stoex::build_double_pmf(rounded, bins);
  used_bins = e.as<stoex::DoublePmf>()->outcomes.size();
  return e;
}

inline LearnedPmp learn_rd_canonical(const Dataset& d, const LearnConfig& cfg);

}  // namespace detail

/// Resource demand: enum-dependent datasets become a sum of guarded
/// sub-expressions; numeric dependencies are selected among linear,
/// square, cube and square-root terms; the intercept is replaced by a
/// distribution over the per-row residual constants.
inline LearnedPmp learn_rd(const Dataset& data, const LearnConfig& cfg = {}) {
  if (data.rows() == 0) throw CalibrationError("learn_rd", "empty dataset");
  return detail::learn_rd_canonical(detail::canonical(data), cfg);
}

namespace detail {

inline LearnedPmp learn_rd_canonical(const Dataset& d, const LearnConfig& cfg) {
  LearnedPmp out;
  out.rows = d.rows();
  if (!cfg.parametric) {
    out.method = "distribution";
    out.expression = residual_expr(d.y, cfg.residual_bins, out.residual_bins).value_or(stoex::double_pmf({{0.0, 1.0}}));
    return out;
  }
  if (!d.enum_columns.empty() && d.rows() >= 2 * cfg.min_leaf) {
    TreeInput in = tree_input(d, false, true);
    in.y = quartile_classes(d.y, in.classes);
    const DecisionTree tree = fit_tree(in, TreeConfig{cfg.min_leaf, 5, cfg.seed, true});
    if (!tree.nodes[0].leaf) {
      const std::size_t f = tree.nodes[0].feature;
      std::map<std::string, std::vector<std::size_t>> groups;
      for (std::size_t r = 0; r < d.rows(); ++r) groups[d.labels[r][f]].push_back(r);
      std::vector<StoExpr> parts;
      out.method = "enum-guarded";
      double sse = 0.0, sst = 0.0;
      const double ybar = mean(d.y);
      for (const auto& [label, rows] : groups) {
        const LearnedPmp sub = learn_rd_canonical(subset(d, rows, f), cfg);
        const StoExpr guard =
            stoex::binary(stoex::BinaryOp::Eq, column_expr(d.enum_columns[f]), stoex::enum_lit(label));
        parts.push_back(guard * sub.expression);
        for (const auto& t : sub.terms) out.terms.push_back(d.enum_columns[f] + "==" + label + ":" + t);
        out.residual_bins += sub.residual_bins;
        sse += (1.0 - sub.r2) * [&] {
          double s = 0.0;
          double m = 0.0;
          for (std::size_t r : rows) m += d.y[r];
          m /= static_cast<double>(rows.size());
          for (std::size_t r : rows) s += (d.y[r] - m) * (d.y[r] - m);
          return s;
        }();
        out.cv_rmse = std::max(out.cv_rmse, sub.cv_rmse);
      }
      for (double y : d.y) sst += (y - ybar) * (y - ybar);
      out.r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;
      out.expression = sum(parts);
      return out;
    }
  }
  const auto cand = make_candidates(d, {Transform::Linear, Transform::Square, Transform::Cube, Transform::Sqrt}, false);
  const Selection sel = select_terms(cand.columns, d.y, SelectionConfig{5, cfg.min_improvement, cfg.seed});
  std::vector<std::size_t> chosen = sel.chosen;
  std::sort(chosen.begin(), chosen.end());
  std::vector<Column> cols;
  for (std::size_t j : chosen) cols.push_back(cand.columns[j]);
  std::vector<double> weights(chosen.size(), 0.0);
  if (!chosen.empty()) {
    const OlsFit fit = fit_ols(cols, d.y);
    for (std::size_t k = 0; k < chosen.size(); ++k) weights[k] = round_sig(fit.weights[k]);
    out.r2 = fit.r2;
  }
  out.cv_rmse = sel.cv_rmse;
  std::vector<double> residual(d.rows());
  for (std::size_t r = 0; r < d.rows(); ++r) {
    double v = d.y[r];
    for (std::size_t k = 0; k < chosen.size(); ++k) v -= weights[k] * cols[k][r];
    residual[r] = v;
  }
  std::vector<StoExpr> parts;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    if (weights[k] == 0.0) continue;
    const Term& t = cand.terms[chosen[k]];
    parts.push_back(stoex::double_lit(weights[k]) * term_expr(d.numeric_columns[t.column], t.transform));
    out.terms.push_back(term_name(d.numeric_columns[t.column], t.transform));
  }
  if (auto c = residual_expr(residual, cfg.residual_bins, out.residual_bins)) parts.push_back(*c);
  out.method = parts.size() > 1 || !out.terms.empty() ? "regression" : "distribution";
  out.expression = parts.empty() ? stoex::double_pmf({{0.0, 1.0}}) : sum(parts);
  return out;
}

}  // namespace detail

/// Loop iteration count: integer features only with linear, square and
/// cube terms. Non-integer weights become integer distributions with the
/// same mean; the intercept becomes an integer distribution over rounded
/// residuals (omitted when identically zero).
inline LearnedPmp learn_loop(const Dataset& data, const LearnConfig& cfg = {}) {
  if (data.rows() == 0) throw CalibrationError("learn_loop", "empty dataset");
  for (double y : data.y) {
    if (y < 0.0 || std::floor(y) != y) throw CalibrationError("learn_loop", "non-integer or negative iteration count");
  }
  const Dataset d = detail::canonical(data);
  LearnedPmp out;
  out.rows = d.rows();
  const auto int_dist = [&](const std::vector<double>& v) {
    std::vector<std::int64_t> ints;
    for (double x : v) ints.push_back(std::llround(x));
    return stoex::empirical_int_pmf(ints);
  };
  if (!cfg.parametric) {
    out.method = "distribution";
    out.expression = int_dist(d.y);
    out.residual_bins = out.expression.as<stoex::IntPmf>()->outcomes.size();
    return out;
  }
  const auto cand = detail::make_candidates(d, {Transform::Linear, Transform::Square, Transform::Cube}, true);
  const Selection sel = select_terms(cand.columns, d.y, SelectionConfig{5, cfg.min_improvement, cfg.seed});
  std::vector<std::size_t> chosen = sel.chosen;
  std::sort(chosen.begin(), chosen.end());
  std::vector<Column> cols;
  for (std::size_t j : chosen) cols.push_back(cand.columns[j]);
  std::vector<double> weights(chosen.size(), 0.0);
  if (!chosen.empty()) {
    const OlsFit fit = fit_ols(cols, d.y);
    out.r2 = fit.r2;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      double w = detail::round_sig(fit.weights[k]);
      if (std::abs(w - std::round(w)) <= 1e-6 * std::max(1.0, std::abs(w))) w = std::round(w);
      weights[k] = w;
    }
  }
  out.cv_rmse = sel.cv_rmse;
  std::vector<StoExpr> parts;
  for (std::size_t k = 0; k < chosen.size(); ++k) {
    const double w = weights[k];
    if (w == 0.0) continue;
    const Term& t = cand.terms[chosen[k]];
    const StoExpr term = detail::term_expr(d.numeric_columns[t.column], t.transform);
    if (w == 1.0) {
      parts.push_back(term);
    } else if (std::floor(w) == w) {
      parts.push_back(stoex::int_lit(static_cast<std::int64_t>(w)) * term);
    } else {
      parts.push_back(stoex::real_to_int_pmf(w) * term);
    }
    out.terms.push_back(detail::term_name(d.numeric_columns[t.column], t.transform));
  }
  std::vector<double> residual(d.rows());
  for (std::size_t r = 0; r < d.rows(); ++r) {
    double v = d.y[r];
    for (std::size_t k = 0; k < chosen.size(); ++k) v -= weights[k] * cols[k][r];
    residual[r] = std::round(v);
  }
  const bool zero = std::all_of(residual.begin(), residual.end(), [](double v) { return v == 0.0; });
  if (!zero || parts.empty()) {
    const StoExpr c = int_dist(residual);
    out.residual_bins = c.as<stoex::IntPmf>()->outcomes.size();
    parts.push_back(c);
  }
  out.method = out.terms.empty() ? "distribution" : "regression";
  out.expression = detail::sum(parts);
  return out;
}

/// Branch transitions (targets are transition indices): one boolean
/// condition per transition, derived from a decision tree over all
/// features. Conditions are mutually exclusive over the observed space.
inline std::vector<LearnedPmp> learn_branch(const Dataset& data, std::size_t transitions, const LearnConfig& cfg = {}) {
  if (data.rows() == 0) throw CalibrationError("learn_branch", "empty dataset");
  for (double y : data.y) {
    if (y < 0 || y >= static_cast<double>(transitions)) {
      throw CalibrationError("learn_branch", "transition index out of range");
    }
  }
  const Dataset d = detail::canonical(data);
  TreeInput in = cfg.parametric ? detail::tree_input(d, true, true) : TreeInput{};
  in.classes = static_cast<int>(transitions);
  for (double y : d.y) in.y.push_back(static_cast<int>(y));
  const DecisionTree tree = fit_tree(in, TreeConfig{cfg.min_leaf, 5, cfg.seed, true});
  const auto conditions = detail::tree_conditions(tree, d.integral);
  std::vector<LearnedPmp> out;
  for (std::size_t t = 0; t < transitions; ++t) {
    LearnedPmp p;
    p.expression = conditions[t];
    p.method = tree.nodes[0].leaf ? "probability" : "tree";
    p.rows = d.rows();
    p.residual_bins = tree.leaves();
    std::size_t correct = 0;
    for (std::size_t r = 0; r < d.rows(); ++r) correct += tree.predict(in, r) == in.y[r];
    p.r2 = static_cast<double>(correct) / static_cast<double>(d.rows());  // training accuracy
    out.push_back(std::move(p));
  }
  return out;
}

/// External-call argument characterization ("param.CHARACTERIZATION").
/// Checked in order: constant, identical to a caller characterization,
/// boolean via tree, numeric via linear regression, enum via tree, and
/// finally an empirical distribution.
inline LearnedArgument learn_external_args(const Dataset& data, const std::string& key, const LearnConfig& cfg = {}) {
  if (data.rows() == 0) throw CalibrationError("learn_external_args", "empty dataset");
  const Dataset d = detail::canonical(data);
  const auto [_, what] = model::split_key(key);
  const bool categorical = what == stoex::Characterization::Type;
  if (categorical) {
    std::set<std::string> distinct(d.y_labels.begin(), d.y_labels.end());
    if (distinct.size() == 1) {
      return {model::LabelDistribution{{{*distinct.begin(), stoex::bool_lit(true)}}}, "constant"};
    }
    if (cfg.parametric) {
      for (std::size_t k = 0; k < d.enum_columns.size(); ++k) {
        bool same = true;
        for (std::size_t r = 0; r < d.rows() && same; ++r) same = d.labels[r][k] == d.y_labels[r];
        if (same) return {detail::column_expr(d.enum_columns[k]), "identity"};
      }
    }
    std::vector<std::string> labels(distinct.begin(), distinct.end());
    TreeInput in = cfg.parametric ? detail::tree_input(d, true, true) : TreeInput{};
    in.classes = static_cast<int>(labels.size());
    for (const auto& l : d.y_labels) {
      in.y.push_back(static_cast<int>(std::lower_bound(labels.begin(), labels.end(), l) - labels.begin()));
    }
    const DecisionTree tree = fit_tree(in, TreeConfig{cfg.min_leaf, 5, cfg.seed, true});
    const auto conditions = detail::tree_conditions(tree, d.integral);
    model::LabelDistribution dist;
    for (std::size_t i = 0; i < labels.size(); ++i) dist.choices.push_back({labels[i], conditions[i]});
    return {dist, tree.nodes[0].leaf ? "distribution" : "tree"};
  }

  if (detail::degenerate(d.y)) return {detail::number_lit(detail::round_sig(d.y.front())), "constant"};
  if (cfg.parametric) {
    for (std::size_t j = 0; j < d.numeric_columns.size(); ++j) {
      bool same = true;
      for (std::size_t r = 0; r < d.rows() && same; ++r) same = d.x[r][j] == d.y[r];
      if (same) return {detail::column_expr(d.numeric_columns[j]), "identity"};
    }
  }
  const bool boolean = std::all_of(d.y.begin(), d.y.end(), [](double v) { return v == 0.0 || v == 1.0; });
  if (boolean && cfg.parametric) {
    TreeInput in = detail::tree_input(d, true, true);
    in.classes = 2;
    for (double y : d.y) in.y.push_back(static_cast<int>(y));
    const DecisionTree tree = fit_tree(in, TreeConfig{cfg.min_leaf, 5, cfg.seed, true});
    if (!tree.nodes[0].leaf) return {detail::tree_conditions(tree, d.integral)[1], "tree"};
  }
  const bool integral = std::all_of(d.y.begin(), d.y.end(), [](double v) { return std::floor(v) == v; });
  if (cfg.parametric && !boolean) {
    const auto cand = detail::make_candidates(d, {Transform::Linear}, false);
    const Selection sel = select_terms(cand.columns, d.y, SelectionConfig{5, cfg.min_improvement, cfg.seed});
    if (!sel.chosen.empty()) {
      std::vector<std::size_t> chosen = sel.chosen;
      std::sort(chosen.begin(), chosen.end());
      std::vector<Column> cols;
      for (std::size_t j : chosen) cols.push_back(cand.columns[j]);
      const OlsFit fit = fit_ols(cols, d.y);
      std::vector<StoExpr> parts;
      std::vector<double> residual(d.y);
      for (std::size_t k = 0; k < chosen.size(); ++k) {
        const double w = detail::round_sig(fit.weights[k]);
        for (std::size_t r = 0; r < d.rows(); ++r) residual[r] -= w * cols[k][r];
        if (w == 0.0) continue;
        const StoExpr p = detail::column_expr(d.numeric_columns[cand.terms[chosen[k]].column]);
        parts.push_back(w == 1.0 ? p : detail::number_lit(w) * p);
      }
      std::size_t bins = 0;
      if (detail::degenerate(residual)) {
        const double c = detail::round_sig(detail::mean(residual));
        if (std::abs(c) > 1e-12) parts.push_back(detail::number_lit(c));
      } else if (auto c = detail::residual_expr(residual, cfg.residual_bins, bins)) {
        parts.push_back(*c);
      }
      return {detail::sum(parts), "regression"};
    }
  }
  std::set<double> distinct(d.y.begin(), d.y.end());
  if (distinct.size() <= static_cast<std::size_t>(cfg.residual_bins)) {
    if (integral) {
      std::vector<std::int64_t> ints;
      for (double v : d.y) ints.push_back(std::llround(v));
      return {stoex::empirical_int_pmf(ints), "distribution"};
    }
    return {stoex::empirical_double_pmf(d.y), "distribution"};
  }
  return {stoex::build_double_pmf(d.y, cfg.residual_bins), "distribution"};
}

}  // namespace perfcal::deplearn
