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

// Decision tree: top-down induction by gain ratio (binary numeric
// threshold and categorical equality splits), cost-complexity pruning with
// the pruning level chosen by cross-validation (one-standard-error rule).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include "perfcal/deplearn/regression.hpp"
#include "perfcal/error.hpp"

namespace perfcal::deplearn {

/// Column-major training table with integer class labels in [0, classes).
struct TreeInput {
  std::vector<std::string> numeric_names;
  std::vector<Column> numeric;
  std::vector<std::string> categorical_names;
  std::vector<std::vector<std::string>> categorical;
  std::vector<int> y;
  int classes = 0;

  std::size_t rows() const { return y.size(); }
};

struct TreeNode {
  bool leaf = true;
  bool categorical = false;
  std::size_t feature = 0;
  double threshold = 0.0;  // numeric test: x > threshold
  std::string label;       // categorical test: x == label
  int yes = -1;
  int no = -1;
  std::vector<double> counts;  // training class counts at this node

  int majority() const {
    return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  double total() const {
    double t = 0.0;
    for (double c : counts) t += c;
    return t;
  }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  int classes = 0;

  template <class NumFn, class CatFn>
  int leaf_index(NumFn numeric, CatFn categorical) const {
    int i = 0;
    while (!nodes[i].leaf) {
      const TreeNode& n = nodes[i];
      const bool pass = n.categorical ? categorical(n.feature) == n.label : numeric(n.feature) > n.threshold;
      i = pass ? n.yes : n.no;
    }
    return i;
  }

  int leaf_of(const TreeInput& in, std::size_t row) const {
    return leaf_index([&](std::size_t f) { return in.numeric[f][row]; },
                      [&](std::size_t f) -> const std::string& { return in.categorical[f][row]; });
  }

  int predict(const TreeInput& in, std::size_t row) const { return nodes[leaf_of(in, row)].majority(); }

  std::size_t leaves() const {
    std::size_t n = 0;
    for (const auto& node : reachable()) n += nodes[node].leaf;
    return n;
  }

  std::vector<int> reachable() const {
    std::vector<int> out, stack{0};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      out.push_back(i);
      if (!nodes[i].leaf) {
        stack.push_back(nodes[i].no);
        stack.push_back(nodes[i].yes);
      }
    }
    return out;
  }

  /// Compact structural rendering, e.g. "(n.VALUE > 10.5 ? [1] : [0])".
  std::string describe(int i = 0) const {
    const TreeNode& n = nodes[i];
    if (n.leaf) return "[" + std::to_string(n.majority()) + "]";
    std::string test = n.categorical ? categorical_names[n.feature] + " == " + n.label
                                     : numeric_names[n.feature] + " > " + stoex_number(n.threshold);
    return "(" + test + " ? " + describe(n.yes) + " : " + describe(n.no) + ")";
  }

 private:
  static std::string stoex_number(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }
};

struct TreeConfig {
  std::size_t min_leaf = 5;
  int folds = 5;
  std::uint64_t seed = 0;
  bool prune = true;
};

namespace detail {

inline double entropy(const std::vector<double>& counts, double total) {
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

struct SplitChoice {
  bool categorical = false;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::string label;
  double gain = 0.0;
  double ratio = 0.0;
};

class Grower {
 public:
  Grower(const TreeInput& in, const TreeConfig& cfg) : in_(in), cfg_(cfg) {}

  DecisionTree grow(const std::vector<std::size_t>& rows) {
    tree_.numeric_names = in_.numeric_names;
    tree_.categorical_names = in_.categorical_names;
    tree_.classes = in_.classes;
    build(rows);
    return std::move(tree_);
  }

 private:
  std::vector<double> counts_of(const std::vector<std::size_t>& rows) const {
    std::vector<double> c(static_cast<std::size_t>(in_.classes), 0.0);
    for (std::size_t r : rows) c[static_cast<std::size_t>(in_.y[r])] += 1.0;
    return c;
  }

  int build(const std::vector<std::size_t>& rows) {
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{});
    tree_.nodes[index].counts = counts_of(rows);
    const auto choice = best_split(rows, tree_.nodes[index].counts);
    if (!choice) return index;
    std::vector<std::size_t> yes, no;
    for (std::size_t r : rows) (passes(*choice, r) ? yes : no).push_back(r);
    const int y = build(yes);
    const int n = build(no);
    TreeNode& node = tree_.nodes[index];
    node.leaf = false;
    node.categorical = choice->categorical;
    node.feature = choice->feature;
    node.threshold = choice->threshold;
    node.label = choice->label;
    node.yes = y;
    node.no = n;
    return index;
  }

  bool passes(const SplitChoice& s, std::size_t r) const {
    return s.categorical ? in_.categorical[s.feature][r] == s.label : in_.numeric[s.feature][r] > s.threshold;
  }

  std::optional<SplitChoice> best_split(const std::vector<std::size_t>& rows, const std::vector<double>& counts) const {
    const double n = static_cast<double>(rows.size());
    if (rows.size() < 2 * cfg_.min_leaf) return std::nullopt;
    if (*std::max_element(counts.begin(), counts.end()) == n) return std::nullopt;
    const double base = entropy(counts, n);
    std::vector<SplitChoice> candidates;
    const auto evaluate = [&](const std::vector<double>& yes, double ny, SplitChoice s) {
      std::vector<double> no(counts.size());
      for (std::size_t c = 0; c < counts.size(); ++c) no[c] = counts[c] - yes[c];
      const double nn = n - ny;
      s.gain = base - (ny / n) * entropy(yes, ny) - (nn / n) * entropy(no, nn);
      return s;
    };
    for (std::size_t f = 0; f < in_.numeric.size(); ++f) {
      std::vector<std::size_t> sorted = rows;
      const auto& col = in_.numeric[f];
      std::stable_sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
      // Scan thresholds from the top: "yes" side holds rows with x > t.
      std::vector<double> yes(counts.size(), 0.0);
      std::optional<SplitChoice> best;
      std::size_t thresholds = 0;
      for (std::size_t i = sorted.size() - 1; i > 0; --i) {
        yes[static_cast<std::size_t>(in_.y[sorted[i]])] += 1.0;
        const double hi = col[sorted[i]];
        const double lo = col[sorted[i - 1]];
        if (lo == hi) continue;
        ++thresholds;
        const std::size_t ny = sorted.size() - i;
        if (ny < cfg_.min_leaf || i < cfg_.min_leaf) continue;
        SplitChoice s = evaluate(yes, static_cast<double>(ny), SplitChoice{false, f, lo + (hi - lo) / 2.0, {}, 0, 0});
        if (!best || s.gain > best->gain) best = s;
      }
      if (best && thresholds > 0) {
        best->gain -= std::log2(static_cast<double>(thresholds)) / n;  // MDL correction
        const double py = std::count_if(rows.begin(), rows.end(), [&](std::size_t r) { return col[r] > best->threshold; }) / n;
        const double split_info = -py * std::log2(py) - (1 - py) * std::log2(1 - py);
        best->ratio = split_info > 0.0 ? best->gain / split_info : 0.0;
        if (best->gain > 0.0) candidates.push_back(*best);
      }
    }
    for (std::size_t f = 0; f < in_.categorical.size(); ++f) {
      std::map<std::string, std::vector<double>> by_label;
      for (std::size_t r : rows) {
        auto& c = by_label[in_.categorical[f][r]];
        if (c.empty()) c.assign(counts.size(), 0.0);
        c[static_cast<std::size_t>(in_.y[r])] += 1.0;
      }
      if (by_label.size() < 2) continue;
      if (by_label.size() == 2) {
        // Both one-vs-rest tests are equivalent; test the rarer label.
        const auto total = [](const std::vector<double>& c) { return std::accumulate(c.begin(), c.end(), 0.0); };
        auto first = by_label.begin();
        auto second = std::next(first);
        by_label.erase(total(second->second) < total(first->second) ? first : second);
      }
      for (const auto& [label, yes] : by_label) {
        double ny = 0.0;
        for (double c : yes) ny += c;
        if (ny < static_cast<double>(cfg_.min_leaf) || n - ny < static_cast<double>(cfg_.min_leaf)) continue;
        SplitChoice s = evaluate(yes, ny, SplitChoice{true, f, 0.0, label, 0, 0});
        const double py = ny / n;
        const double split_info = -py * std::log2(py) - (1 - py) * std::log2(1 - py);
        s.ratio = split_info > 0.0 ? s.gain / split_info : 0.0;
        if (s.gain > 1e-12) candidates.push_back(s);
      }
    }
    if (candidates.empty()) return std::nullopt;
    double mean_gain = 0.0;
    for (const auto& c : candidates) mean_gain += c.gain;
    mean_gain /= static_cast<double>(candidates.size());
    std::optional<SplitChoice> best;
    for (const auto& c : candidates) {
      if (c.gain + 1e-12 < mean_gain) continue;
      if (!best || c.ratio > best->ratio + 1e-12) best = c;
    }
    return best;
  }

  const TreeInput& in_;
  const TreeConfig& cfg_;
  DecisionTree tree_;
};

// Misclassified training rows and leaf count of every subtree, post-order.
inline void subtree_costs(const DecisionTree& t, int i, std::vector<double>& cost, std::vector<std::size_t>& leaves) {
  const TreeNode& n = t.nodes[i];
  if (n.leaf) {
    cost[i] = n.total() - n.counts[n.majority()];
    leaves[i] = 1;
    return;
  }
  subtree_costs(t, n.yes, cost, leaves);
  subtree_costs(t, n.no, cost, leaves);
  cost[i] = cost[n.yes] + cost[n.no];
  leaves[i] = leaves[n.yes] + leaves[n.no];
}

// Weakest link: internal node with the smallest complexity parameter g.
// Ties go to the node found first in pre-order.
inline std::optional<std::pair<int, double>> weakest_link(const DecisionTree& t) {
  std::vector<double> cost(t.nodes.size(), 0.0);
  std::vector<std::size_t> leaves(t.nodes.size(), 0);
  subtree_costs(t, 0, cost, leaves);
  std::optional<std::pair<int, double>> best;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    const TreeNode& n = t.nodes[i];
    if (n.leaf) continue;
    const double own = n.total() - n.counts[n.majority()];
    const double g = (own - cost[i]) / static_cast<double>(leaves[i] - 1);
    if (!best || g < best->second - 1e-12) best = std::pair{i, g};
    stack.push_back(n.no);
    stack.push_back(n.yes);
  }
  return best;
}

inline void prune_to(DecisionTree& t, double alpha) {
  while (auto w = weakest_link(t)) {
    if (w->second > alpha + 1e-12) break;
    t.nodes[w->first].leaf = true;
  }
}

inline std::vector<double> pruning_alphas(DecisionTree t) {
  std::vector<double> alphas{0.0};
  while (auto w = weakest_link(t)) {
    alphas.push_back(std::max(w->second, alphas.back()));
    t.nodes[w->first].leaf = true;
  }
  return alphas;
}

}  // namespace detail

/// Grows and (by default) prunes a tree. Rows are processed in a canonical
/// order, so permuting the input leaves the result unchanged.
inline DecisionTree fit_tree(const TreeInput& raw, const TreeConfig& cfg = {}) {
  const std::size_t n = raw.rows();
  if (n == 0) throw CalibrationError("tree", "empty training set");
  if (raw.classes < 1) throw CalibrationError("tree", "no classes");
  const auto order = canonical_order(n, [&](std::size_t a, std::size_t b) {
    for (const auto& c : raw.numeric) {
      if (c[a] != c[b]) return c[a] < c[b];
    }
    for (const auto& c : raw.categorical) {
      if (c[a] != c[b]) return c[a] < c[b];
    }
    return raw.y[a] < raw.y[b];
  });
  TreeInput in;
  in.numeric_names = raw.numeric_names;
  in.categorical_names = raw.categorical_names;
  in.classes = raw.classes;
  in.numeric.assign(raw.numeric.size(), Column(n));
  in.categorical.assign(raw.categorical.size(), std::vector<std::string>(n));
  in.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < raw.numeric.size(); ++f) in.numeric[f][i] = raw.numeric[f][order[i]];
    for (std::size_t f = 0; f < raw.categorical.size(); ++f) in.categorical[f][i] = raw.categorical[f][order[i]];
    in.y[i] = raw.y[order[i]];
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  DecisionTree full = detail::Grower(in, cfg).grow(all);
  if (!cfg.prune || full.nodes.size() == 1) return full;

  const auto alphas = detail::pruning_alphas(full);
  std::vector<double> candidates;
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    candidates.push_back(k + 1 < alphas.size() ? std::sqrt(alphas[k] * alphas[k + 1]) : alphas[k]);
  }
  const int k = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(cfg.folds), n));
  std::vector<double> errors(candidates.size(), 0.0);
  if (k >= 2) {
    const auto folds = make_folds(n, k, cfg.seed);
    for (int f = 0; f < k; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t r = 0; r < n; ++r) (folds[r] == f ? test : train).push_back(r);
      const DecisionTree fold_tree = detail::Grower(in, cfg).grow(train);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        DecisionTree pruned = fold_tree;
        // Fold trees see fewer rows; scale alpha to their size.
        detail::prune_to(pruned, candidates[c] * static_cast<double>(train.size()) / static_cast<double>(n));
        for (std::size_t r : test) errors[c] += pruned.predict(in, r) != in.y[r];
      }
    }
  }
  const double best = *std::min_element(errors.begin(), errors.end());
  const double rate = best / static_cast<double>(n);
  const double se = std::sqrt(rate * (1.0 - rate) / static_cast<double>(n)) * static_cast<double>(n);
  std::size_t chosen = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (errors[c] <= best + se + 1e-9) chosen = c;
  }
  detail::prune_to(full, candidates[chosen]);
  return full;
}

}  // namespace perfcal::deplearn
