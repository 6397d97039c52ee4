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

// Stochastic expressions: the language every learned model parameter is
// stored in. Covers literals, parameter characterizations (p.VALUE,
// p.NUMBER_OF_ELEMENTS, p.BYTESIZE, p.TYPE), arithmetic and boolean
// operators, and integer/double probability mass functions.
//
// Grammar (whitespace-insensitive):
//   expr    := or
//   or      := and ("OR" and)*
//   and     := cmp ("AND" cmp)*
//   cmp     := add (("<="|"<"|">="|">"|"==") add)?
//   add     := mul (("+"|"-") mul)*
//   mul     := pow (("*"|"/") pow)*
//   pow     := unary ("^" unary)?
//   unary   := ("-"|"NOT"|"SQRT") unary | atom
//   atom    := number | "true" | "false" | enum | pmf
//            | ident "." characterization | "(" expr ")"
//   pmf     := ("IntPMF"|"DoublePMF") "[" ("(" number ";" number ")")+ "]"
//   enum    := ident | '"' chars '"'
//
// Booleans coerce to 0/1 inside arithmetic, and integers coerce to booleans
// (non-zero is true) inside AND/OR/NOT. That lets `(p.TYPE == A) * expr`
// act as a guard and `IntPMF[(0;0.3)(1;0.7)]` act as a boolean with
// probability 0.7.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "perfcal/error.hpp"
#include "perfcal/random.hpp"

namespace perfcal::stoex {

enum class Characterization { Value, NumberOfElements, ByteSize, Type };

inline std::string_view to_string(Characterization c) {
  switch (c) {
    case Characterization::Value: return "VALUE";
    case Characterization::NumberOfElements: return "NUMBER_OF_ELEMENTS";
    case Characterization::ByteSize: return "BYTESIZE";
    case Characterization::Type: return "TYPE";
  }
  return "?";
}

inline std::optional<Characterization> characterization_from(std::string_view s) {
  if (s == "VALUE") return Characterization::Value;
  if (s == "NUMBER_OF_ELEMENTS") return Characterization::NumberOfElements;
  if (s == "BYTESIZE") return Characterization::ByteSize;
  if (s == "TYPE") return Characterization::Type;
  return std::nullopt;
}

enum class UnaryOp { Neg, Sqrt, Not };
enum class BinaryOp { Add, Sub, Mul, Div, Pow, Le, Lt, Ge, Gt, Eq, And, Or };

template <class T>
struct Outcome {
  T value;
  double probability;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct IntLit { std::int64_t value; };
struct DoubleLit { double value; };
struct BoolLit { bool value; };
struct EnumLit { std::string label; };
struct ParamRef { std::string name; Characterization what; };
struct Unary { UnaryOp op; NodePtr operand; };
struct Binary { BinaryOp op; NodePtr lhs; NodePtr rhs; };
struct IntPmf { std::vector<Outcome<std::int64_t>> outcomes; };
struct DoublePmf { std::vector<Outcome<double>> outcomes; };

struct Node {
  std::variant<IntLit, DoubleLit, BoolLit, EnumLit, ParamRef, Unary, Binary, IntPmf, DoublePmf> v;
};

/// Result of evaluating an expression.
using Value = std::variant<bool, std::int64_t, double, std::string>;

inline bool is_numeric(const Value& v) { return !std::holds_alternative<std::string>(v); }

inline double as_number(const Value& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b ? 1.0 : 0.0;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw EvalError("type mismatch: enum label '" + std::get<std::string>(v) + "' used as a number");
}

inline bool as_bool(const Value& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i != 0;
  throw EvalError("type mismatch: expected a boolean");
}

/// Characterized value bundle of one parameter.
struct ParamValue {
  std::optional<double> value;
  std::optional<std::int64_t> number_of_elements;
  std::optional<std::int64_t> byte_size;
  std::optional<std::string> type;

  friend bool operator==(const ParamValue&, const ParamValue&) = default;
};

/// Parameter name -> characterized values. Looking up a characterization
/// the bundle does not carry is an error, never a default.
class EvalEnv {
 public:
  EvalEnv() = default;

  ParamValue& operator[](const std::string& name) { return params_[name]; }
  const std::map<std::string, ParamValue>& params() const { return params_; }
  bool empty() const { return params_.empty(); }

  EvalEnv& set(const std::string& name, Characterization what, const Value& v) {
    auto& p = params_[name];
    switch (what) {
      case Characterization::Value: p.value = as_number(v); break;
      case Characterization::NumberOfElements: p.number_of_elements = std::llround(as_number(v)); break;
      case Characterization::ByteSize: p.byte_size = std::llround(as_number(v)); break;
      case Characterization::Type:
        if (const auto* s = std::get_if<std::string>(&v)) {
          p.type = *s;
        } else {
          throw EvalError("type mismatch: " + name + ".TYPE expects an enum label");
        }
        break;
    }
    return *this;
  }

  std::optional<Value> find(const std::string& name, Characterization what) const {
    const auto it = params_.find(name);
    if (it == params_.end()) return std::nullopt;
    const ParamValue& p = it->second;
    switch (what) {
      case Characterization::Value:
        if (p.value) return Value{*p.value};
        break;
      case Characterization::NumberOfElements:
        if (p.number_of_elements) return Value{*p.number_of_elements};
        break;
      case Characterization::ByteSize:
        if (p.byte_size) return Value{*p.byte_size};
        break;
      case Characterization::Type:
        if (p.type) return Value{*p.type};
        break;
    }
    return std::nullopt;
  }

  Value lookup(const std::string& name, Characterization what) const {
    if (auto v = find(name, what)) return *v;
    throw EvalError("unbound parameter " + name + "." + std::string(to_string(what)));
  }

  friend bool operator==(const EvalEnv&, const EvalEnv&) = default;

 private:
  std::map<std::string, ParamValue> params_;
};

/// Immutable stochastic expression. Copies share the tree.
class StoExpr {
 public:
  StoExpr() : root_(std::make_shared<const Node>(Node{IntLit{0}})) {}
  explicit StoExpr(NodePtr root) : root_(std::move(root)) {}

  const Node& node() const { return *root_; }
  const NodePtr& ptr() const { return root_; }

  template <class T>
  const T* as() const { return std::get_if<T>(&root_->v); }

  friend bool operator==(const StoExpr& a, const StoExpr& b);

 private:
  NodePtr root_;
};

namespace detail {

inline bool same(const Node& a, const Node& b);

inline bool same(const NodePtr& a, const NodePtr& b) { return a == b || same(*a, *b); }

inline bool same(const Node& a, const Node& b) {
  if (a.v.index() != b.v.index()) return false;
  return std::visit(
      [&](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        const auto& y = std::get<T>(b.v);
        if constexpr (std::is_same_v<T, IntLit> || std::is_same_v<T, DoubleLit> || std::is_same_v<T, BoolLit>) {
          return x.value == y.value;
        } else if constexpr (std::is_same_v<T, EnumLit>) {
          return x.label == y.label;
        } else if constexpr (std::is_same_v<T, ParamRef>) {
          return x.name == y.name && x.what == y.what;
        } else if constexpr (std::is_same_v<T, Unary>) {
          return x.op == y.op && same(x.operand, y.operand);
        } else if constexpr (std::is_same_v<T, Binary>) {
          return x.op == y.op && same(x.lhs, y.lhs) && same(x.rhs, y.rhs);
        } else {
          return x.outcomes == y.outcomes;
        }
      },
      a.v);
}

}  // namespace detail

inline bool operator==(const StoExpr& a, const StoExpr& b) { return detail::same(a.root_, b.root_); }

// ---------------------------------------------------------------------------
// Construction helpers

inline StoExpr make(Node n) { return StoExpr(std::make_shared<const Node>(std::move(n))); }
inline StoExpr int_lit(std::int64_t v) { return make(Node{IntLit{v}}); }
inline StoExpr double_lit(double v) { return make(Node{DoubleLit{v}}); }
inline StoExpr bool_lit(bool v) { return make(Node{BoolLit{v}}); }
inline StoExpr enum_lit(std::string label) { return make(Node{EnumLit{std::move(label)}}); }
inline StoExpr param(std::string name, Characterization what) { return make(Node{ParamRef{std::move(name), what}}); }
inline StoExpr unary(UnaryOp op, const StoExpr& e) { return make(Node{Unary{op, e.ptr()}}); }
inline StoExpr binary(BinaryOp op, const StoExpr& a, const StoExpr& b) {
  return make(Node{Binary{op, a.ptr(), b.ptr()}});
}

inline StoExpr operator+(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::Add, a, b); }
inline StoExpr operator-(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::Sub, a, b); }
inline StoExpr operator*(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::Mul, a, b); }
inline StoExpr operator/(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::Div, a, b); }
inline StoExpr operator!(const StoExpr& a) { return unary(UnaryOp::Not, a); }
inline StoExpr operator&&(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::And, a, b); }
inline StoExpr operator||(const StoExpr& a, const StoExpr& b) { return binary(BinaryOp::Or, a, b); }

namespace detail {

constexpr double kProbabilityTolerance = 1e-9;

template <class T>
void check_pmf(const std::vector<Outcome<T>>& outcomes, const char* kind) {
  if (outcomes.empty()) throw EvalError(std::string(kind) + " needs at least one outcome");
  double sum = 0.0;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const double p = outcomes[i].probability;
    if (!(p >= 0.0 && p <= 1.0)) throw EvalError(std::string(kind) + " probability outside [0,1]");
    if (i > 0 && !(outcomes[i - 1].value < outcomes[i].value)) {
      throw EvalError(std::string(kind) + " outcomes must be strictly increasing");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbabilityTolerance) {
    throw EvalError(std::string(kind) + " probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
}

}  // namespace detail

/// Validated IntPMF node: probabilities in [0,1] summing to 1, outcomes
/// strictly increasing.
inline StoExpr int_pmf(std::vector<Outcome<std::int64_t>> outcomes) {
  detail::check_pmf(outcomes, "IntPMF");
  return make(Node{IntPmf{std::move(outcomes)}});
}

inline StoExpr double_pmf(std::vector<Outcome<double>> outcomes) {
  detail::check_pmf(outcomes, "DoublePMF");
  return make(Node{DoublePmf{std::move(outcomes)}});
}

/// Boolean with probability `p` of being true, written as an IntPMF over {0,1}.
inline StoExpr probability_bool(double p) {
  if (p >= 1.0) return bool_lit(true);
  if (p <= 0.0) return bool_lit(false);
  return int_pmf({{0, 1.0 - p}, {1, p}});
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

enum Prec : int { kOr = 1, kAnd, kCmp, kAdd, kMul, kPow, kUnary, kAtom };

inline int precedence(BinaryOp op) {
  switch (op) {
    case BinaryOp::Or: return kOr;
    case BinaryOp::And: return kAnd;
    case BinaryOp::Le: case BinaryOp::Lt: case BinaryOp::Ge: case BinaryOp::Gt: case BinaryOp::Eq: return kCmp;
    case BinaryOp::Add: case BinaryOp::Sub: return kAdd;
    case BinaryOp::Mul: case BinaryOp::Div: return kMul;
    case BinaryOp::Pow: return kPow;
  }
  return kAtom;
}

inline std::string_view symbol(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::Pow: return "^";
    case BinaryOp::Le: return "<=";
    case BinaryOp::Lt: return "<";
    case BinaryOp::Ge: return ">=";
    case BinaryOp::Gt: return ">";
    case BinaryOp::Eq: return "==";
    case BinaryOp::And: return "AND";
    case BinaryOp::Or: return "OR";
  }
  return "?";
}

inline bool is_keyword(std::string_view s) {
  return s == "AND" || s == "OR" || s == "NOT" || s == "SQRT" || s == "IntPMF" || s == "DoublePMF" ||
         s == "true" || s == "false";
}

inline bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

}  // namespace detail

/// Shortest round-tripping decimal; always contains '.' or an exponent so
/// it re-parses as a double.
inline std::string format_double(double v) {
  if (!std::isfinite(v)) throw EvalError("non-finite literal cannot be rendered");
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, end);
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

namespace detail {

inline int node_precedence(const Node& n) {
  if (const auto* b = std::get_if<Binary>(&n.v)) return precedence(b->op);
  if (std::holds_alternative<Unary>(n.v)) return kUnary;
  if (const auto* d = std::get_if<DoubleLit>(&n.v); d && std::signbit(d->value)) return kUnary;
  if (const auto* i = std::get_if<IntLit>(&n.v); i && i->value < 0) return kUnary;
  return kAtom;
}

inline void render(const Node& n, std::string& out);

inline void render_child(const NodePtr& child, int min_prec, std::string& out) {
  const bool paren = node_precedence(*child) < min_prec;
  if (paren) out += '(';
  render(*child, out);
  if (paren) out += ')';
}

inline void render(const Node& n, std::string& out) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, IntLit>) {
          out += std::to_string(x.value);
        } else if constexpr (std::is_same_v<T, DoubleLit>) {
          out += format_double(x.value);
        } else if constexpr (std::is_same_v<T, BoolLit>) {
          out += x.value ? "true" : "false";
        } else if constexpr (std::is_same_v<T, EnumLit>) {
          if (is_identifier(x.label) && !is_keyword(x.label)) {
            out += x.label;
          } else {
            out += '"';
            out += x.label;
            out += '"';
          }
        } else if constexpr (std::is_same_v<T, ParamRef>) {
          out += x.name;
          out += '.';
          out += to_string(x.what);
        } else if constexpr (std::is_same_v<T, Unary>) {
          switch (x.op) {
            case UnaryOp::Neg:
              out += '-';
              render_child(x.operand, kUnary, out);
              break;
            case UnaryOp::Not:
              out += "NOT ";
              render_child(x.operand, kUnary, out);
              break;
            case UnaryOp::Sqrt:
              out += "SQRT(";
              render(*x.operand, out);
              out += ')';
              break;
          }
        } else if constexpr (std::is_same_v<T, Binary>) {
          const int p = precedence(x.op);
          if (x.op == BinaryOp::Pow) {
            render_child(x.lhs, kUnary, out);
            out += '^';
            render_child(x.rhs, kUnary, out);
          } else {
            const bool cmp = p == kCmp;
            render_child(x.lhs, cmp ? p + 1 : p, out);
            out += ' ';
            out += symbol(x.op);
            out += ' ';
            render_child(x.rhs, p + 1, out);
          }
        } else if constexpr (std::is_same_v<T, IntPmf>) {
          out += "IntPMF[";
          for (const auto& o : x.outcomes) {
            out += '(' + std::to_string(o.value) + ';' + format_double(o.probability) + ')';
          }
          out += ']';
        } else {
          out += "DoublePMF[";
          for (const auto& o : x.outcomes) {
            out += '(' + format_double(o.value) + ';' + format_double(o.probability) + ')';
          }
          out += ']';
        }
      },
      n.v);
}

}  // namespace detail

inline std::string to_string(const StoExpr& e) {
  std::string out;
  detail::render(e.node(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace detail {

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  StoExpr parse() {
    skip_ws();
    if (pos_ >= text_.size()) fail("empty expression");
    StoExpr e = parse_or();
    skip_ws();
    if (pos_ < text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, pos_); }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek_symbol(std::string_view s) {
    skip_ws();
    return text_.substr(pos_, s.size()) == s;
  }

  bool accept_symbol(std::string_view s) {
    if (!peek_symbol(s)) return false;
    pos_ += s.size();
    return true;
  }

  void expect_symbol(std::string_view s) {
    if (!accept_symbol(s)) fail("expected '" + std::string(s) + "'");
  }

  std::string_view peek_word() {
    skip_ws();
    std::size_t end = pos_;
    while (end < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) ++end;
    if (end == pos_ || std::isdigit(static_cast<unsigned char>(text_[pos_]))) return {};
    return text_.substr(pos_, end - pos_);
  }

  bool accept_keyword(std::string_view kw) {
    if (peek_word() != kw) return false;
    pos_ += kw.size();
    return true;
  }

  StoExpr parse_or() {
    StoExpr lhs = parse_and();
    while (accept_keyword("OR")) lhs = binary(BinaryOp::Or, lhs, parse_and());
    return lhs;
  }

  StoExpr parse_and() {
    StoExpr lhs = parse_cmp();
    while (accept_keyword("AND")) lhs = binary(BinaryOp::And, lhs, parse_cmp());
    return lhs;
  }

  StoExpr parse_cmp() {
    StoExpr lhs = parse_add();
    static constexpr std::pair<std::string_view, BinaryOp> kOps[] = {
        {"<=", BinaryOp::Le}, {">=", BinaryOp::Ge}, {"==", BinaryOp::Eq}, {"<", BinaryOp::Lt}, {">", BinaryOp::Gt}};
    for (const auto& [sym, op] : kOps) {
      if (accept_symbol(sym)) return binary(op, lhs, parse_add());
    }
    return lhs;
  }

  StoExpr parse_add() {
    StoExpr lhs = parse_mul();
    for (;;) {
      if (accept_symbol("+")) {
        lhs = lhs + parse_mul();
      } else if (accept_symbol("-")) {
        lhs = lhs - parse_mul();
      } else {
        return lhs;
      }
    }
  }

  StoExpr parse_mul() {
    StoExpr lhs = parse_pow();
    for (;;) {
      if (accept_symbol("*")) {
        lhs = lhs * parse_pow();
      } else if (accept_symbol("/")) {
        lhs = lhs / parse_pow();
      } else {
        return lhs;
      }
    }
  }

  StoExpr parse_pow() {
    StoExpr base = parse_unary();
    if (accept_symbol("^")) return binary(BinaryOp::Pow, base, parse_unary());
    return base;
  }

  StoExpr parse_unary() {
    if (accept_symbol("-")) return unary(UnaryOp::Neg, parse_unary());
    if (accept_keyword("NOT")) return unary(UnaryOp::Not, parse_unary());
    if (accept_keyword("SQRT")) return unary(UnaryOp::Sqrt, parse_unary());
    return parse_atom();
  }

  // Returns either an int64 or a double literal value.
  std::variant<std::int64_t, double> parse_number() {
    skip_ws();
    const std::size_t start = pos_;
    std::size_t end = pos_;
    bool is_double = false;
    while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
    if (end == start) fail("expected a number");
    if (end < text_.size() && text_[end] == '.') {
      is_double = true;
      ++end;
      while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
    }
    if (end < text_.size() && (text_[end] == 'e' || text_[end] == 'E')) {
      std::size_t e = end + 1;
      if (e < text_.size() && (text_[e] == '+' || text_[e] == '-')) ++e;
      if (e < text_.size() && std::isdigit(static_cast<unsigned char>(text_[e]))) {
        is_double = true;
        end = e;
        while (end < text_.size() && std::isdigit(static_cast<unsigned char>(text_[end]))) ++end;
      }
    }
    const std::string token(text_.substr(start, end - start));
    pos_ = end;
    if (is_double) return std::strtod(token.c_str(), nullptr);
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc()) {
      pos_ = start;
      fail("integer literal out of range");
    }
    return v;
  }

  std::variant<std::int64_t, double> parse_signed_number() {
    const bool negative = accept_symbol("-");
    auto n = parse_number();
    if (negative) std::visit([](auto& x) { x = -x; }, n);
    return n;
  }

  static double to_double(const std::variant<std::int64_t, double>& n) {
    return std::visit([](auto x) { return static_cast<double>(x); }, n);
  }

  StoExpr parse_pmf(bool integer) {
    const std::size_t start = pos_;
    expect_symbol("[");
    std::vector<Outcome<std::int64_t>> ints;
    std::vector<Outcome<double>> doubles;
    do {
      expect_symbol("(");
      const std::size_t value_pos = pos_;
      const auto value = parse_signed_number();
      expect_symbol(";");
      const double p = to_double(parse_number());
      expect_symbol(")");
      if (integer) {
        if (!std::holds_alternative<std::int64_t>(value)) {
          pos_ = value_pos;
          fail("IntPMF outcome must be an integer");
        }
        ints.push_back({std::get<std::int64_t>(value), p});
      } else {
        doubles.push_back({to_double(value), p});
      }
    } while (peek_symbol("("));
    expect_symbol("]");
    try {
      return integer ? int_pmf(std::move(ints)) : double_pmf(std::move(doubles));
    } catch (const EvalError& e) {
      pos_ = start;
      fail(e.what());
    }
  }

  StoExpr parse_atom() {
    skip_ws();
    if (pos_ >= text_.size()) fail("unexpected end of expression");
    const char c = text_[pos_];
    if (c == '(') {
      ++pos_;
      StoExpr inner = parse_or();
      expect_symbol(")");
      return inner;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      const auto n = parse_number();
      if (const auto* i = std::get_if<std::int64_t>(&n)) return int_lit(*i);
      return double_lit(std::get<double>(n));
    }
    if (c == '"') {
      const std::size_t close = text_.find('"', pos_ + 1);
      if (close == std::string_view::npos) fail("unterminated string literal");
      std::string label(text_.substr(pos_ + 1, close - pos_ - 1));
      pos_ = close + 1;
      return enum_lit(std::move(label));
    }
    const std::string_view word = peek_word();
    if (word.empty()) fail("unexpected '" + std::string(1, c) + "'");
    const std::size_t word_pos = pos_;
    pos_ += word.size();
    if (word == "true") return bool_lit(true);
    if (word == "false") return bool_lit(false);
    if (word == "IntPMF") return parse_pmf(true);
    if (word == "DoublePMF") return parse_pmf(false);
    if (is_keyword(word)) {
      pos_ = word_pos;
      fail("unexpected keyword '" + std::string(word) + "'");
    }
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      const std::size_t charac_pos = pos_;
      std::size_t end = pos_;
      while (end < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_')) ++end;
      const std::string_view name = text_.substr(pos_, end - pos_);
      const auto what = characterization_from(name);
      if (!what) {
        pos_ = charac_pos;
        fail("unknown characterization '" + std::string(name) + "'");
      }
      pos_ = end;
      return param(std::string(word), *what);
    }
    return enum_lit(std::string(word));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline StoExpr parse(std::string_view text) { return detail::Parser(text).parse(); }

// ---------------------------------------------------------------------------
// Inspection

inline bool contains_pmf(const Node& n) {
  return std::visit(
      [](const auto& x) -> bool {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, IntPmf> || std::is_same_v<T, DoublePmf>) {
          return true;
        } else if constexpr (std::is_same_v<T, Unary>) {
          return contains_pmf(*x.operand);
        } else if constexpr (std::is_same_v<T, Binary>) {
          return contains_pmf(*x.lhs) || contains_pmf(*x.rhs);
        } else {
          return false;
        }
      },
      n.v);
}

inline bool contains_pmf(const StoExpr& e) { return contains_pmf(e.node()); }

/// Distinct parameter references, in first-visit order.
inline void collect_params(const Node& n, std::vector<ParamRef>& out) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, ParamRef>) {
          const bool seen = std::any_of(out.begin(), out.end(),
                                        [&](const ParamRef& p) { return p.name == x.name && p.what == x.what; });
          if (!seen) out.push_back(x);
        } else if constexpr (std::is_same_v<T, Unary>) {
          collect_params(*x.operand, out);
        } else if constexpr (std::is_same_v<T, Binary>) {
          collect_params(*x.lhs, out);
          collect_params(*x.rhs, out);
        }
      },
      n.v);
}

inline std::vector<ParamRef> params_of(const StoExpr& e) {
  std::vector<ParamRef> out;
  collect_params(e.node(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline bool both_integral(const Value& a, const Value& b) {
  auto integral = [](const Value& v) { return std::holds_alternative<std::int64_t>(v) || std::holds_alternative<bool>(v); };
  return integral(a) && integral(b);
}

inline std::int64_t as_int(const Value& v) {
  if (const auto* b = std::get_if<bool>(&v)) return *b ? 1 : 0;
  return std::get<std::int64_t>(v);
}

inline Value apply_unary(UnaryOp op, const Value& v) {
  switch (op) {
    case UnaryOp::Neg:
      if (std::holds_alternative<std::int64_t>(v) || std::holds_alternative<bool>(v)) return -as_int(v);
      return -as_number(v);
    case UnaryOp::Sqrt: {
      const double x = as_number(v);
      if (x < 0.0) throw EvalError("SQRT of negative value");
      return std::sqrt(x);
    }
    case UnaryOp::Not:
      return !as_bool(v);
  }
  return v;
}

inline Value integer_power(const Value& base, const Value& exponent) {
  const double e = as_number(exponent);
  if (!(e >= 0.0) || e != std::floor(e)) throw EvalError("exponent must be a non-negative integer");
  const auto n = static_cast<std::int64_t>(e);
  if (std::holds_alternative<std::int64_t>(base) || std::holds_alternative<bool>(base)) {
    std::int64_t b = as_int(base);
    std::int64_t r = 1;
    for (std::int64_t i = 0; i < n; ++i) r *= b;
    return r;
  }
  return std::pow(as_number(base), static_cast<double>(n));
}

inline Value compare(BinaryOp op, const Value& a, const Value& b) {
  if (op == BinaryOp::Eq) {
    const bool sa = std::holds_alternative<std::string>(a);
    const bool sb = std::holds_alternative<std::string>(b);
    if (sa || sb) {
      if (!(sa && sb)) throw EvalError("type mismatch: comparing an enum label with a number");
      return std::get<std::string>(a) == std::get<std::string>(b);
    }
    return as_number(a) == as_number(b);
  }
  const double x = as_number(a);
  const double y = as_number(b);
  switch (op) {
    case BinaryOp::Le: return x <= y;
    case BinaryOp::Lt: return x < y;
    case BinaryOp::Ge: return x >= y;
    case BinaryOp::Gt: return x > y;
    default: break;
  }
  return false;
}

inline Value apply_binary(BinaryOp op, const Value& a, const Value& b) {
  switch (op) {
    case BinaryOp::Add:
      if (both_integral(a, b)) return as_int(a) + as_int(b);
      return as_number(a) + as_number(b);
    case BinaryOp::Sub:
      if (both_integral(a, b)) return as_int(a) - as_int(b);
      return as_number(a) - as_number(b);
    case BinaryOp::Mul:
      if (both_integral(a, b)) return as_int(a) * as_int(b);
      return as_number(a) * as_number(b);
    case BinaryOp::Div: {
      const double d = as_number(b);
      if (d == 0.0) throw EvalError("division by zero");
      return as_number(a) / d;
    }
    case BinaryOp::Pow:
      return integer_power(a, b);
    case BinaryOp::And:
      return as_bool(a) && as_bool(b);
    case BinaryOp::Or:
      return as_bool(a) || as_bool(b);
    default:
      return compare(op, a, b);
  }
}

template <class T>
T draw(const std::vector<Outcome<T>>& outcomes, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  for (const auto& o : outcomes) {
    cumulative += o.probability;
    if (u < cumulative) return o.value;
  }
  // Rounding left u above the final cumulative weight.
  for (auto it = outcomes.rbegin(); it != outcomes.rend(); ++it) {
    if (it->probability > 0.0) return it->value;
  }
  return outcomes.back().value;
}

// PmfHandler: Value(const IntPmf&) / Value(const DoublePmf&)
template <class PmfHandler>
Value eval(const Node& n, const EvalEnv& env, PmfHandler& pmf) {
  return std::visit(
      [&](const auto& x) -> Value {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, IntLit> || std::is_same_v<T, DoubleLit> || std::is_same_v<T, BoolLit>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, EnumLit>) {
          return x.label;
        } else if constexpr (std::is_same_v<T, ParamRef>) {
          return env.lookup(x.name, x.what);
        } else if constexpr (std::is_same_v<T, Unary>) {
          return apply_unary(x.op, eval(*x.operand, env, pmf));
        } else if constexpr (std::is_same_v<T, Binary>) {
          const Value a = eval(*x.lhs, env, pmf);
          const Value b = eval(*x.rhs, env, pmf);
          return apply_binary(x.op, a, b);
        } else {
          return pmf(x);
        }
      },
      n.v);
}

struct RejectPmf {
  template <class P>
  Value operator()(const P&) const {
    throw EvalError("stochastic node present in deterministic evaluation");
  }
};

struct SamplePmf {
  Rng& rng;
  Value operator()(const IntPmf& p) const { return draw(p.outcomes, rng); }
  Value operator()(const DoublePmf& p) const { return draw(p.outcomes, rng); }
};

}  // namespace detail

/// Deterministic evaluation; expressions with PMF nodes are rejected.
inline Value evaluate(const StoExpr& e, const EvalEnv& env = {}) {
  detail::RejectPmf handler;
  return detail::eval(e.node(), env, handler);
}

/// One draw: every PMF node is sampled independently by inverse CDF over
/// its ascending outcomes.
inline Value sample(const StoExpr& e, const EvalEnv& env, Rng& rng) {
  detail::SamplePmf handler{rng};
  return detail::eval(e.node(), env, handler);
}

template <class T>
double mean_of(const std::vector<Outcome<T>>& outcomes) {
  double m = 0.0;
  for (const auto& o : outcomes) m += static_cast<double>(o.value) * o.probability;
  return m;
}

namespace detail {

inline Value expect(const Node& n, const EvalEnv& env);

inline bool stochastic(const NodePtr& p) { return contains_pmf(*p); }

inline Value expect(const Node& n, const EvalEnv& env) {
  return std::visit(
      [&](const auto& x) -> Value {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, IntLit> || std::is_same_v<T, DoubleLit> || std::is_same_v<T, BoolLit>) {
          return x.value;
        } else if constexpr (std::is_same_v<T, EnumLit>) {
          return x.label;
        } else if constexpr (std::is_same_v<T, ParamRef>) {
          return env.lookup(x.name, x.what);
        } else if constexpr (std::is_same_v<T, IntPmf> || std::is_same_v<T, DoublePmf>) {
          return mean_of(x.outcomes);
        } else if constexpr (std::is_same_v<T, Unary>) {
          const Value v = expect(*x.operand, env);
          if (!stochastic(x.operand)) return apply_unary(x.op, v);
          switch (x.op) {
            case UnaryOp::Neg: return -as_number(v);
            case UnaryOp::Not: return 1.0 - as_number(v);
            case UnaryOp::Sqrt: throw EvalError("expectation of SQRT over a stochastic operand");
          }
          return v;
        } else {
          const Value a = expect(*x.lhs, env);
          const Value b = expect(*x.rhs, env);
          const bool sa = stochastic(x.lhs);
          const bool sb = stochastic(x.rhs);
          if (!sa && !sb) return apply_binary(x.op, a, b);
          // Distinct PMF nodes are independent, so expectation distributes
          // over sums and products.
          switch (x.op) {
            case BinaryOp::Add: return as_number(a) + as_number(b);
            case BinaryOp::Sub: return as_number(a) - as_number(b);
            case BinaryOp::Mul: return as_number(a) * as_number(b);
            case BinaryOp::Div:
              if (sb) throw EvalError("expectation of division by a stochastic operand");
              return as_number(apply_binary(BinaryOp::Div, a, b));
            case BinaryOp::And: return as_number(a) * as_number(b);
            case BinaryOp::Or: {
              const double p = as_number(a);
              const double q = as_number(b);
              return p + q - p * q;
            }
            default:
              throw EvalError("expectation of '" + std::string(symbol(x.op)) + "' over a stochastic operand");
          }
        }
      },
      n.v);
}

}  // namespace detail

/// Expected value under independent PMF draws. Booleans yield the
/// probability of being true. Exact for the sums, products and boolean
/// combinations the learners emit; comparisons, powers and roots over
/// stochastic operands are rejected.
inline double expectation(const StoExpr& e, const EvalEnv& env = {}) {
  const Value v = detail::expect(e.node(), env);
  return as_number(v);
}

// ---------------------------------------------------------------------------
// Distribution synthesis

/// Equal-width histogram over [min, max]; each non-empty bin becomes an
/// outcome at its midpoint with its relative frequency. All-equal input
/// yields a single outcome.
inline StoExpr build_double_pmf(std::span<const double> samples, int bin_count = 20) {
  if (samples.empty()) throw EvalError("build_double_pmf: empty sample set");
  if (bin_count <= 0) throw EvalError("build_double_pmf: bin count must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw EvalError("build_double_pmf: non-finite sample");
  if (lo == hi) return double_pmf({{lo, 1.0}});
  const double width = (hi - lo) / bin_count;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bin_count), 0);
  for (const double s : samples) {
    auto bin = static_cast<std::size_t>((s - lo) / width);
    if (bin >= counts.size()) bin = counts.size() - 1;
    ++counts[bin];
  }
  std::vector<Outcome<double>> outcomes;
  const auto n = static_cast<double>(samples.size());
  for (std::size_t b = 0; b < counts.size(); ++b) {
    if (counts[b] == 0) continue;
    outcomes.push_back({lo + (static_cast<double>(b) + 0.5) * width, static_cast<double>(counts[b]) / n});
  }
  return double_pmf(std::move(outcomes));
}

/// Integer PMF over the distinct observed values with their frequencies.
inline StoExpr empirical_int_pmf(std::span<const std::int64_t> samples) {
  if (samples.empty()) throw EvalError("empirical_int_pmf: empty sample set");
  std::map<std::int64_t, std::size_t> counts;
  for (const auto s : samples) ++counts[s];
  std::vector<Outcome<std::int64_t>> outcomes;
  const auto n = static_cast<double>(samples.size());
  for (const auto& [v, c] : counts) outcomes.push_back({v, static_cast<double>(c) / n});
  return int_pmf(std::move(outcomes));
}

/// Double PMF over the distinct observed values with their frequencies.
inline StoExpr empirical_double_pmf(std::span<const double> samples) {
  if (samples.empty()) throw EvalError("empirical_double_pmf: empty sample set");
  std::map<double, std::size_t> counts;
  for (const auto s : samples) ++counts[s];
  std::vector<Outcome<double>> outcomes;
  const auto n = static_cast<double>(samples.size());
  for (const auto& [v, c] : counts) outcomes.push_back({v, static_cast<double>(c) / n});
  return double_pmf(std::move(outcomes));
}

/// Integer PMF over {floor(x), floor(x)+1} whose expectation is x. The
/// fractional part is snapped to 12 decimals so decimal inputs like 1.6
/// produce the probabilities 0.4 / 0.6 exactly as written.
inline StoExpr real_to_int_pmf(double x) {
  if (!std::isfinite(x)) throw EvalError("real_to_int_pmf: non-finite input");
  const double fl = std::floor(x);
  const double frac = std::round((x - fl) * 1e12) / 1e12;
  const auto base = static_cast<std::int64_t>(fl);
  if (frac <= 0.0) return int_pmf({{base, 1.0}});
  if (frac >= 1.0) return int_pmf({{base + 1, 1.0}});
  const double low = std::round((1.0 - frac) * 1e12) / 1e12;
  return int_pmf({{base, low}, {base + 1, frac}});
}

}  // namespace perfcal::stoex
