#include "rescorr/formula.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace rescorr {

std::string to_string(FailureClass c) {
  switch (c) {
    case FailureClass::syntax: return "syntax";
    case FailureClass::numeric: return "numeric";
    case FailureClass::type: return "type";
  }
  return "syntax";
}

FailureClass FormulaError::failure_class() const {
  switch (kind_) {
    case FormulaErrorKind::unknown_feature:
    case FormulaErrorKind::arity: return FailureClass::type;
    default: return FailureClass::syntax;
  }
}

std::vector<std::string> FormulaAst::referenced_features() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) {
    if (n.op != FormulaOp::feature) continue;
    const auto& name = schema_[static_cast<std::size_t>(n.feature)];
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

Index FormulaAst::required_columns() const {
  Index cols = 0;
  for (const auto& n : nodes_)
    if (n.op == FormulaOp::feature) cols = std::max(cols, n.feature + 1);
  return cols;
}

bool FormulaAst::operator==(const FormulaAst& other) const {
  if (nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& a = nodes_[i];
    const auto& b = other.nodes_[i];
    if (a.op != b.op || a.args != b.args) return false;
    if (a.op == FormulaOp::literal && a.value != b.value) return false;
    if (a.op == FormulaOp::feature &&
        schema_[static_cast<std::size_t>(a.feature)] != other.schema_[static_cast<std::size_t>(b.feature)])
      return false;
  }
  return true;
}

namespace {

struct FunctionInfo {
  FormulaOp op;
  int arity;
};

const std::unordered_map<std::string_view, FunctionInfo>& function_table() {
  static const std::unordered_map<std::string_view, FunctionInfo> table = {
      {"clip", {FormulaOp::clip, 3}},   {"exp", {FormulaOp::exp, 1}},        {"log1p", {FormulaOp::log1p, 1}},
      {"abs", {FormulaOp::abs, 1}},     {"max", {FormulaOp::max, 2}},        {"min", {FormulaOp::min, 2}},
      {"maximum", {FormulaOp::max, 2}}, {"minimum", {FormulaOp::min, 2}},    {"sigmoid", {FormulaOp::sigmoid, 1}},
  };
  return table;
}

const std::unordered_set<std::string_view>& blocked_words() {
  static const std::unordered_set<std::string_view> words = {
      "import", "from",    "exec",   "eval",     "open",    "lambda",     "for",     "while",  "if",
      "else",   "elif",    "def",    "class",    "return",  "yield",      "with",    "global", "nonlocal",
      "del",    "assert",  "raise",  "try",      "except",  "finally",    "async",   "await",  "os",
      "sys",    "compile", "getattr", "setattr", "globals", "locals",     "input",   "print",  "subprocess",
      "file",   "pow",     "in",     "is",       "not",     "and",        "or",      "range",  "builtins"};
  return words;
}

enum class Tok { number, ident, plus, minus, star, slash, lparen, rparen, comma, end };

struct Token {
  Tok kind;
  std::string text;
  double value = 0;
  std::size_t pos = 0;
};

[[noreturn]] void blocked(std::string what, std::size_t pos) {
  throw FormulaError(FormulaErrorKind::blocked_construct, "blocked construct: " + what, pos);
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (c == ' ' || c == '\t') {
      ++i;
      continue;
    }
    const std::size_t start = i;
    if (std::isdigit(static_cast<unsigned char>(c)) || (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
      if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
        std::size_t j = i + 1;
        if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
        if (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) {
          i = j;
          while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
        }
      }
      const std::string text(s.substr(start, i - start));
      double v = 0;
      const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
        throw FormulaError(FormulaErrorKind::syntax, "malformed number '" + text + "'", start);
      if (i < s.size() && (std::isalpha(static_cast<unsigned char>(s[i])) || s[i] == '_'))
        throw FormulaError(FormulaErrorKind::syntax, "unexpected character after number", i);
      out.push_back({Tok::number, text, v, start});
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_' || s[i] == '.')) ++i;
      std::string text(s.substr(start, i - start));
      const auto dot = text.find('.');
      if (dot != std::string::npos) {
        const std::string prefix = text.substr(0, dot);
        const std::string rest = text.substr(dot + 1);
        if ((prefix == "np" || prefix == "numpy") && function_table().count(rest)) {
          text = rest;
        } else {
          blocked("attribute access '" + text + "'", start);
        }
      }
      out.push_back({Tok::ident, text, 0, start});
      continue;
    }
    switch (c) {
      case '+': out.push_back({Tok::plus, "+", 0, i}); break;
      case '-': out.push_back({Tok::minus, "-", 0, i}); break;
      case '*':
        if (i + 1 < s.size() && s[i + 1] == '*') blocked("power operator '**'", i);
        out.push_back({Tok::star, "*", 0, i});
        break;
      case '/':
        if (i + 1 < s.size() && s[i + 1] == '/') blocked("floor division '//'", i);
        out.push_back({Tok::slash, "/", 0, i});
        break;
      case '(': out.push_back({Tok::lparen, "(", 0, i}); break;
      case ')': out.push_back({Tok::rparen, ")", 0, i}); break;
      case ',': out.push_back({Tok::comma, ",", 0, i}); break;
      case '^': blocked("power operator '^'", i);
      case '=': blocked("assignment or comparison '='", i);
      case ';':
      case '\n':
      case '\r': blocked("statement separator", i);
      case '[':
      case ']': blocked("indexing", i);
      case '{':
      case '}': blocked("braces", i);
      case '"':
      case '\'': blocked("string literal", i);
      case '<':
      case '>':
      case '!': blocked("comparison", i);
      case '&':
      case '|':
      case '~': blocked("bitwise operator", i);
      case ':': blocked("colon", i);
      case '@': blocked("decorator or matrix operator '@'", i);
      case '%': blocked("modulo operator", i);
      default:
        throw FormulaError(FormulaErrorKind::syntax, std::string("unexpected character '") + c + "'", i);
    }
    ++i;
  }
  out.push_back({Tok::end, "", 0, s.size()});
  return out;
}

}  // namespace

class FormulaParser {
 public:
  FormulaParser(std::string_view text, std::span<const std::string> names, const ParseOptions& options)
      : tokens_(tokenize(text)), options_(options) {
    ast_.schema_.assign(names.begin(), names.end());
  }

  FormulaAst run() {
    expression();
    if (peek().kind != Tok::end)
      throw FormulaError(FormulaErrorKind::syntax, "unexpected token '" + peek().text + "'", peek().pos);
    return std::move(ast_);
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_++]; }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind)
      throw FormulaError(FormulaErrorKind::syntax,
                         std::string("expected ") + what + (peek().kind == Tok::end ? " at end of input" : " near '" + peek().text + "'"),
                         peek().pos);
    ++pos_;
  }

  int emit(FormulaNode node, std::size_t pos) {
    if (ast_.nodes_.size() >= options_.max_nodes)
      throw FormulaError(FormulaErrorKind::node_budget,
                         "formula exceeds the node budget of " + std::to_string(options_.max_nodes), pos);
    ast_.nodes_.push_back(node);
    return static_cast<int>(ast_.nodes_.size()) - 1;
  }

  int expression() {
    int lhs = term();
    while (peek().kind == Tok::plus || peek().kind == Tok::minus) {
      const Token& op = next();
      const int rhs = term();
      lhs = emit({op.kind == Tok::plus ? FormulaOp::add : FormulaOp::sub, 0, -1, {lhs, rhs, -1}}, op.pos);
    }
    return lhs;
  }

  int term() {
    int lhs = unary();
    while (peek().kind == Tok::star || peek().kind == Tok::slash) {
      const Token& op = next();
      const int rhs = unary();
      lhs = emit({op.kind == Tok::star ? FormulaOp::mul : FormulaOp::div, 0, -1, {lhs, rhs, -1}}, op.pos);
    }
    return lhs;
  }

  int unary() {
    if (peek().kind == Tok::minus) {
      const Token& op = next();
      const int operand = unary();
      return emit({FormulaOp::neg, 0, -1, {operand, -1, -1}}, op.pos);
    }
    if (peek().kind == Tok::plus) {
      next();
      return unary();
    }
    return primary();
  }

  int primary() {
    const Token& tok = next();
    switch (tok.kind) {
      case Tok::number: return emit({FormulaOp::literal, tok.value, -1, {-1, -1, -1}}, tok.pos);
      case Tok::lparen: {
        const int inner = expression();
        expect(Tok::rparen, "')'");
        return inner;
      }
      case Tok::ident: return identifier(tok);
      case Tok::end: throw FormulaError(FormulaErrorKind::syntax, "unexpected end of formula", tok.pos);
      default: throw FormulaError(FormulaErrorKind::syntax, "unexpected token '" + tok.text + "'", tok.pos);
    }
  }

  int identifier(const Token& tok) {
    const std::string& name = tok.text;
    if (blocked_words().count(name) || name.rfind("__", 0) == 0) blocked("'" + name + "'", tok.pos);
    if (peek().kind == Tok::lparen) {
      const auto it = function_table().find(name);
      if (it == function_table().end()) blocked("call to '" + name + "'", tok.pos);
      next();
      std::array<int, 3> args{-1, -1, -1};
      int count = 0;
      if (peek().kind != Tok::rparen) {
        while (true) {
          const int arg = expression();
          if (count < 3) args[static_cast<std::size_t>(count)] = arg;
          ++count;
          if (peek().kind != Tok::comma) break;
          next();
        }
      }
      expect(Tok::rparen, "')'");
      if (count != it->second.arity)
        throw FormulaError(FormulaErrorKind::arity,
                           name + "() takes " + std::to_string(it->second.arity) + " argument(s), got " + std::to_string(count),
                           tok.pos);
      return emit({it->second.op, 0, -1, args}, tok.pos);
    }
    for (std::size_t j = 0; j < ast_.schema_.size(); ++j)
      if (ast_.schema_[j] == name) return emit({FormulaOp::feature, 0, static_cast<Index>(j), {-1, -1, -1}}, tok.pos);
    if (function_table().count(name))
      throw FormulaError(FormulaErrorKind::syntax, "function '" + name + "' used without arguments", tok.pos);
    throw FormulaError(FormulaErrorKind::unknown_feature, "unknown feature '" + name + "'", tok.pos);
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  ParseOptions options_;
  FormulaAst ast_;
};

FormulaAst parse(const FormulaSource& source, std::span<const std::string> feature_names, const ParseOptions& options) {
  const auto first = source.text.find_first_not_of(" \t");
  if (first == std::string::npos) throw FormulaError(FormulaErrorKind::syntax, "empty formula");
  return FormulaParser(source.text, feature_names, options).run();
}

FormulaAst parse(std::string_view text, std::span<const std::string> feature_names, const ParseOptions& options) {
  return parse(FormulaSource{std::string(text), FormulaOrigin::inline_text}, feature_names, options);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(FormulaOp op) {
  switch (op) {
    case FormulaOp::add:
    case FormulaOp::sub: return 1;
    case FormulaOp::mul:
    case FormulaOp::div: return 2;
    case FormulaOp::neg: return 3;
    default: return 4;
  }
}

const char* function_name(FormulaOp op) {
  switch (op) {
    case FormulaOp::clip: return "clip";
    case FormulaOp::exp: return "exp";
    case FormulaOp::log1p: return "log1p";
    case FormulaOp::abs: return "abs";
    case FormulaOp::max: return "max";
    case FormulaOp::min: return "min";
    case FormulaOp::sigmoid: return "sigmoid";
    default: return "";
  }
}

std::string format_literal(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  return s;
}

void print_node(const FormulaAst& ast, int index, std::string& out) {
  const auto& n = ast.nodes()[static_cast<std::size_t>(index)];
  const int prec = precedence(n.op);
  auto child = [&](int arg, bool parens) {
    if (parens) out += '(';
    print_node(ast, arg, out);
    if (parens) out += ')';
  };
  auto prec_of = [&](int arg) { return precedence(ast.nodes()[static_cast<std::size_t>(arg)].op); };
  switch (n.op) {
    case FormulaOp::literal: out += format_literal(n.value); break;
    case FormulaOp::feature: out += ast.schema()[static_cast<std::size_t>(n.feature)]; break;
    case FormulaOp::add:
    case FormulaOp::sub:
    case FormulaOp::mul:
    case FormulaOp::div: {
      child(n.args[0], prec_of(n.args[0]) < prec);
      out += n.op == FormulaOp::add ? " + " : n.op == FormulaOp::sub ? " - " : n.op == FormulaOp::mul ? " * " : " / ";
      child(n.args[1], prec_of(n.args[1]) <= prec);
      break;
    }
    case FormulaOp::neg:
      out += '-';
      child(n.args[0], prec_of(n.args[0]) < prec);
      break;
    default: {
      out += function_name(n.op);
      out += '(';
      for (int a = 0; a < 3 && n.args[static_cast<std::size_t>(a)] >= 0; ++a) {
        if (a) out += ", ";
        print_node(ast, n.args[static_cast<std::size_t>(a)], out);
      }
      out += ')';
    }
  }
}

}  // namespace

std::string print(const FormulaAst& ast) {
  if (ast.empty()) return "";
  std::string out;
  print_node(ast, ast.root(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Lint

namespace {

bool has_positive_additive_literal(const FormulaAst& ast, int index, bool positive) {
  const auto& n = ast.nodes()[static_cast<std::size_t>(index)];
  switch (n.op) {
    case FormulaOp::literal: return positive ? n.value > 0 : n.value < 0;
    case FormulaOp::add:
      return has_positive_additive_literal(ast, n.args[0], positive) || has_positive_additive_literal(ast, n.args[1], positive);
    case FormulaOp::sub:
      return has_positive_additive_literal(ast, n.args[0], positive) || has_positive_additive_literal(ast, n.args[1], !positive);
    case FormulaOp::neg: return has_positive_additive_literal(ast, n.args[0], !positive);
    default: return false;
  }
}

std::string subtree_text(const FormulaAst& ast, int index) {
  std::string out;
  print_node(ast, index, out);
  return out;
}

}  // namespace

std::vector<std::string> lint(const FormulaAst& ast) {
  std::vector<std::string> warnings;
  for (const auto& n : ast.nodes()) {
    if (n.op != FormulaOp::div) continue;
    const auto& den = ast.nodes()[static_cast<std::size_t>(n.args[1])];
    if (den.op == FormulaOp::literal && den.value != 0) continue;
    if (!has_positive_additive_literal(ast, n.args[1], true))
      warnings.push_back("unguarded division: denominator '" + subtree_text(ast, n.args[1]) +
                         "' has no additive positive constant");
  }
  return warnings;
}

// ---------------------------------------------------------------------------
// Extraction

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string_view unquote_code(std::string_view s) {
  s = trim(s);
  while (s.size() >= 2 && s.front() == '`' && s.back() == '`') s = trim(s.substr(1, s.size() - 2));
  return s;
}

template <typename F>
void for_each_line(std::string_view text, F f) {
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const auto line = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    f(line);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
}

bool is_formula_line(std::string_view line) {
  const auto body = line.substr(std::min(line.size(), line.find_first_not_of(" \t") == std::string_view::npos
                                                          ? line.size()
                                                          : line.find_first_not_of(" \t")));
  return body.rfind("Formula:", 0) == 0 || body.rfind("Formula[", 0) == 0;
}

}  // namespace

FormulaSource extract_formula(std::string_view llm_text) {
  std::optional<std::string> found;
  for_each_line(llm_text, [&](std::string_view line) {
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string_view::npos) return;
    const auto body = line.substr(b);
    if (body.rfind("Formula:", 0) == 0) found = std::string(unquote_code(body.substr(8)));
  });
  if (!found) throw FormulaError(FormulaErrorKind::extraction, "no line starting with 'Formula:' in response");
  if (found->empty()) throw FormulaError(FormulaErrorKind::extraction, "'Formula:' line is empty");
  return {*found, FormulaOrigin::llm_response};
}

std::vector<FormulaSource> extract_class_formulas(std::string_view llm_text, int num_classes) {
  std::vector<std::optional<std::string>> found(static_cast<std::size_t>(num_classes));
  for_each_line(llm_text, [&](std::string_view line) {
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string_view::npos) return;
    const auto body = line.substr(b);
    if (body.rfind("Formula[", 0) != 0) return;
    const auto close = body.find("]:");
    if (close == std::string_view::npos) return;
    int c = 0;
    const auto digits = body.substr(8, close - 8);
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), c);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || c < 1 || c > num_classes) return;
    found[static_cast<std::size_t>(c - 1)] = std::string(unquote_code(body.substr(close + 2)));
  });
  std::vector<FormulaSource> out;
  for (int c = 0; c < num_classes; ++c) {
    const auto& f = found[static_cast<std::size_t>(c)];
    if (!f || f->empty())
      throw FormulaError(FormulaErrorKind::extraction, "missing 'Formula[" + std::to_string(c + 1) + "]:' line in response");
    out.push_back({*f, FormulaOrigin::llm_response});
  }
  return out;
}

std::string strip_formula_lines(std::string_view llm_text) {
  std::vector<std::string_view> kept;
  for_each_line(llm_text, [&](std::string_view line) {
    if (!is_formula_line(line)) kept.push_back(line);
  });
  while (!kept.empty() && trim(kept.front()).empty()) kept.erase(kept.begin());
  while (!kept.empty() && trim(kept.back()).empty()) kept.pop_back();
  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i) out += '\n';
    out += std::string(trim(kept[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate(const FormulaAst& ast, const Eigen::MatrixXd& x, std::optional<OutputBounds> bounds) {
  if (ast.empty()) throw Error("evaluate: empty formula");
  if (x.cols() < ast.required_columns())
    throw DataError("evaluate: feature matrix has " + std::to_string(x.cols()) + " columns, formula needs " +
                    std::to_string(ast.required_columns()));
  const Index n = x.rows();
  const auto& nodes = ast.nodes();
  std::vector<Eigen::ArrayXd> values(nodes.size());
  Eigen::Array<bool, Eigen::Dynamic, 1> finite = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, true);
  auto arg = [&](const FormulaNode& node, int a) -> const Eigen::ArrayXd& {
    return values[static_cast<std::size_t>(node.args[static_cast<std::size_t>(a)])];
  };
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    Eigen::ArrayXd& v = values[i];
    switch (node.op) {
      case FormulaOp::literal: v = Eigen::ArrayXd::Constant(n, node.value); break;
      case FormulaOp::feature: v = x.col(node.feature).array(); break;
      case FormulaOp::add: v = arg(node, 0) + arg(node, 1); break;
      case FormulaOp::sub: v = arg(node, 0) - arg(node, 1); break;
      case FormulaOp::mul: v = arg(node, 0) * arg(node, 1); break;
      case FormulaOp::div: v = arg(node, 0) / arg(node, 1); break;
      case FormulaOp::neg: v = -arg(node, 0); break;
      case FormulaOp::clip: v = arg(node, 0).max(arg(node, 1)).min(arg(node, 2)); break;
      case FormulaOp::exp: v = arg(node, 0).exp(); break;
      case FormulaOp::log1p: v = arg(node, 0).unaryExpr([](double a) { return std::log1p(a); }); break;
      case FormulaOp::abs: v = arg(node, 0).abs(); break;
      case FormulaOp::max: v = arg(node, 0).max(arg(node, 1)); break;
      case FormulaOp::min: v = arg(node, 0).min(arg(node, 1)); break;
      case FormulaOp::sigmoid: v = arg(node, 0).unaryExpr([](double a) { return sigmoid(a); }); break;
    }
    finite = finite && v.isFinite();
  }
  EvalReport report;
  report.output = values.back().matrix();
  report.finite = finite;
  if (!finite.all()) {
    report.rejected = true;
    const Index bad = n - finite.count();
    report.rejection_reason = "NaN or Inf produced on " + std::to_string(bad) + " of " + std::to_string(n) + " rows";
  }
  if (bounds) {
    for (Index i = 0; i < n; ++i) {
      if (!finite(i)) continue;
      double& o = report.output(i);
      if (o < bounds->lo) {
        o = bounds->lo;
        ++report.clip_events;
      } else if (o > bounds->hi) {
        o = bounds->hi;
        ++report.clip_events;
      }
    }
  }
  return report;
}

ScoreReport multiclass_scores(std::span<const FormulaAst> asts, const Eigen::MatrixXd& x) {
  if (asts.size() < 2) throw Error("multiclass_scores: need at least two classes");
  ScoreReport report;
  report.scores.resize(x.rows(), static_cast<Index>(asts.size()));
  report.finite = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(x.rows(), true);
  for (std::size_t c = 0; c < asts.size(); ++c) {
    const EvalReport r = evaluate(asts[c], x);
    report.scores.col(static_cast<Index>(c)) = r.output;
    report.finite = report.finite && r.finite;
    if (r.rejected && !report.rejected) {
      report.rejected = true;
      report.rejection_reason = "class " + std::to_string(c + 1) + ": " + r.rejection_reason;
    }
  }
  return report;
}

std::string allowed_operators_description() {
  return "+, -, *, / (no implicit epsilon), unary -, parentheses, numeric literals, feature names, "
         "clip(x, lo, hi), exp(x), log1p(x), abs(x), max(x, y), min(x, y), sigmoid(x). "
         "No powers (^ or **), no loops, no conditionals, no imports, no assignments.";
}

}  // namespace rescorr
