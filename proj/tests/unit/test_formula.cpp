#include "../support/fixtures.hpp"

#include <doctest.h>

#include <functional>
#include <thread>

using namespace rescorr;
using rescorr::testing::Gen;
using rescorr::testing::names;

namespace {

const std::vector<std::string> kCofactors = names({"NAD", "sperm", "fol"});

struct GenExpr {
  std::string text;
  std::function<double(const double*)> value;
};

// Random expression with a directly computed oracle value; the tree is built from the
// grammar's surface syntax, not from the library's node types.
GenExpr random_expr(Gen& g, int depth, int d) {
  const int pick = depth <= 0 ? g.integer(0, 1) : g.integer(0, 11);
  switch (pick) {
    case 0: {
      const double c = std::round(g.uniform(0, 5) * 100) / 100;
      return {std::to_string(c).substr(0, 4), [c2 = std::stod(std::to_string(c).substr(0, 4))](const double*) { return c2; }};
    }
    case 1: {
      const int j = g.integer(0, d - 1);
      return {"x" + std::to_string(j), [j](const double* x) { return x[j]; }};
    }
    case 2: case 3: case 4: {
      auto a = random_expr(g, depth - 1, d), b = random_expr(g, depth - 1, d);
      const char op = "+-*"[pick - 2];
      auto fa = a.value, fb = b.value;
      std::function<double(const double*)> f;
      if (op == '+') f = [fa, fb](const double* x) { return fa(x) + fb(x); };
      if (op == '-') f = [fa, fb](const double* x) { return fa(x) - fb(x); };
      if (op == '*') f = [fa, fb](const double* x) { return fa(x) * fb(x); };
      return {"(" + a.text + " " + op + " " + b.text + ")", f};
    }
    case 5: {
      auto a = random_expr(g, depth - 1, d), b = random_expr(g, depth - 1, d);
      auto fa = a.value, fb = b.value;
      return {"(" + a.text + ")/(1.5 + abs(" + b.text + "))", [fa, fb](const double* x) { return fa(x) / (1.5 + std::abs(fb(x))); }};
    }
    case 6: {
      auto a = random_expr(g, depth - 1, d);
      auto fa = a.value;
      return {"-(" + a.text + ")", [fa](const double* x) { return -fa(x); }};
    }
    case 7: {
      auto a = random_expr(g, depth - 1, d);
      auto fa = a.value;
      return {"sigmoid(" + a.text + ")", [fa](const double* x) { return 1.0 / (1.0 + std::exp(-std::clamp(fa(x), -60.0, 60.0))); }};
    }
    case 8: {
      auto a = random_expr(g, depth - 1, d);
      auto fa = a.value;
      return {"np.log1p(abs(" + a.text + "))", [fa](const double* x) { return std::log1p(std::abs(fa(x))); }};
    }
    case 9: {
      auto a = random_expr(g, depth - 1, d), b = random_expr(g, depth - 1, d);
      auto fa = a.value, fb = b.value;
      return {"max(" + a.text + ", " + b.text + ")", [fa, fb](const double* x) { return std::max(fa(x), fb(x)); }};
    }
    case 10: {
      auto a = random_expr(g, depth - 1, d), b = random_expr(g, depth - 1, d);
      auto fa = a.value, fb = b.value;
      return {"min(" + a.text + ", " + b.text + ")", [fa, fb](const double* x) { return std::min(fa(x), fb(x)); }};
    }
    default: {
      auto a = random_expr(g, depth - 1, d);
      auto fa = a.value;
      return {"clip(" + a.text + ", -1, 2)", [fa](const double* x) { return std::clamp(fa(x), -1.0, 2.0); }};
    }
  }
}

std::vector<std::string> xnames(int d) {
  std::vector<std::string> v;
  for (int j = 0; j < d; ++j) v.push_back("x" + std::to_string(j));
  return v;
}

double eval1(const std::string& f, std::initializer_list<double> row, const std::vector<std::string>& schema) {
  Eigen::MatrixXd x(1, static_cast<Index>(row.size()));
  Index j = 0;
  for (double v : row) x(0, j++) = v;
  return evaluate(parse(f, schema), x).output(0);
}

FormulaErrorKind parse_error(const std::string& f, const std::vector<std::string>& schema) {
  try {
    parse(f, schema);
  } catch (const FormulaError& e) {
    return e.kind();
  }
  FAIL("expected a parse error for: " << f);
  return FormulaErrorKind::syntax;
}

}  // namespace

TEST_CASE("initial worked-example formula parses to a product with three leaves") {
  const FormulaAst ast = parse("0.5 * NAD * spermidine", names({"NAD", "spermidine"}));
  int leaves = 0;
  for (const auto& n : ast.nodes()) leaves += n.op == FormulaOp::literal || n.op == FormulaOp::feature;
  CHECK(leaves == 3);
  CHECK(ast.nodes().back().op == FormulaOp::mul);
  CHECK(ast.referenced_features() == names({"NAD", "spermidine"}));
}

TEST_CASE("worked-example values") {
  CHECK(eval1("0.5*fol/(0.5+fol)", {0.0, 0.0, 0.3}, kCofactors) == doctest::Approx(0.15 / 0.8));
  CHECK(eval1(rescorr::testing::kWorkedF0, {0.8, 0.7, 0.3}, kCofactors) == doctest::Approx(0.28));
  CHECK(eval1(rescorr::testing::kWorkedF1, {0.8, 0.7, 0.3}, kCofactors) == doctest::Approx(0.4675));
  CHECK(eval1("sigmoid(0)", {0.0}, names({"x"})) == 0.5);
}

TEST_CASE("blocked constructs and unknown names") {
  const auto s = names({"x", "y"});
  CHECK(parse_error("import os", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("__import__(x)", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("x ** 2", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("x.real", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("open(x)", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("x; y", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("np.sin(x)", s) == FormulaErrorKind::blocked_construct);
  CHECK(parse_error("0.5*x*unknown_feat", s) == FormulaErrorKind::unknown_feature);
  CHECK(parse_error("clip(x, 1)", s) == FormulaErrorKind::arity);
  CHECK(parse_error("(x + ", s) == FormulaErrorKind::syntax);
  CHECK(FormulaError(FormulaErrorKind::unknown_feature, "").failure_class() == FailureClass::type);
  CHECK(FormulaError(FormulaErrorKind::syntax, "").failure_class() == FailureClass::syntax);
}

TEST_CASE("node budget") {
  std::string f = "x";
  for (int i = 0; i < 40; ++i) f += " + x";
  CHECK(parse_error(f, names({"x"})) == FormulaErrorKind::node_budget);
}

TEST_CASE("extract_formula takes the last Formula line") {
  CHECK(extract_formula("rationale\nFormula: 0.5*NAD*sperm").text == "0.5*NAD*sperm");
  CHECK(extract_formula("Formula: 1\nmore words\n  Formula: `x + 2`\n").text == "x + 2");
  CHECK_THROWS_AS(extract_formula("no formula here"), FormulaError);
  const auto cls = extract_class_formulas("Formula[1]: a\nFormula[2]: b\nFormula[2]: c", 2);
  REQUIRE(cls.size() == 2);
  CHECK(cls[0].text == "a");
  CHECK(cls[1].text == "c");
  CHECK(strip_formula_lines("why\nFormula: x\n") == "why");
}

TEST_CASE("evaluation rejects non-finite outputs and clips to bounds") {
  const auto s = names({"x"});
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 3;
  const EvalReport r = evaluate(parse("1/x", s), x);
  CHECK(r.rejected);
  CHECK_FALSE(r.finite(0));
  CHECK(r.finite(1));
  const EvalReport c = evaluate(parse("x", s), x, OutputBounds{0.0, 2.0});
  CHECK(c.output(2) == 2.0);
  CHECK(c.clip_events == 1);
  CHECK_FALSE(c.rejected);
}

TEST_CASE("multiclass scores") {
  const auto s = names({"x1"});
  std::vector<FormulaAst> two{parse("x1", s), parse("0", s)};
  Eigen::MatrixXd x(1, 1);
  x << 1;
  const ScoreReport r = multiclass_scores(two, x);
  CHECK(r.scores(0, 0) == 1.0);
  CHECK(r.scores(0, 1) == 0.0);

  const auto zoo = names({"hair", "milk", "eggs"});
  const FormulaAst mammal = parse("1.1*hair + 1.3*milk + 0.8*hair*milk*(1 - eggs)", zoo);
  Eigen::MatrixXd z(1, 3);
  z << 1, 1, 0;
  CHECK(evaluate(mammal, z).output(0) == doctest::Approx(1.1 + 1.3 + 0.8));
}

TEST_CASE("lint flags unguarded denominators only") {
  const auto s = names({"x", "y"});
  CHECK(lint(parse("x / (0.5 + y)", s)).empty());
  CHECK_FALSE(lint(parse("x / y", s)).empty());
}

TEST_CASE("property: generated expressions evaluate like their oracle and survive print/parse") {
  Gen g(11);
  const int d = 4;
  const auto schema = xnames(d);
  for (int c = 0; c < 1000; ++c) {
    const GenExpr e = random_expr(g, g.integer(0, 3), d);
    const FormulaAst ast = parse(e.text, schema);
    const FormulaAst again = parse(print(ast), schema);
    REQUIRE(again == ast);
    REQUIRE(print(again) == print(ast));
    const Eigen::MatrixXd x = g.matrix(5, d, -2, 2);
    const EvalReport r = evaluate(ast, x);
    for (Index i = 0; i < x.rows(); ++i) {
      const Eigen::RowVectorXd row = x.row(i);
      const double want = e.value(row.data());
      if (std::isfinite(want)) REQUIRE(r.output(i) == doctest::Approx(want).epsilon(1e-9));
    }
  }
}

TEST_CASE("property: evaluation is bit-identical across calls and threads") {
  Gen g(12);
  const auto schema = xnames(3);
  for (int c = 0; c < 1000; ++c) {
    const FormulaAst ast = parse(random_expr(g, 3, 3).text, schema);
    const Eigen::MatrixXd x = g.matrix(8, 3);
    const Eigen::VectorXd a = evaluate(ast, x).output;
    Eigen::VectorXd b;
    if (c % 50 == 0) {
      std::thread t([&] { b = evaluate(ast, x).output; });
      t.join();
    } else {
      b = evaluate(ast, x).output;
    }
    for (Index i = 0; i < a.size(); ++i) REQUIRE(std::memcmp(&a(i), &b(i), sizeof(double)) == 0);
  }
}

TEST_CASE("property: fuzzed identifier streams never evaluate unless they are whitelisted") {
  Gen g(13);
  const auto schema = names({"a", "b"});
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz_.";
  const std::vector<std::string> allowed{"a", "b", "clip", "exp", "log1p", "abs", "max", "min", "sigmoid", "maximum", "minimum"};
  int rejected = 0;
  for (int c = 0; c < 1000; ++c) {
    std::string id;
    const int len = g.integer(1, 8);
    for (int i = 0; i < len; ++i) id += alphabet[static_cast<std::size_t>(g.integer(0, static_cast<int>(alphabet.size()) - 1))];
    const std::string text = g.coin() ? id + "(a)" : "a + " + id;
    bool ok = true;
    try {
      const FormulaAst ast = parse(text, schema);
      for (const auto& f : ast.referenced_features()) REQUIRE((f == "a" || f == "b"));
    } catch (const FormulaError&) {
      ok = false;
    }
    if (!ok) {
      ++rejected;
      continue;
    }
    // Anything that parsed must be built only from whitelisted names.
    std::string bare = id;
    for (const char* prefix : {"np.", "numpy."})
      if (bare.rfind(prefix, 0) == 0) bare = bare.substr(std::string(prefix).size());
    REQUIRE(std::find(allowed.begin(), allowed.end(), bare) != allowed.end());
  }
  CHECK(rejected > 900);
}

TEST_CASE("property: random character soup either fails to parse or round-trips") {
  Gen g(14);
  const auto schema = names({"x", "y"});
  const std::string alphabet = "xy0123456789.+-*/() ,e";
  for (int c = 0; c < 1000; ++c) {
    std::string s;
    const int len = g.integer(1, 16);
    for (int i = 0; i < len; ++i) s += alphabet[static_cast<std::size_t>(g.integer(0, static_cast<int>(alphabet.size()) - 1))];
    try {
      const FormulaAst ast = parse(s, schema);
      REQUIRE(parse(print(ast), schema) == ast);
    } catch (const FormulaError&) {
    }
  }
}
