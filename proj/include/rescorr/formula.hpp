#pragma once

#include "rescorr/common.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rescorr {

enum class FormulaErrorKind { syntax, unknown_feature, blocked_construct, node_budget, arity, extraction };

/// Validator failure classes used for regeneration statistics.
enum class FailureClass { syntax, numeric, type };

std::string to_string(FailureClass c);

class FormulaError : public Error {
 public:
  FormulaError(FormulaErrorKind kind, std::string message, std::size_t position = 0)
      : Error(std::move(message)), kind_(kind), position_(position) {}

  FormulaErrorKind kind() const { return kind_; }
  std::size_t position() const { return position_; }
  FailureClass failure_class() const;

 private:
  FormulaErrorKind kind_;
  std::size_t position_;
};

enum class FormulaOrigin { llm_response, file, inline_text };

struct FormulaSource {
  std::string text;
  FormulaOrigin origin = FormulaOrigin::inline_text;
};

enum class FormulaOp : std::uint8_t { literal, feature, add, sub, mul, div, neg, clip, exp, log1p, abs, max, min, sigmoid };

/// One node of the post-order node pool; argument slots hold indices of earlier nodes.
struct FormulaNode {
  FormulaOp op = FormulaOp::literal;
  double value = 0.0;
  Index feature = -1;
  std::array<int, 3> args{-1, -1, -1};

  bool operator==(const FormulaNode&) const = default;
};

/// Validated correction expression. Immutable once built by parse().
class FormulaAst {
 public:
  FormulaAst() = default;

  const std::vector<FormulaNode>& nodes() const { return nodes_; }
  int root() const { return static_cast<int>(nodes_.size()) - 1; }
  std::size_t node_count() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  const std::vector<std::string>& schema() const { return schema_; }

  std::vector<std::string> referenced_features() const;
  /// Largest referenced column + 1 (0 for constant formulas).
  Index required_columns() const;

  /// Structural equality (same nodes, same referenced names).
  bool operator==(const FormulaAst& other) const;

 private:
  friend class FormulaParser;
  std::vector<FormulaNode> nodes_;
  std::vector<std::string> schema_;
};

struct ParseOptions {
  std::size_t max_nodes = 64;
};

FormulaAst parse(const FormulaSource& source, std::span<const std::string> feature_names, const ParseOptions& options = {});
FormulaAst parse(std::string_view text, std::span<const std::string> feature_names, const ParseOptions& options = {});

/// Canonical infix text; reparsing it yields an identical AST.
std::string print(const FormulaAst& ast);

/// Warnings for divisions whose denominator has no additive positive literal guard.
std::vector<std::string> lint(const FormulaAst& ast);

/// Expression after the last line starting with "Formula:" (leading whitespace allowed).
FormulaSource extract_formula(std::string_view llm_text);

/// One "Formula[c]:" line per class c = 1..C (last occurrence wins per class).
std::vector<FormulaSource> extract_class_formulas(std::string_view llm_text, int num_classes);

/// Text with every Formula line removed and blank edges trimmed.
std::string strip_formula_lines(std::string_view llm_text);

struct OutputBounds {
  double lo = 0.0;
  double hi = 1.0;
};

struct EvalReport {
  Eigen::VectorXd output;
  Eigen::Array<bool, Eigen::Dynamic, 1> finite;
  std::size_t clip_events = 0;
  bool rejected = false;
  std::string rejection_reason;
};

/// Element-wise evaluation over the rows of x (columns in schema order). Non-finite
/// outputs reject the formula; finite out-of-bounds outputs are clipped and counted.
EvalReport evaluate(const FormulaAst& ast, const Eigen::MatrixXd& x, std::optional<OutputBounds> bounds = {});

struct ScoreReport {
  Eigen::MatrixXd scores;
  Eigen::Array<bool, Eigen::Dynamic, 1> finite;
  bool rejected = false;
  std::string rejection_reason;
};

/// Column c holds the scores of asts[c]; a rejection in any class rejects the whole batch.
ScoreReport multiclass_scores(std::span<const FormulaAst> asts, const Eigen::MatrixXd& x);

inline constexpr double kExpClamp = 60.0;

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  const Scalar c = std::clamp(z, Scalar(-kExpClamp), Scalar(kExpClamp));
  return Scalar(1) / (Scalar(1) + std::exp(-c));
}

/// Operators accepted by the grammar, for prompt rendering.
std::string allowed_operators_description();

}  // namespace rescorr
