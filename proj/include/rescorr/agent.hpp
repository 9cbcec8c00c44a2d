#pragma once

#include "rescorr/ensemble.hpp"
#include "rescorr/prompts.hpp"
#include "rescorr/provider.hpp"

#include <map>

namespace rescorr {

struct AgentConfig {
  int K = 2;
  int T = 10;
  Index B = 10;
  double tau_fail = 0.5;
  double p_min = 0.1;
  double kappa = 0.3;
  double gamma_s = 1.0;
  double gamma = 2.0;
  int retry_budget = 3;
  std::size_t failure_rows = 20;
  bool include_domain_context = true;
  bool anonymize_features = false;
  std::string domain_context;
  std::map<std::string, std::string> feature_descriptions;  // keyed by dataset column name
  PromptTemplates templates = PromptTemplates::defaults();
  std::string model_id = "scripted";
  double temperature = 0.7;
  int max_tokens = 2048;
  double beta_train = 0.5;   // classification blend during training
  double tau_k_train = 1.0;  // classification temperature during training
  std::optional<double> tau; // regression score scale; default 0.2 x train target range
  OutputBounds bounds;       // regression output bounds (model space)

  void validate() const;
};

/// N = K ceil(pool / B) + K (1 + 2T).
std::size_t count_calls(int K, int T, Index pool_size, Index B);

/// feat_0..feat_{d-1}.
std::vector<std::string> anonymized_names(std::size_t d);
/// Replaces every whole occurrence of names[i] by aliases[i] (longest names first).
std::string substitute_names(std::string_view text, std::span<const std::string> names,
                             std::span<const std::string> aliases);

struct AugmentedContext {
  std::vector<std::string> schema;  // names shown to the model and used by formulas
  std::string features;             // one "- name: description" line per feature
  std::string domain;               // empty when domain context is off
  std::string model_digest;
  std::vector<IndexList> batches;   // pool positions
  std::vector<std::string> batch_tables;
  std::string pool_overview;        // top rows of the pool by |r|, for refinement prompts
};

AugmentedContext build_context(const Dataset& data, const HighResidualPool& pool, const BaseModel& base,
                               const AgentConfig& config);

struct IterationEntry {
  int t = 0;
  std::string hypothesis;
  std::string explanation;
  std::vector<std::string> formulas;  // printed canonical form
  double loss = 0.0;
  std::string critique;
};

struct MechanismState {
  int agent = 0;
  bool alive = true;
  std::string drop_reason;
  std::vector<IterationEntry> log;
  std::vector<std::vector<FormulaAst>> asts;  // aligned with log

  /// argmin loss over the log (earliest on ties); -1 when empty.
  int best() const;
};

struct Failure {
  Index row = 0;       // dataset row
  double y = 0.0;      // target (label for classification)
  double y_hat = 0.0;  // prediction (true-class probability for classification)
  double error = 0.0;  // |y - y_hat|, or 1 - p_y
};

/// Regression |y_hat - y| > tau_fail; classification p_y < 1 - tau_fail. Sorted by error descending, row ascending.
std::vector<Failure> failure_set(const Dataset& data, std::span<const Index> rows, const Eigen::VectorXd& y_hat,
                                 const Eigen::MatrixXd& probs, double tau_fail);

/// Failure table shown to the critic: the first max_rows failures, or a no-failure marker.
std::string format_failures(const Dataset& data, std::span<const std::string> schema,
                            const std::vector<Failure>& failures, std::size_t max_rows);

struct ValidationStats {
  std::size_t generations = 0;
  std::size_t first_pass = 0;
  std::size_t syntax = 0;
  std::size_t numeric = 0;
  std::size_t type = 0;
};

struct TrainResult {
  EnsembleModel model;
  std::vector<MechanismState> states;
  ResidualTable residuals;
  HighResidualPool pool;
  AugmentedContext context;
  std::vector<double> scores;  // p_k per agent before the p_min filter (NaN for dropped agents)
  std::size_t expected_calls = 0;
  ValidationStats validation;
};

/// The full training procedure on rows `train` of data (already in model space).
/// Reads nothing outside `train`.
TrainResult train(const Dataset& data, std::span<const Index> train, const BaseModel& base, const AgentConfig& config,
                  LlmProvider& provider);

/// Per-agent training loss with the correction at full weight.
double mechanism_loss(const EnsembleModel& frame, const std::vector<FormulaAst>& formulas, const Eigen::MatrixXd& x,
                      const Eigen::VectorXd& y, const BasePrediction& base, double beta, double tau_k);

/// Train-split global score: exp(-MAE/tau) or macro-F1 of the blended predictor; 0 when rejected.
double global_score(const EnsembleModel& frame, const std::vector<FormulaAst>& formulas, const Eigen::MatrixXd& x,
                    const Eigen::VectorXd& y, const BasePrediction& base, double beta, double tau_k);

}  // namespace rescorr
