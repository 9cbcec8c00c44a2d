#pragma once

#include "rescorr/data.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace rescorr {

enum class BaseKind { linear, ridge, logistic, frozen };

std::string to_string(BaseKind kind);
BaseKind base_kind_from_string(std::string_view text);

/// Externally produced predictions keyed by row id (e.g. a boosted-tree model).
struct FrozenPredictions {
  std::map<std::int64_t, double> values;
  std::map<std::int64_t, Eigen::VectorXd> probs;
  std::string provenance;
};

/// CSV layout: row_id, prediction[, prob_1..prob_C].
FrozenPredictions load_frozen_predictions(const std::filesystem::path& csv, Task task, int num_classes = 0);
void save_frozen_predictions(const FrozenPredictions& frozen, const std::filesystem::path& csv, int num_classes = 0);

struct BaseModel {
  BaseKind kind = BaseKind::linear;
  Task task = Task::regression;
  int num_classes = 0;
  std::vector<std::string> feature_names;
  double lambda = 0.0;

  // linear / ridge
  Eigen::VectorXd coef;
  double intercept = 0.0;

  // logistic: column c holds class c+1; column 0 is the zero reference class
  Eigen::MatrixXd weights;
  Eigen::VectorXd intercepts;
  int iterations = 0;
  double gradient_norm = 0.0;

  std::optional<FrozenPredictions> frozen;

  /// |coefficients| per feature; logistic sums |w| across classes. Empty for frozen.
  Eigen::VectorXd feature_importance() const;
};

struct FitOptions {
  double ridge_lambda = 1e-3;
  double logistic_l2 = 1.0;
  int max_iterations = 10000;
  double tolerance = 1e-6;
};

BaseModel fit_base(BaseKind kind, const Dataset& data, std::span<const Index> train, const FitOptions& options = {});

BaseModel frozen_model(FrozenPredictions frozen, Task task, int num_classes, std::vector<std::string> feature_names);

struct BasePrediction {
  Eigen::VectorXd values;  // regression value, or argmax label for classification
  Eigen::MatrixXd probs;   // N x C, classification only
};

/// Frozen models look rows up by id; other kinds ignore row_ids.
BasePrediction predict(const BaseModel& model, const Eigen::MatrixXd& x, std::span<const std::int64_t> row_ids = {});

/// Logistic objective pieces at the given parameters (used by the fitter and its tests).
struct LogisticObjective {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};
LogisticObjective logistic_objective(const Eigen::MatrixXd& x, std::span<const int> labels, int num_classes,
                                     const Eigen::MatrixXd& weights, const Eigen::VectorXd& intercepts, double l2);

/// Row-wise softmax with the max subtracted.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores);

}  // namespace rescorr
