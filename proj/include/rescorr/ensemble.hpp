#pragma once

#include "rescorr/formula.hpp"
#include "rescorr/residual.hpp"

#include <optional>

namespace rescorr {

/// One retained correction: explanation text plus its formula(s).
/// Regression mechanisms hold one formula; classification mechanisms hold one score formula per class.
struct Mechanism {
  int agent = 0;
  std::string hypothesis;
  std::string explanation;
  std::vector<FormulaAst> formulas;
  double p = 0.0;
  double tau_k = 1.0;
  std::size_t pool = 0;
  int selected_iteration = 0;
};

struct EnsembleHyper {
  double beta = 0.5;
  double gamma = 2.0;
  double tau = 1.0;  // regression score scale
  double p_min = 0.1;
};

/// Everything inference needs. Feature matrices passed to predict() are in model space
/// (input scaler already applied); predict_raw() handles the scalers.
struct EnsembleModel {
  Task task = Task::regression;
  int num_classes = 0;
  std::vector<std::string> feature_names;         // names the formulas use
  std::vector<std::string> source_feature_names;  // dataset column names
  BaseModel base;
  std::vector<Mechanism> mechanisms;
  std::vector<HighResidualPool> pools;
  EnsembleHyper hyper;
  OutputBounds bounds;
  ScalerStats input_scaler;
  ScalerStats target_scaler;

  /// Correction outputs are clipped to +-(bounds width).
  OutputBounds correction_bounds() const { return {bounds.lo - bounds.hi, bounds.hi - bounds.lo}; }
};

// ---------------------------------------------------------------------------
// Building blocks

/// c = sigmoid(gamma (1 - d)).
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> confidence(const Eigen::ArrayBase<Derived>& d, double gamma) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(gamma) * (Scalar(1) - d)).unaryExpr([](Scalar z) { return sigmoid(z); });
}

inline double confidence(double d, double gamma) { return sigmoid(gamma * (1.0 - d)); }

/// alpha_k = p_k c_k 1[p_k > p_min] / Z; nullopt when Z = 0 (fall back to the base model).
template <typename DerivedP, typename DerivedC>
std::optional<Eigen::VectorXd> attention(const Eigen::MatrixBase<DerivedP>& p, const Eigen::MatrixBase<DerivedC>& c,
                                         double p_min) {
  Eigen::VectorXd w = (p.array() > p_min).select(p.array() * c.array(), 0.0).matrix();
  const double z = w.sum();
  if (!(z > 0.0)) return std::nullopt;
  return Eigen::VectorXd(w / z);
}

/// Row-wise softmax(s / tau) with exponents clamped to [-kExpClamp, 0] after max subtraction.
Eigen::MatrixXd class_probs(const Eigen::MatrixXd& scores, double tau);

inline double regression_score(double mae, double tau) { return std::exp(-mae / tau); }

/// 0.2 x (max - min) of the targets; a constant target falls back to 0.2 (logged).
double target_range_tau(const Eigen::VectorXd& y);

/// Mean cross-entropy of probability rows against labels 1..C (probabilities floored at 1e-15).
double cross_entropy(std::span<const int> labels, const Eigen::MatrixXd& probs);

/// beta P_ML + (1 - beta) Q.
inline Eigen::MatrixXd blend(const Eigen::MatrixXd& p_ml, const Eigen::MatrixXd& q, double beta) {
  return beta * p_ml + (1.0 - beta) * q;
}

/// Regression correction outputs of a mechanism; rejected rows are flagged in finite.
EvalReport mechanism_delta(const EnsembleModel& model, const Mechanism& m, const Eigen::MatrixXd& x);
/// Classification Q_k rows; rejected rows flagged.
struct ClassOutput {
  Eigen::MatrixXd q;
  Eigen::Array<bool, Eigen::Dynamic, 1> finite;
  bool rejected = false;
};
ClassOutput mechanism_probs(const Mechanism& m, const Eigen::MatrixXd& x, double tau_k);

// ---------------------------------------------------------------------------
// Prediction

struct Prediction {
  Eigen::VectorXd values;       // regression value or argmax label
  Eigen::MatrixXd probs;        // classification
  Eigen::VectorXd base_values;
  Eigen::MatrixXd base_probs;
  Eigen::MatrixXd alpha;        // N x M
  Eigen::MatrixXd confidence;   // N x M (0 where rejected)
  Eigen::MatrixXd delta;        // regression: N x M
  std::vector<Eigen::MatrixXd> q;  // classification: per mechanism N x C
  Eigen::Array<bool, Eigen::Dynamic, 1> fallback;
  std::size_t query_rejections = 0;
};

Prediction predict(const EnsembleModel& model, const Eigen::MatrixXd& x, std::span<const std::int64_t> row_ids = {});

/// Applies the input scaler, predicts, and maps regression outputs back through the target scaler.
Prediction predict_raw(const EnsembleModel& model, const Eigen::MatrixXd& x_raw, std::span<const std::int64_t> row_ids = {});

// ---------------------------------------------------------------------------
// Validation tuning (classification)

struct TuneGrid {
  std::vector<double> beta{0.3, 0.5, 0.7};
  std::vector<double> tau_k{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
};

struct TuneReport {
  double beta = 0.5;
  std::vector<double> tau_k;
  std::vector<double> beta_losses;
  std::vector<std::vector<double>> tau_eces;
};

/// tau_k per mechanism by minimum validation ECE of Q_k, then beta by minimum validation
/// cross-entropy of the blended ensemble; ties go to the smaller grid value. Regression is a no-op.
TuneReport tune(EnsembleModel& model, const Eigen::MatrixXd& x_val, std::span<const int> labels_val,
                std::span<const std::int64_t> row_ids_val = {}, const TuneGrid& grid = {});

}  // namespace rescorr
