#pragma once

#include "rescorr/common.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rescorr {

enum class Task { regression, classification };

std::string to_string(Task task);
Task task_from_string(std::string_view text);

/// Feature matrix plus targets. Classification targets hold labels 1..C stored as doubles.
struct Dataset {
  Eigen::MatrixXd features;
  std::vector<std::string> feature_names;
  Eigen::VectorXd targets;
  Task task = Task::regression;
  int num_classes = 0;
  std::vector<std::int64_t> row_ids;

  Index rows() const { return features.rows(); }
  Index cols() const { return features.cols(); }

  /// Throws DataError when any invariant is broken.
  void validate() const;

  int label(Index i) const { return static_cast<int>(targets(i)); }
  std::vector<int> labels(std::span<const Index> idx) const;
  std::vector<int> labels() const;

  Dataset subset(std::span<const Index> idx) const;
  Eigen::MatrixXd feature_rows(std::span<const Index> idx) const;
  Eigen::VectorXd target_rows(std::span<const Index> idx) const;
  std::vector<std::int64_t> row_ids_of(std::span<const Index> idx) const;

  /// Column position of a named feature, or -1.
  Index feature_index(std::string_view name) const;
};

/// Builds a dataset with default row ids 0..N-1 and validates it.
Dataset make_dataset(Eigen::MatrixXd features, std::vector<std::string> names, Eigen::VectorXd targets,
                     Task task = Task::regression, int num_classes = 0);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const std::filesystem::path& path, const CsvTable& table);
std::vector<std::string> split_csv_line(std::string_view line);

/// Header row = feature names, last column = target. An optional sidecar JSON
/// ({"task": "classification", "num_classes": 3, "row_id_column": "id"}) declares the task.
Dataset load_dataset_csv(const std::filesystem::path& csv, const std::optional<std::filesystem::path>& sidecar = {});
void save_dataset_csv(const Dataset& data, const std::filesystem::path& csv, std::string_view target_name = "target");

// ---------------------------------------------------------------------------
// Splits

enum class SplitStrategy { random, quantile_stratified };

struct SplitSpec {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
  std::uint64_t seed = 0;
  SplitStrategy strategy = SplitStrategy::random;
  int q_bins = 5;
};

struct Split {
  IndexList train;
  IndexList val;
  IndexList test;
  SplitSpec spec;
};

Split make_split(const Dataset& data, const SplitSpec& spec);

/// Deterministic Fisher-Yates driven by a 64-bit Mersenne twister (portable across standard libraries).
void deterministic_shuffle(IndexList& items, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scalers

enum class ScalerKind { identity, standardize, minmax01, minmax010 };

std::string to_string(ScalerKind kind);
ScalerKind scaler_kind_from_string(std::string_view text);

/// Per-column location/scale. Standardize uses the population std (divide by N).
/// Constant columns keep location = value, scale = 1 and map to a constant
/// (0 for standardize, 0.5 for the min-max kinds).
struct ScalerStats {
  ScalerKind kind = ScalerKind::identity;
  Eigen::VectorXd location;
  Eigen::VectorXd scale;
  std::vector<bool> degenerate;
  std::string fitted_on = "train";

  Index size() const { return location.size(); }
};

ScalerStats identity_scaler(Index columns);
ScalerStats fit_scaler(const Eigen::MatrixXd& x, std::span<const Index> rows, ScalerKind kind,
                       std::string fitted_on = "train");
ScalerStats fit_scaler(const Dataset& data, const Split& split, ScalerKind kind);

Eigen::MatrixXd apply_scaler(const ScalerStats& stats, const Eigen::MatrixXd& x);
Eigen::MatrixXd invert_scaler(const ScalerStats& stats, const Eigen::MatrixXd& x);

/// Single-column helpers for target scaling.
Eigen::VectorXd apply_scaler(const ScalerStats& stats, const Eigen::VectorXd& y);
Eigen::VectorXd invert_scaler(const ScalerStats& stats, const Eigen::VectorXd& y);

// ---------------------------------------------------------------------------
// Metrics

struct MetricReport {
  std::optional<double> r2;
  std::optional<double> mae;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> minority_f1;
  std::optional<double> ece;
};

template <typename DerivedA, typename DerivedB>
double mean_absolute_error(const Eigen::MatrixBase<DerivedA>& y, const Eigen::MatrixBase<DerivedB>& yhat) {
  return (y - yhat).cwiseAbs().mean();
}

/// 1 - SS_res/SS_tot; a constant truth vector gives 1 for a perfect fit and 0 otherwise.
template <typename DerivedA, typename DerivedB>
double r2_score(const Eigen::MatrixBase<DerivedA>& y, const Eigen::MatrixBase<DerivedB>& yhat) {
  using Scalar = typename DerivedA::Scalar;
  const Scalar ss_res = (y - yhat).squaredNorm();
  const Scalar ss_tot = (y.array() - y.mean()).matrix().squaredNorm();
  if (ss_tot == Scalar(0)) {
    log_warn("r2: constant truth vector, SS_tot = 0");
    return ss_res > Scalar(0) ? 0.0 : 1.0;
  }
  return static_cast<double>(Scalar(1) - ss_res / ss_tot);
}

MetricReport regression_metrics(const Eigen::VectorXd& y_true, const Eigen::VectorXd& y_pred);

/// Labels are 1..C. Hard predictions give accuracy/F1 only.
MetricReport classification_metrics(std::span<const int> y_true, std::span<const int> y_pred, int num_classes);
/// Probability rows must sum to 1 (+-1e-6); adds a 10-bin max-probability ECE.
MetricReport classification_metrics(std::span<const int> y_true, const Eigen::MatrixXd& probs);

double macro_f1(std::span<const int> y_true, std::span<const int> y_pred, int num_classes);
double expected_calibration_error(std::span<const int> y_true, const Eigen::MatrixXd& probs, int bins = 10);
std::vector<int> argmax_labels(const Eigen::MatrixXd& probs);

}  // namespace rescorr
