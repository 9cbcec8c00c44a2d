#pragma once

#include "rescorr/ensemble.hpp"

#include <filesystem>

namespace rescorr {

/// Y = a1 X1 + a2 X2 + a3 sigmoid(b1 X1 X3 - b0) + a4 sin(X5 X7) + eps, X ~ U(0,1) iid.
struct SyntheticSpec {
  Index n = 1000;
  Index d = 8;
  double noise_std = 0.1;
  double a1 = 0.6;
  double a2 = 0.4;
  double a3 = 2.5;
  double b1 = 1.8;
  double b0 = 1.2;  // subtracted inside the sigmoid
  double a4 = 0.3;
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  void validate() const;
};

struct SyntheticData {
  Dataset data;
  Split split;
  Eigen::VectorXd noiseless;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

/// Noise-free response for each row of x (the built-in oracle evaluator; sin is outside the formula grammar).
Eigen::VectorXd synthetic_truth(const SyntheticSpec& spec, const Eigen::MatrixXd& x);
Eigen::VectorXd synthetic_linear_term(const SyntheticSpec& spec, const Eigen::MatrixXd& x);
Eigen::VectorXd synthetic_sigmoid_term(const SyntheticSpec& spec, const Eigen::MatrixXd& x);
Eigen::VectorXd synthetic_sin_term(const SyntheticSpec& spec, const Eigen::MatrixXd& x);

struct VarianceBudget {
  double linear = 0;
  double sigmoid = 0;
  double sin = 0;
  double noise = 0;  // noise_std^2, exact
  double signal = 0; // variance of the noise-free response
  double ceiling = 0;  // signal / (signal + noise)
};

VarianceBudget variance_budget(const SyntheticSpec& spec, Index n_mc, std::uint64_t seed = 12345);

struct SyntheticBaseline {
  std::uint64_t seed = 0;
  double linear_r2 = 0;  // test R^2 of least squares on the train split
  double oracle_r2 = 0;  // test R^2 of linear fit + exact oracle correction (= noise-free response)
  double oracle_residual_var = 0;  // test variance of y - oracle
};

SyntheticBaseline synthetic_baseline(const SyntheticSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Transfer

struct Plate {
  std::string id;
  std::string cohort;
  Dataset data;
};

/// Frozen formulas from one training run on a source plate. Formulas map MinMaxScaler010
/// scaled features to a [0, 1] scaled target.
struct SourceRun {
  std::string id;
  std::string plate;  // empty when the source plate is unknown
  std::vector<FormulaAst> formulas;
  double delta_r2_vs_ml = 0;
};

enum class MlSource { transfer, retrain, automatic };
enum class TransferAblation { averaged_blend, per_formula_blend, averaged_formula_only, per_formula_only };
enum class SourceFilter { filtered, unfiltered, below_filter };

std::string to_string(TransferAblation a);
TransferAblation transfer_ablation_from_string(std::string_view text);
MlSource ml_source_from_string(std::string_view text);

struct TransferConfig {
  double beta_transfer = 0.5;
  MlSource ml_source = MlSource::automatic;
  TransferAblation ablation = TransferAblation::averaged_blend;
  SourceFilter filter = SourceFilter::filtered;
  bool include_self = false;      // evaluate a run on its own plate
  bool residual_pilot = false;    // y = y_ml + 0.5 (mean f - mean y_train)
  std::uint64_t split_seed = 0;
  int q_bins = 5;
};

struct TransferRecord {
  std::string source_run;
  std::string source_plate;
  std::string target_plate;
  std::string relation;  // "within" or "across" cohort
  std::string cohort;    // target cohort
  int formula = -1;      // -1 for averaged modes
  double delta_mae = 0;  // MAE_ml - MAE_transfer (positive = better)
  double delta_r2 = 0;
  bool improved = false;
  bool failed = false;
  std::string failure_reason;
};

struct CohortAggregate {
  std::size_t pairs = 0;
  std::size_t evaluated = 0;
  std::size_t failed = 0;
  std::size_t improving = 0;
  double pct_improving = 0;  // over evaluated pairs, in percent
  double mean_delta_mae = 0;
  double mean_delta_r2 = 0;
};

struct TransferReport {
  std::vector<TransferRecord> records;
  CohortAggregate within;
  CohortAggregate across;
  std::size_t sources_used = 0;
  std::size_t sources_total = 0;
};

TransferReport transfer_eval(std::span<const Plate> plates, std::span<const SourceRun> sources, const TransferConfig& config);

/// Source-plate delta R^2 (blend vs ML-only) on the plate's own 80/20 split.
double source_delta_r2(const Plate& plate, const std::vector<FormulaAst>& formulas, const TransferConfig& config);

void write_transfer_csv(const TransferReport& report, const std::filesystem::path& csv);
std::string transfer_aggregate_json(const TransferReport& report, const TransferConfig& config);

/// Two reagent cohorts of synthetic plates. Cohort "A" uses the default sigmoid (b1, -b0);
/// cohort "B" uses coefficients (0.5, +1.2). Source runs carry K perturbed copies of the
/// cohort-A response written as DSL formulas.
struct CohortPlateSpec {
  SyntheticSpec base;
  int plates_per_cohort = 4;
  Index rows_per_plate = 400;
  std::vector<int> source_plates{0, 3};  // indices into cohort A
  int runs_per_source = 4;
  int formulas_per_run = 2;
  double coefficient_jitter = 0.1;
  std::uint64_t seed = 2024;
};

struct CohortPlates {
  std::vector<Plate> plates;
  std::vector<SourceRun> sources;
};

CohortPlates make_cohort_plates(const CohortPlateSpec& spec, const TransferConfig& config);

/// Builds a plate set from one CSV with a plate-id column (and an optional cohort column).
std::vector<Plate> plates_from_csv(const std::filesystem::path& csv, std::string_view plate_column,
                                   std::string_view cohort_column = "");

}  // namespace rescorr
