#pragma once

#include "rescorr/base_model.hpp"

namespace rescorr {

/// Signed residuals over the training rows plus the descending-|r| ordering.
struct ResidualTable {
  IndexList rows;              // dataset row indices (train split)
  Eigen::VectorXd residuals;   // aligned with rows
  Eigen::VectorXd predictions; // base prediction (label for classification)
  IndexList order;             // positions into rows, |r| descending, ties by ascending row index
};

/// Regression r = y - f(x); classification r = 1[misclassified] * (1 - P(y|x)).
ResidualTable compute_residuals(const BaseModel& model, const Dataset& data, std::span<const Index> train);
ResidualTable residual_table(const Dataset& data, std::span<const Index> rows, const BasePrediction& base);

/// Descending |r| with the ascending-index tie rule.
IndexList rank_by_magnitude(const Eigen::VectorXd& r);

struct HighResidualPool {
  IndexList rows;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd y_hat;
  Eigen::VectorXd r;
  ScalerStats distance_stats;  // frozen train statistics
  Eigen::MatrixXd z;           // x in distance space
  double d95 = 1.0;
  double sigma = 0.0;
  double gamma_s = 1.0;

  Index size() const { return x.rows(); }
};

/// Builds the pool and its distance statistics from already-selected rows.
HighResidualPool make_pool(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd y_hat, Eigen::VectorXd r,
                           ScalerStats distance_stats, double gamma_s = 1.0, IndexList rows = {});

/// Top max(1, floor(kappa N)) rows by |r|; distance space standardized on the table's rows.
HighResidualPool select_pool(const ResidualTable& table, double kappa, const Dataset& data, double gamma_s = 1.0);
HighResidualPool select_pool(const ResidualTable& table, double kappa, const Dataset& data,
                             const ScalerStats& distance_stats, double gamma_s = 1.0);

Index pool_size(Index n_train, double kappa);

struct QueryDistance {
  double raw = 0.0;         // min distance to the pool
  double normalized = 0.0;  // min(raw / D95, 1)
};

QueryDistance query_distance(const HighResidualPool& pool, const Eigen::Ref<const Eigen::RowVectorXd>& x);
/// Normalized distance for every row of x.
Eigen::VectorXd query_distances(const HighResidualPool& pool, const Eigen::MatrixXd& x);

/// Upper-triangle pairwise Euclidean distances between rows.
std::vector<double> pairwise_distances(const Eigen::MatrixXd& z);
double nearest_rank_percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

/// Pool positions partitioned into batches of at most batch_size, ordered by the
/// anchor/kernel score: each batch starts at the largest remaining |r|.
std::vector<IndexList> score_examples(const HighResidualPool& pool, Index batch_size);

/// Table with feature columns then y, y_hat, r (rows in the given positions order).
CsvTable pool_table(const HighResidualPool& pool, std::span<const std::string> feature_names,
                    std::span<const Index> positions);
std::string format_table(const CsvTable& table);

}  // namespace rescorr
