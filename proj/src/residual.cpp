#include "rescorr/residual.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace rescorr {

IndexList rank_by_magnitude(const Eigen::VectorXd& r) {
  IndexList order(static_cast<std::size_t>(r.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return std::abs(r(a)) > std::abs(r(b)); });
  return order;
}

ResidualTable residual_table(const Dataset& data, std::span<const Index> rows, const BasePrediction& base) {
  const Index n = static_cast<Index>(rows.size());
  if (base.values.size() != n) throw DataError("residual_table: prediction count does not match rows");
  ResidualTable t;
  t.rows.assign(rows.begin(), rows.end());
  t.predictions = base.values;
  t.residuals.resize(n);
  for (Index i = 0; i < n; ++i) {
    const Index row = rows[static_cast<std::size_t>(i)];
    if (data.task == Task::regression) {
      t.residuals(i) = data.targets(row) - base.values(i);
    } else {
      const int y = data.label(row);
      const bool wrong = static_cast<int>(base.values(i)) != y;
      t.residuals(i) = wrong ? 1.0 - base.probs(i, y - 1) : 0.0;
    }
  }
  // Stable sort on positions keeps the ascending-row tie rule when rows are sorted.
  IndexList by_row(static_cast<std::size_t>(n));
  std::iota(by_row.begin(), by_row.end(), Index{0});
  std::stable_sort(by_row.begin(), by_row.end(),
                   [&](Index a, Index b) { return t.rows[static_cast<std::size_t>(a)] < t.rows[static_cast<std::size_t>(b)]; });
  std::stable_sort(by_row.begin(), by_row.end(),
                   [&](Index a, Index b) { return std::abs(t.residuals(a)) > std::abs(t.residuals(b)); });
  t.order = std::move(by_row);
  return t;
}

ResidualTable compute_residuals(const BaseModel& model, const Dataset& data, std::span<const Index> train) {
  if (model.task != data.task) throw DataError("compute_residuals: base model task does not match dataset task");
  const auto ids = data.row_ids_of(train);
  return residual_table(data, train, predict(model, data.feature_rows(train), ids));
}

Index pool_size(Index n_train, double kappa) {
  if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa must lie in (0, 1]");
  return std::max<Index>(1, static_cast<Index>(std::floor(kappa * static_cast<double>(n_train) + 1e-9)));
}

std::vector<double> pairwise_distances(const Eigen::MatrixXd& z) {
  std::vector<double> out;
  const Index n = z.rows();
  out.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j) out.push_back((z.row(i) - z.row(j)).norm());
  return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
  if (values.empty()) throw Error("nearest_rank_percentile: no values");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(values.size()) - 1e-12));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median: no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

HighResidualPool make_pool(Eigen::MatrixXd x, Eigen::VectorXd y, Eigen::VectorXd y_hat, Eigen::VectorXd r,
                           ScalerStats distance_stats, double gamma_s, IndexList rows) {
  if (x.rows() == 0) throw Error("make_pool: empty pool");
  if (!(gamma_s > 0)) throw ConfigError("gamma_s must be positive");
  HighResidualPool pool;
  pool.z = apply_scaler(distance_stats, x);
  pool.x = std::move(x);
  pool.y = std::move(y);
  pool.y_hat = std::move(y_hat);
  pool.r = std::move(r);
  pool.distance_stats = std::move(distance_stats);
  pool.gamma_s = gamma_s;
  pool.rows = std::move(rows);
  const auto dists = pairwise_distances(pool.z);
  if (dists.empty()) {
    pool.d95 = 1.0;
    pool.sigma = 0.0;
  } else {
    pool.d95 = nearest_rank_percentile(dists, 95.0);
    pool.sigma = median(dists);
    if (pool.d95 <= 0.0) {
      log_info("pool: all points coincide in distance space, D95 set to 1");
      pool.d95 = 1.0;
    }
  }
  return pool;
}

HighResidualPool select_pool(const ResidualTable& table, double kappa, const Dataset& data,
                             const ScalerStats& distance_stats, double gamma_s) {
  const Index n = pool_size(static_cast<Index>(table.rows.size()), kappa);
  IndexList positions(table.order.begin(), table.order.begin() + n);
  IndexList rows;
  Eigen::VectorXd y_hat(n), r(n);
  for (Index i = 0; i < n; ++i) {
    const Index p = positions[static_cast<std::size_t>(i)];
    rows.push_back(table.rows[static_cast<std::size_t>(p)]);
    y_hat(i) = table.predictions(p);
    r(i) = table.residuals(p);
  }
  return make_pool(data.feature_rows(rows), data.target_rows(rows), y_hat, r, distance_stats, gamma_s, rows);
}

HighResidualPool select_pool(const ResidualTable& table, double kappa, const Dataset& data, double gamma_s) {
  return select_pool(table, kappa, data, fit_scaler(data.features, table.rows, ScalerKind::standardize), gamma_s);
}

QueryDistance query_distance(const HighResidualPool& pool, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  const Eigen::MatrixXd zq = apply_scaler(pool.distance_stats, Eigen::MatrixXd(x));
  QueryDistance out;
  out.raw = (pool.z.rowwise() - zq.row(0)).rowwise().norm().minCoeff();
  out.normalized = std::min(out.raw / pool.d95, 1.0);
  return out;
}

Eigen::VectorXd query_distances(const HighResidualPool& pool, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd zq = apply_scaler(pool.distance_stats, x);
  Eigen::VectorXd out(x.rows());
  for (Index i = 0; i < x.rows(); ++i)
    out(i) = std::min((pool.z.rowwise() - zq.row(i)).rowwise().norm().minCoeff() / pool.d95, 1.0);
  return out;
}

std::vector<IndexList> score_examples(const HighResidualPool& pool, Index batch_size) {
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  const Index n = pool.size();
  const bool flat_kernel = pool.sigma <= 0.0;
  if (flat_kernel && n > 1) log_info("score_examples: sigma_s = 0, kernel term set to 1");
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  std::vector<IndexList> batches;
  Index remaining = n;
  while (remaining > 0) {
    Index anchor = -1;
    for (Index i = 0; i < n; ++i)
      if (!used[static_cast<std::size_t>(i)] && (anchor < 0 || std::abs(pool.r(i)) > std::abs(pool.r(anchor)))) anchor = i;
    IndexList candidates;
    std::vector<double> score(static_cast<std::size_t>(n), 0.0);
    for (Index i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double sq = (pool.z.row(anchor) - pool.z.row(i)).squaredNorm();
      const double kernel = flat_kernel ? 1.0 : std::exp(-sq / (2.0 * pool.sigma * pool.sigma));
      score[static_cast<std::size_t>(i)] = kernel * std::pow(std::abs(pool.r(i)), pool.gamma_s);
      candidates.push_back(i);
    }
    std::stable_sort(candidates.begin(), candidates.end(), [&](Index a, Index b) {
      if (a == anchor) return b != anchor;
      if (b == anchor) return false;
      return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    const Index take = std::min(batch_size, remaining);
    IndexList batch(candidates.begin(), candidates.begin() + take);
    for (Index p : batch) used[static_cast<std::size_t>(p)] = true;
    remaining -= take;
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace {
std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed << v;
  return os.str();
}
}  // namespace

CsvTable pool_table(const HighResidualPool& pool, std::span<const std::string> feature_names,
                    std::span<const Index> positions) {
  CsvTable t;
  t.header.assign(feature_names.begin(), feature_names.end());
  t.header.insert(t.header.end(), {"y", "y_hat", "r"});
  for (Index p : positions) {
    std::vector<std::string> row;
    for (Index j = 0; j < pool.x.cols(); ++j) row.push_back(fmt(pool.x(p, j)));
    row.push_back(fmt(pool.y(p)));
    row.push_back(fmt(pool.y_hat(p)));
    row.push_back(fmt(pool.r(p)));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::string format_table(const CsvTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out += ',';
      out += cells[i];
    }
    out += '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

}  // namespace rescorr
