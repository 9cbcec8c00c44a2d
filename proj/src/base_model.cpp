#include "rescorr/base_model.hpp"

#include <Eigen/Dense>

#include <sstream>

namespace rescorr {

std::string to_string(BaseKind kind) {
  switch (kind) {
    case BaseKind::linear: return "linear";
    case BaseKind::ridge: return "ridge";
    case BaseKind::logistic: return "logistic";
    case BaseKind::frozen: return "frozen";
  }
  return "linear";
}

BaseKind base_kind_from_string(std::string_view text) {
  if (text == "linear") return BaseKind::linear;
  if (text == "ridge") return BaseKind::ridge;
  if (text == "logistic") return BaseKind::logistic;
  if (text == "frozen") return BaseKind::frozen;
  throw ConfigError("unknown base model kind '" + std::string(text) + "'");
}

Eigen::VectorXd BaseModel::feature_importance() const {
  switch (kind) {
    case BaseKind::linear:
    case BaseKind::ridge: return coef.cwiseAbs();
    case BaseKind::logistic: return weights.cwiseAbs().rowwise().sum();
    case BaseKind::frozen: return {};
  }
  return {};
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd out = scores.colwise() - scores.rowwise().maxCoeff();
  out = out.array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

namespace {

void fit_least_squares(BaseModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  const Eigen::RowVectorXd mean_x = x.colwise().mean();
  const double mean_y = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - mean_x;
  const Eigen::VectorXd yc = y.array() - mean_y;
  if (lambda > 0) {
    Eigen::MatrixXd gram = xc.transpose() * xc;
    gram.diagonal().array() += lambda;
    model.coef = gram.ldlt().solve(xc.transpose() * yc);
  } else {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(xc);
    if (cod.rank() < xc.cols())
      log_info("linear fit: design rank " + std::to_string(cod.rank()) + " < " + std::to_string(xc.cols()) +
               " columns, using the minimum-norm solution");
    model.coef = cod.solve(yc);
  }
  model.intercept = mean_y - mean_x.dot(model.coef);
}

// Packed parameters: for each non-reference class c = 1..C-1, d weights then the intercept.
Eigen::VectorXd pack(const Eigen::MatrixXd& w, const Eigen::VectorXd& b) {
  const Index d = w.rows();
  const Index free = w.cols() - 1;
  Eigen::VectorXd theta(free * (d + 1));
  for (Index c = 0; c < free; ++c) {
    theta.segment(c * (d + 1), d) = w.col(c + 1);
    theta(c * (d + 1) + d) = b(c + 1);
  }
  return theta;
}

void unpack(const Eigen::VectorXd& theta, Index d, int num_classes, Eigen::MatrixXd& w, Eigen::VectorXd& b) {
  w = Eigen::MatrixXd::Zero(d, num_classes);
  b = Eigen::VectorXd::Zero(num_classes);
  for (Index c = 0; c + 1 < num_classes; ++c) {
    w.col(c + 1) = theta.segment(c * (d + 1), d);
    b(c + 1) = theta(c * (d + 1) + d);
  }
}

Eigen::MatrixXd one_hot(std::span<const int> labels, int num_classes) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(static_cast<Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Index>(i), labels[i] - 1) = 1.0;
  return y;
}

double logistic_loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Eigen::MatrixXd& w,
                     const Eigen::VectorXd& b, double l2) {
  const Eigen::MatrixXd scores = (x * w).rowwise() + b.transpose();
  const Eigen::VectorXd m = scores.rowwise().maxCoeff();
  const Eigen::VectorXd lse = m.array() + (scores.colwise() - m).array().exp().rowwise().sum().log();
  const double nll = (lse - (scores.cwiseProduct(y)).rowwise().sum()).sum();
  return nll + 0.5 * l2 * w.squaredNorm();
}

}  // namespace

LogisticObjective logistic_objective(const Eigen::MatrixXd& x, std::span<const int> labels, int num_classes,
                                     const Eigen::MatrixXd& weights, const Eigen::VectorXd& intercepts, double l2) {
  const Eigen::MatrixXd y = one_hot(labels, num_classes);
  LogisticObjective out;
  out.loss = logistic_loss(x, y, weights, intercepts, l2);
  const Eigen::MatrixXd p = softmax_rows((x * weights).rowwise() + intercepts.transpose());
  const Eigen::MatrixXd diff = p - y;
  const Index d = x.cols();
  out.gradient.resize((num_classes - 1) * (d + 1));
  for (Index c = 0; c + 1 < num_classes; ++c) {
    out.gradient.segment(c * (d + 1), d) = x.transpose() * diff.col(c + 1) + l2 * weights.col(c + 1);
    out.gradient(c * (d + 1) + d) = diff.col(c + 1).sum();
  }
  return out;
}

namespace {

void fit_logistic(BaseModel& model, const Eigen::MatrixXd& x, std::span<const int> labels, const FitOptions& opt) {
  const int C = model.num_classes;
  const Index d = x.cols();
  const Index p = d + 1;
  const Eigen::MatrixXd y = one_hot(labels, C);
  Eigen::MatrixXd xt(x.rows(), p);
  xt << x, Eigen::VectorXd::Ones(x.rows());

  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(d, C);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(C);
  Eigen::VectorXd theta = pack(w, b);
  int iter = 0;
  double gnorm = 0;
  for (; iter < opt.max_iterations; ++iter) {
    const auto obj = logistic_objective(x, labels, C, w, b, opt.logistic_l2);
    gnorm = obj.gradient.norm();
    if (gnorm < opt.tolerance) break;

    const Eigen::MatrixXd prob = softmax_rows((x * w).rowwise() + b.transpose());
    const Index free = C - 1;
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(free * p, free * p);
    for (Index a = 0; a < free; ++a) {
      for (Index c = a; c < free; ++c) {
        Eigen::VectorXd s = -prob.col(a + 1).cwiseProduct(prob.col(c + 1));
        if (a == c) s += prob.col(a + 1);
        const Eigen::MatrixXd block = xt.transpose() * s.asDiagonal() * xt;
        hess.block(a * p, c * p, p, p) = block;
        if (a != c) hess.block(c * p, a * p, p, p) = block.transpose();
      }
      hess.block(a * p, a * p, d, d).diagonal().array() += opt.logistic_l2;
    }
    Eigen::VectorXd step = hess.ldlt().solve(obj.gradient);
    if (!step.allFinite() || step.dot(obj.gradient) <= 0) step = obj.gradient;

    double t = 1.0;
    const double slope = step.dot(obj.gradient);
    Eigen::VectorXd next;
    Eigen::MatrixXd nw;
    Eigen::VectorXd nb;
    for (int k = 0; k < 60; ++k) {
      next = theta - t * step;
      unpack(next, d, C, nw, nb);
      if (logistic_loss(x, y, nw, nb, opt.logistic_l2) <= obj.loss - 1e-4 * t * slope) break;
      t *= 0.5;
    }
    if ((next - theta).norm() == 0) break;
    theta = next;
    w = nw;
    b = nb;
  }
  if (iter == opt.max_iterations) log_warn("logistic fit: iteration cap reached, gradient norm " + std::to_string(gnorm));
  model.weights = w;
  model.intercepts = b;
  model.iterations = iter;
  model.gradient_norm = gnorm;
}

}  // namespace

BaseModel fit_base(BaseKind kind, const Dataset& data, std::span<const Index> train, const FitOptions& options) {
  if (train.empty()) throw DataError("fit_base: empty training index set");
  BaseModel model;
  model.kind = kind;
  model.task = data.task;
  model.num_classes = data.num_classes;
  model.feature_names = data.feature_names;
  const Eigen::MatrixXd x = data.feature_rows(train);
  switch (kind) {
    case BaseKind::linear:
    case BaseKind::ridge:
      if (data.task != Task::regression) throw ConfigError("linear/ridge base models need a regression task");
      model.lambda = kind == BaseKind::ridge ? options.ridge_lambda : 0.0;
      fit_least_squares(model, x, data.target_rows(train), model.lambda);
      break;
    case BaseKind::logistic: {
      if (data.task != Task::classification) throw ConfigError("logistic base model needs a classification task");
      const auto labels = data.labels(train);
      std::vector<bool> present(static_cast<std::size_t>(data.num_classes), false);
      for (int l : labels) present[static_cast<std::size_t>(l - 1)] = true;
      if (std::count(present.begin(), present.end(), true) < 2)
        throw DataError("logistic fit: fewer than two classes present in the training split");
      model.lambda = options.logistic_l2;
      fit_logistic(model, x, labels, options);
      break;
    }
    case BaseKind::frozen: throw ConfigError("frozen base models are loaded, not fitted");
  }
  return model;
}

BaseModel frozen_model(FrozenPredictions frozen, Task task, int num_classes, std::vector<std::string> feature_names) {
  BaseModel model;
  model.kind = BaseKind::frozen;
  model.task = task;
  model.num_classes = num_classes;
  model.feature_names = std::move(feature_names);
  for (const auto& [id, p] : frozen.probs)
    if (std::abs(p.sum() - 1.0) > 1e-6 || (p.array() < 0).any())
      throw DataError("frozen predictions: probabilities for row " + std::to_string(id) + " are not on the simplex");
  model.frozen = std::move(frozen);
  return model;
}

BasePrediction predict(const BaseModel& model, const Eigen::MatrixXd& x, std::span<const std::int64_t> row_ids) {
  BasePrediction out;
  if (model.kind != BaseKind::frozen && x.cols() != static_cast<Index>(model.feature_names.size()))
    throw DataError("predict: matrix has " + std::to_string(x.cols()) + " columns, model expects " +
                    std::to_string(model.feature_names.size()));
  switch (model.kind) {
    case BaseKind::linear:
    case BaseKind::ridge:
      out.values = (x * model.coef).array() + model.intercept;
      break;
    case BaseKind::logistic:
      out.probs = softmax_rows((x * model.weights).rowwise() + model.intercepts.transpose());
      break;
    case BaseKind::frozen: {
      if (static_cast<Index>(row_ids.size()) != x.rows())
        throw DataError("predict: frozen predictions need one row id per query row");
      const auto& f = *model.frozen;
      const Index n = x.rows();
      if (model.task == Task::regression) {
        out.values.resize(n);
        for (Index i = 0; i < n; ++i) {
          const auto it = f.values.find(row_ids[static_cast<std::size_t>(i)]);
          if (it == f.values.end())
            throw DataError("frozen predictions: no entry for row id " + std::to_string(row_ids[static_cast<std::size_t>(i)]));
          out.values(i) = it->second;
        }
      } else {
        out.probs.resize(n, model.num_classes);
        for (Index i = 0; i < n; ++i) {
          const auto it = f.probs.find(row_ids[static_cast<std::size_t>(i)]);
          if (it == f.probs.end())
            throw DataError("frozen predictions: no probabilities for row id " +
                            std::to_string(row_ids[static_cast<std::size_t>(i)]));
          out.probs.row(i) = it->second.transpose();
        }
      }
      break;
    }
  }
  if (model.task == Task::classification) {
    const auto labels = argmax_labels(out.probs);
    out.values = Eigen::Map<const Eigen::VectorXi>(labels.data(), static_cast<Index>(labels.size())).cast<double>();
  }
  if (!out.values.allFinite()) throw DataError("predict: base model produced non-finite output");
  return out;
}

FrozenPredictions load_frozen_predictions(const std::filesystem::path& csv, Task task, int num_classes) {
  const CsvTable table = read_csv(csv);
  const std::size_t need = task == Task::classification ? 2 + static_cast<std::size_t>(num_classes) : 2;
  if (table.header.size() < need)
    throw DataError("frozen predictions " + csv.string() + ": expected at least " + std::to_string(need) + " columns");
  FrozenPredictions out;
  out.provenance = csv.string();
  for (const auto& row : table.rows) {
    if (row.size() < need) throw DataError("frozen predictions: short row in " + csv.string());
    const std::int64_t id = std::stoll(row[0]);
    out.values[id] = std::stod(row[1]);
    if (task == Task::classification) {
      Eigen::VectorXd p(num_classes);
      for (int c = 0; c < num_classes; ++c) p(c) = std::stod(row[2 + static_cast<std::size_t>(c)]);
      out.probs[id] = p;
    }
  }
  return out;
}

void save_frozen_predictions(const FrozenPredictions& frozen, const std::filesystem::path& csv, int num_classes) {
  CsvTable table;
  table.header = {"row_id", "prediction"};
  for (int c = 1; c <= num_classes; ++c) table.header.push_back("prob_" + std::to_string(c));
  for (const auto& [id, v] : frozen.values) {
    std::vector<std::string> row{std::to_string(id)};
    std::ostringstream os;
    os.precision(17);
    os << v;
    row.push_back(os.str());
    if (num_classes > 0) {
      const auto& p = frozen.probs.at(id);
      for (int c = 0; c < num_classes; ++c) {
        std::ostringstream ps;
        ps.precision(17);
        ps << p(c);
        row.push_back(ps.str());
      }
    }
    table.rows.push_back(std::move(row));
  }
  write_csv(csv, table);
}

}  // namespace rescorr
