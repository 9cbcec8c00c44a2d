#include "rescorr/ensemble.hpp"

#include <sstream>

namespace rescorr {

Eigen::MatrixXd class_probs(const Eigen::MatrixXd& scores, double tau) {
  if (!(tau > 0)) throw ConfigError("class_probs: temperature must be positive");
  Eigen::MatrixXd z = scores / tau;
  z = z.colwise() - z.rowwise().maxCoeff();
  z = z.array().max(-kExpClamp).exp().matrix();
  z.array().colwise() /= z.rowwise().sum().array();
  return z;
}

double target_range_tau(const Eigen::VectorXd& y) {
  const double range = y.maxCoeff() - y.minCoeff();
  if (!(range > 0)) {
    log_warn("score scale: constant training target, tau falls back to 0.2");
    return 0.2;
  }
  return 0.2 * range;
}

double cross_entropy(std::span<const int> labels, const Eigen::MatrixXd& probs) {
  double total = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    total -= std::log(std::max(probs(static_cast<Index>(i), labels[i] - 1), 1e-15));
  return total / static_cast<double>(labels.size());
}

EvalReport mechanism_delta(const EnsembleModel& model, const Mechanism& m, const Eigen::MatrixXd& x) {
  return evaluate(m.formulas.at(0), x, model.correction_bounds());
}

ClassOutput mechanism_probs(const Mechanism& m, const Eigen::MatrixXd& x, double tau_k) {
  const ScoreReport s = multiclass_scores(m.formulas, x);
  ClassOutput out;
  out.finite = s.finite;
  out.rejected = s.rejected;
  Eigen::MatrixXd scores = s.scores;
  for (Index i = 0; i < scores.rows(); ++i)
    if (!s.finite(i)) scores.row(i).setZero();
  out.q = class_probs(scores, tau_k);
  return out;
}

Prediction predict(const EnsembleModel& model, const Eigen::MatrixXd& x, std::span<const std::int64_t> row_ids) {
  Prediction out;
  const BasePrediction base = predict(model.base, x, row_ids);
  const Index n = x.rows();
  const Index m = static_cast<Index>(model.mechanisms.size());
  out.base_values = base.values;
  out.base_probs = base.probs;
  out.alpha = Eigen::MatrixXd::Zero(n, m);
  out.confidence = Eigen::MatrixXd::Zero(n, m);
  out.fallback = Eigen::Array<bool, Eigen::Dynamic, 1>::Constant(n, true);
  if (model.task == Task::regression) out.delta = Eigen::MatrixXd::Zero(n, m);

  std::vector<std::optional<Eigen::VectorXd>> pool_conf(model.pools.size());
  Eigen::VectorXd p(m);
  for (Index k = 0; k < m; ++k) {
    const Mechanism& mech = model.mechanisms[static_cast<std::size_t>(k)];
    p(k) = mech.p;
    auto& conf = pool_conf.at(mech.pool);
    if (!conf) conf = confidence(query_distances(model.pools[mech.pool], x).array(), model.hyper.gamma).matrix();
    out.confidence.col(k) = *conf;
    Eigen::Array<bool, Eigen::Dynamic, 1> finite;
    if (model.task == Task::regression) {
      EvalReport r = mechanism_delta(model, mech, x);
      finite = r.finite;
      out.delta.col(k) = finite.select(r.output.array(), 0.0).matrix();
    } else {
      ClassOutput c = mechanism_probs(mech, x, mech.tau_k);
      finite = c.finite;
      out.q.push_back(std::move(c.q));
    }
    for (Index i = 0; i < n; ++i) {
      if (!finite(i)) {
        out.confidence(i, k) = 0.0;
        ++out.query_rejections;
      }
    }
  }
  if (out.query_rejections > 0)
    log_info("predict: " + std::to_string(out.query_rejections) + " mechanism evaluations rejected at query time");

  for (Index i = 0; i < n; ++i) {
    const auto a = attention(p, out.confidence.row(i).transpose(), model.hyper.p_min);
    if (!a) continue;
    out.alpha.row(i) = a->transpose();
    out.fallback(i) = false;
  }

  if (model.task == Task::regression) {
    out.values = base.values + (out.alpha.cwiseProduct(out.delta)).rowwise().sum();
    // Clip to the output bounds, but never beyond where the base prediction already sits.
    for (Index i = 0; i < n; ++i) {
      const double lo = std::min(model.bounds.lo, base.values(i));
      const double hi = std::max(model.bounds.hi, base.values(i));
      out.values(i) = std::clamp(out.values(i), lo, hi);
    }
  } else {
    out.probs = base.probs;
    for (Index i = 0; i < n; ++i) {
      if (out.fallback(i)) continue;
      Eigen::RowVectorXd mix = Eigen::RowVectorXd::Zero(model.num_classes);
      for (Index k = 0; k < m; ++k) mix += out.alpha(i, k) * out.q[static_cast<std::size_t>(k)].row(i);
      out.probs.row(i) = model.hyper.beta * base.probs.row(i) + (1.0 - model.hyper.beta) * mix;
    }
    const auto labels = argmax_labels(out.probs);
    out.values = Eigen::Map<const Eigen::VectorXi>(labels.data(), n).cast<double>();
  }
  return out;
}

Prediction predict_raw(const EnsembleModel& model, const Eigen::MatrixXd& x_raw, std::span<const std::int64_t> row_ids) {
  Prediction out = predict(model, apply_scaler(model.input_scaler, x_raw), row_ids);
  if (model.task == Task::regression) {
    out.values = invert_scaler(model.target_scaler, out.values);
    out.base_values = invert_scaler(model.target_scaler, out.base_values);
    if (model.target_scaler.kind != ScalerKind::identity) {
      const double s = model.target_scaler.degenerate.empty() || !model.target_scaler.degenerate[0]
                           ? model.target_scaler.scale(0)
                           : 0.0;
      const double width = model.target_scaler.kind == ScalerKind::minmax010 ? 0.98 : 1.0;
      out.delta *= s / width;
    }
  }
  return out;
}

TuneReport tune(EnsembleModel& model, const Eigen::MatrixXd& x_val, std::span<const int> labels_val,
                std::span<const std::int64_t> row_ids_val, const TuneGrid& grid_in) {
  TuneGrid grid = grid_in;
  std::sort(grid.beta.begin(), grid.beta.end());
  std::sort(grid.tau_k.begin(), grid.tau_k.end());
  if (grid.beta.empty() || grid.tau_k.empty()) throw ConfigError("tune: empty grid");
  TuneReport report;
  report.beta = model.hyper.beta;
  if (model.task == Task::regression) return report;
  if (labels_val.empty()) throw DataError("tune: empty validation split");
  if (static_cast<Index>(labels_val.size()) != x_val.rows()) throw DataError("tune: label count does not match rows");

  const bool single_class =
      std::all_of(labels_val.begin(), labels_val.end(), [&](int l) { return l == labels_val.front(); });
  for (auto& mech : model.mechanisms) {
    std::vector<double> eces;
    if (single_class) {
      log_info("tune: single-class validation split, tau_k defaults to 1.0 for agent " + std::to_string(mech.agent));
      mech.tau_k = 1.0;
    } else {
      double best = std::numeric_limits<double>::infinity();
      double best_tau = grid.tau_k.front();
      for (double tau : grid.tau_k) {
        const double e = expected_calibration_error(labels_val, mechanism_probs(mech, x_val, tau).q);
        eces.push_back(e);
        if (e < best) {
          best = e;
          best_tau = tau;
        }
      }
      mech.tau_k = best_tau;
    }
    report.tau_k.push_back(mech.tau_k);
    report.tau_eces.push_back(std::move(eces));
  }

  double best = std::numeric_limits<double>::infinity();
  double best_beta = grid.beta.front();
  for (double beta : grid.beta) {
    model.hyper.beta = beta;
    const double ce = cross_entropy(labels_val, predict(model, x_val, row_ids_val).probs);
    report.beta_losses.push_back(ce);
    if (ce < best) {
      best = ce;
      best_beta = beta;
    }
  }
  model.hyper.beta = best_beta;
  report.beta = best_beta;
  return report;
}

}  // namespace rescorr
