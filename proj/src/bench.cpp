#include "rescorr/bench.hpp"

#include <json.hpp>

#include <map>
#include <random>
#include <sstream>

namespace rescorr {

void SyntheticSpec::validate() const {
  if (n < 1 || d < 7) throw ConfigError("synthetic spec: need n >= 1 and d >= 7 (X7 is referenced)");
  if (noise_std < 0) throw ConfigError("synthetic spec: negative noise");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw ConfigError("synthetic spec: split fractions must sum to 1");
}

Eigen::VectorXd synthetic_linear_term(const SyntheticSpec& s, const Eigen::MatrixXd& x) {
  return s.a1 * x.col(0) + s.a2 * x.col(1);
}

Eigen::VectorXd synthetic_sigmoid_term(const SyntheticSpec& s, const Eigen::MatrixXd& x) {
  const Eigen::ArrayXd z = s.b1 * x.col(0).array() * x.col(2).array() - s.b0;
  return s.a3 * z.unaryExpr([](double v) { return sigmoid(v); }).matrix();
}

Eigen::VectorXd synthetic_sin_term(const SyntheticSpec& s, const Eigen::MatrixXd& x) {
  return s.a4 * (x.col(4).array() * x.col(6).array()).sin().matrix();
}

Eigen::VectorXd synthetic_truth(const SyntheticSpec& s, const Eigen::MatrixXd& x) {
  return synthetic_linear_term(s, x) + synthetic_sigmoid_term(s, x) + synthetic_sin_term(s, x);
}

namespace {

Eigen::MatrixXd uniform_matrix(Index n, Index d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) x(i, j) = u(rng);
  return x;
}

double variance(const Eigen::VectorXd& v) { return (v.array() - v.mean()).square().mean(); }

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd x = uniform_matrix(spec.n, spec.d, rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::VectorXd eps(spec.n);
  for (Index i = 0; i < spec.n; ++i) eps(i) = spec.noise_std * noise(rng);
  SyntheticData out;
  out.noiseless = synthetic_truth(spec, x);
  std::vector<std::string> names;
  for (Index j = 0; j < spec.d; ++j) names.push_back("X" + std::to_string(j + 1));
  out.data = make_dataset(std::move(x), std::move(names), out.noiseless + eps);
  SplitSpec split;
  split.train = spec.train;
  split.val = spec.val;
  split.test = spec.test;
  split.seed = seed;
  out.split = make_split(out.data, split);
  return out;
}

VarianceBudget variance_budget(const SyntheticSpec& spec, Index n_mc, std::uint64_t seed) {
  if (n_mc < 2) throw ConfigError("variance_budget: need at least two draws");
  std::mt19937_64 rng(seed);
  VarianceBudget b;
  // Chunked so 1e6 x d draws never sit in memory at once.
  const Index chunk = 100000;
  double sum[4] = {0, 0, 0, 0}, sq[4] = {0, 0, 0, 0};
  for (Index done = 0; done < n_mc; done += chunk) {
    const Index m = std::min(chunk, n_mc - done);
    const Eigen::MatrixXd x = uniform_matrix(m, spec.d, rng);
    const Eigen::VectorXd terms[4] = {synthetic_linear_term(spec, x), synthetic_sigmoid_term(spec, x),
                                      synthetic_sin_term(spec, x), synthetic_truth(spec, x)};
    for (int t = 0; t < 4; ++t) {
      sum[t] += terms[t].sum();
      sq[t] += terms[t].squaredNorm();
    }
  }
  const double n = static_cast<double>(n_mc);
  auto var = [&](int t) { return sq[t] / n - (sum[t] / n) * (sum[t] / n); };
  b.linear = var(0);
  b.sigmoid = var(1);
  b.sin = var(2);
  b.signal = var(3);
  b.noise = spec.noise_std * spec.noise_std;
  b.ceiling = b.signal / (b.signal + b.noise);
  return b;
}

SyntheticBaseline synthetic_baseline(const SyntheticSpec& spec, std::uint64_t seed) {
  const SyntheticData sd = generate_synthetic(spec, seed);
  const BaseModel lin = fit_base(BaseKind::linear, sd.data, sd.split.train);
  const Eigen::MatrixXd xt = sd.data.feature_rows(sd.split.test);
  const Eigen::VectorXd yt = sd.data.target_rows(sd.split.test);
  const Eigen::VectorXd linear = predict(lin, xt).values;
  // Oracle correction: exact noise-free response minus the linear fit, added back to the fit.
  const Eigen::VectorXd oracle = linear + (synthetic_truth(spec, xt) - linear);
  SyntheticBaseline out;
  out.seed = seed;
  out.linear_r2 = r2_score(yt, linear);
  out.oracle_r2 = r2_score(yt, oracle);
  out.oracle_residual_var = variance(yt - oracle);
  return out;
}

// ---------------------------------------------------------------------------
// Transfer

std::string to_string(TransferAblation a) {
  switch (a) {
    case TransferAblation::averaged_blend: return "averaged_blend";
    case TransferAblation::per_formula_blend: return "per_formula_blend";
    case TransferAblation::averaged_formula_only: return "averaged_formula_only";
    case TransferAblation::per_formula_only: return "joint";
  }
  return "averaged_blend";
}

TransferAblation transfer_ablation_from_string(std::string_view t) {
  if (t == "averaged_blend" || t == "headline") return TransferAblation::averaged_blend;
  if (t == "per_formula_blend" || t == "per_formula") return TransferAblation::per_formula_blend;
  if (t == "averaged_formula_only" || t == "formula_only") return TransferAblation::averaged_formula_only;
  if (t == "joint" || t == "per_formula_only") return TransferAblation::per_formula_only;
  throw ConfigError("unknown transfer ablation '" + std::string(t) + "'");
}

MlSource ml_source_from_string(std::string_view t) {
  if (t == "transfer") return MlSource::transfer;
  if (t == "retrain") return MlSource::retrain;
  if (t == "auto") return MlSource::automatic;
  throw ConfigError("unknown ml_source '" + std::string(t) + "' (transfer | retrain | auto)");
}

namespace {

struct PreparedPlate {
  Split split;
  ScalerStats x_scaler;  // minmax010 on train features
  ScalerStats y_scaler;  // minmax01 on train targets
  BaseModel ml;          // linear on scaled train data
  double y_train_mean = 0;
};

Split transfer_split(const Plate& p, const TransferConfig& c) {
  SplitSpec s;
  s.train = 0.8;
  s.val = 0.0;
  s.test = 0.2;
  s.seed = c.split_seed;
  s.strategy = SplitStrategy::quantile_stratified;
  s.q_bins = c.q_bins;
  return make_split(p.data, s);
}

PreparedPlate prepare(const Plate& p, const TransferConfig& c) {
  PreparedPlate out;
  out.split = transfer_split(p, c);
  out.x_scaler = fit_scaler(p.data.features, out.split.train, ScalerKind::minmax010, p.id + ":train");
  Eigen::MatrixXd y(p.data.rows(), 1);
  y.col(0) = p.data.targets;
  out.y_scaler = fit_scaler(y, out.split.train, ScalerKind::minmax01, p.id + ":train");
  Dataset scaled = p.data;
  scaled.features = apply_scaler(out.x_scaler, p.data.features);
  scaled.targets = apply_scaler(out.y_scaler, p.data.targets);
  out.ml = fit_base(BaseKind::linear, scaled, out.split.train);
  out.y_train_mean = scaled.target_rows(out.split.train).mean();
  return out;
}

struct PairOutcome {
  double delta_mae = 0;
  double delta_r2 = 0;
};

}  // namespace

double source_delta_r2(const Plate& plate, const std::vector<FormulaAst>& formulas, const TransferConfig& config) {
  const PreparedPlate pp = prepare(plate, config);
  const Eigen::MatrixXd x = apply_scaler(pp.x_scaler, plate.data.feature_rows(pp.split.test));
  const Eigen::VectorXd y = apply_scaler(pp.y_scaler, plate.data.target_rows(pp.split.test));
  const Eigen::VectorXd ml = predict(pp.ml, x).values;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.rows());
  for (const auto& f : formulas) {
    const EvalReport r = evaluate(f, x, OutputBounds{0.0, 1.0});
    if (r.rejected) return -std::numeric_limits<double>::infinity();
    mean += r.output;
  }
  mean /= static_cast<double>(formulas.size());
  const Eigen::VectorXd post = config.beta_transfer * ml + (1.0 - config.beta_transfer) * mean;
  return r2_score(y, post) - r2_score(y, ml);
}

TransferReport transfer_eval(std::span<const Plate> plates, std::span<const SourceRun> sources, const TransferConfig& config) {
  if (!(config.beta_transfer >= 0 && config.beta_transfer <= 1)) throw ConfigError("beta_transfer must lie in [0, 1]");
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < plates.size(); ++i) {
    if (by_id.count(plates[i].id)) throw DataError("duplicate plate id '" + plates[i].id + "'");
    by_id[plates[i].id] = i;
  }
  for (const auto& p : plates)
    if (p.data.feature_names != plates.front().data.feature_names) throw DataError("plates do not share a schema");

  std::vector<std::optional<PreparedPlate>> prepared(plates.size());
  auto prep = [&](std::size_t i) -> const PreparedPlate& {
    if (!prepared[i]) prepared[i] = prepare(plates[i], config);
    return *prepared[i];
  };

  TransferReport report;
  report.sources_total = sources.size();
  for (const auto& src : sources) {
    const bool passes = src.delta_r2_vs_ml > 0;
    if (config.filter == SourceFilter::filtered && !passes) continue;
    if (config.filter == SourceFilter::below_filter && passes) continue;
    if (src.formulas.empty()) continue;
    ++report.sources_used;
    const auto src_it = by_id.find(src.plate);
    const bool src_known = src_it != by_id.end();

    for (std::size_t t = 0; t < plates.size(); ++t) {
      const Plate& target = plates[t];
      if (src_known && src_it->second == t && !config.include_self) continue;
      std::size_t ml_plate = t;
      if (config.ml_source == MlSource::transfer || (config.ml_source == MlSource::automatic && src_known)) {
        if (!src_known) throw ConfigError("ml_source=transfer needs a source plate id for run '" + src.id + "'");
        ml_plate = src_it->second;
      }
      const PreparedPlate& mp = prep(ml_plate);
      const PreparedPlate& tp = prep(t);
      const Eigen::MatrixXd x = apply_scaler(mp.x_scaler, target.data.feature_rows(tp.split.test));
      const Eigen::VectorXd y = apply_scaler(mp.y_scaler, target.data.target_rows(tp.split.test));
      const Eigen::VectorXd ml = predict(mp.ml, x).values;
      const double mae_ml = mean_absolute_error(y, ml);
      const double r2_ml = r2_score(y, ml);

      TransferRecord base;
      base.source_run = src.id;
      base.source_plate = src.plate;
      base.target_plate = target.id;
      base.cohort = target.cohort;
      base.relation = !src_known ? "unknown" : plates[src_it->second].cohort == target.cohort ? "within" : "across";

      std::vector<Eigen::VectorXd> outputs;
      std::string failure;
      for (const auto& f : src.formulas) {
        EvalReport r;
        try {
          r = evaluate(f, x, OutputBounds{0.0, 1.0});
        } catch (const DataError& e) {
          r.rejected = true;
          r.rejection_reason = e.what();
        }
        if (r.rejected) failure = r.rejection_reason;
        outputs.push_back(std::move(r.output));
      }
      auto finish = [&](TransferRecord rec, const Eigen::VectorXd& yhat) {
        rec.delta_mae = mae_ml - mean_absolute_error(y, yhat);
        rec.delta_r2 = r2_score(y, yhat) - r2_ml;
        rec.improved = rec.delta_mae > 0;
        report.records.push_back(std::move(rec));
      };
      const double beta = config.beta_transfer;
      const bool per_formula = config.ablation == TransferAblation::per_formula_blend ||
                               config.ablation == TransferAblation::per_formula_only;
      const bool blend_ml = config.ablation == TransferAblation::averaged_blend ||
                            config.ablation == TransferAblation::per_formula_blend;
      if (per_formula) {
        for (std::size_t m = 0; m < outputs.size(); ++m) {
          TransferRecord rec = base;
          rec.formula = static_cast<int>(m);
          const EvalReport check = evaluate(src.formulas[m], x, OutputBounds{0.0, 1.0});
          if (check.rejected) {
            rec.failed = true;
            rec.failure_reason = check.rejection_reason;
            report.records.push_back(std::move(rec));
            continue;
          }
          const Eigen::VectorXd& f = outputs[m];
          finish(rec, blend_ml ? Eigen::VectorXd(beta * ml + (1 - beta) * f) : f);
        }
        continue;
      }
      if (!failure.empty()) {
        TransferRecord rec = base;
        rec.failed = true;
        rec.failure_reason = failure;
        report.records.push_back(std::move(rec));
        continue;
      }
      Eigen::VectorXd mean = Eigen::VectorXd::Zero(x.rows());
      for (const auto& o : outputs) mean += o;
      mean /= static_cast<double>(outputs.size());
      Eigen::VectorXd yhat;
      if (config.residual_pilot)
        yhat = ml.array() + 0.5 * (mean.array() - mp.y_train_mean);
      else
        yhat = blend_ml ? Eigen::VectorXd(beta * ml + (1 - beta) * mean) : mean;
      finish(base, yhat);
    }
  }

  auto aggregate = [&](std::string_view relation) {
    CohortAggregate a;
    for (const auto& r : report.records) {
      if (r.relation != relation) continue;
      ++a.pairs;
      if (r.failed) {
        ++a.failed;
        continue;
      }
      ++a.evaluated;
      a.improving += r.improved ? 1 : 0;
      a.mean_delta_mae += r.delta_mae;
      a.mean_delta_r2 += r.delta_r2;
    }
    if (a.evaluated) {
      a.pct_improving = 100.0 * static_cast<double>(a.improving) / static_cast<double>(a.evaluated);
      a.mean_delta_mae /= static_cast<double>(a.evaluated);
      a.mean_delta_r2 /= static_cast<double>(a.evaluated);
    }
    return a;
  };
  report.within = aggregate("within");
  report.across = aggregate("across");
  return report;
}

void write_transfer_csv(const TransferReport& report, const std::filesystem::path& csv) {
  CsvTable t;
  t.header = {"source_run", "source_plate", "target_plate", "cohort", "relation", "formula",
              "delta_mae", "delta_r2", "improved", "failed", "failure_reason"};
  for (const auto& r : report.records) {
    std::ostringstream mae, r2;
    mae.precision(10);
    r2.precision(10);
    mae << r.delta_mae;
    r2 << r.delta_r2;
    t.rows.push_back({r.source_run, r.source_plate, r.target_plate, r.cohort, r.relation,
                      r.formula < 0 ? "mean" : std::to_string(r.formula), mae.str(), r2.str(),
                      r.improved ? "1" : "0", r.failed ? "1" : "0", r.failure_reason});
  }
  write_csv(csv, t);
}

std::string transfer_aggregate_json(const TransferReport& report, const TransferConfig& config) {
  auto agg = [](const CohortAggregate& a) {
    return nlohmann::json{{"pairs", a.pairs},
                          {"evaluated", a.evaluated},
                          {"failed", a.failed},
                          {"improving", a.improving},
                          {"pct_improving", a.pct_improving},
                          {"mean_delta_mae", a.mean_delta_mae},
                          {"mean_delta_r2", a.mean_delta_r2}};
  };
  const char* filter = config.filter == SourceFilter::filtered     ? "filtered"
                       : config.filter == SourceFilter::unfiltered ? "unfiltered"
                                                                    : "below_filter";
  nlohmann::json j = {{"ablation", to_string(config.ablation)},
                      {"filter", filter},
                      {"beta_transfer", config.beta_transfer},
                      {"residual_pilot", config.residual_pilot},
                      {"sources_used", report.sources_used},
                      {"sources_total", report.sources_total},
                      {"within", agg(report.within)},
                      {"across", agg(report.across)}};
  return j.dump(2);
}

// ---------------------------------------------------------------------------

namespace {

std::string lit(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

// Cohort-A response written in the formula grammar over MinMaxScaler010 features,
// mapped to the plate's [0, 1] target scale. The sin term has no DSL form and is left out.
std::string response_formula(const SyntheticSpec& s, const ScalerStats& xs, const ScalerStats& ys) {
  auto raw = [&](int j) {
    // invert x' = 0.01 + 0.98 (x - lo) / scale
    return "((X" + std::to_string(j + 1) + " - 0.01) * " + lit(xs.scale(j) / 0.98) + " + " + lit(xs.location(j)) + ")";
  };
  const std::string y = lit(s.a1) + " * " + raw(0) + " + " + lit(s.a2) + " * " + raw(1) + " + " + lit(s.a3) +
                        " * sigmoid(" + lit(s.b1) + " * " + raw(0) + " * " + raw(2) + " - " + lit(s.b0) + ")";
  return "(" + y + " - " + lit(ys.location(0)) + ") / " + lit(ys.scale(0));
}

}  // namespace

CohortPlates make_cohort_plates(const CohortPlateSpec& spec, const TransferConfig& config) {
  CohortPlates out;
  for (int cohort = 0; cohort < 2; ++cohort) {
    for (int i = 0; i < spec.plates_per_cohort; ++i) {
      SyntheticSpec s = spec.base;
      s.n = spec.rows_per_plate;
      if (cohort == 1) {
        s.b1 = 0.5;
        s.b0 = -1.2;
      }
      const std::uint64_t seed = spec.seed + static_cast<std::uint64_t>(cohort * 1000 + i);
      Plate p;
      p.cohort = cohort == 0 ? "A" : "B";
      p.id = "plate_" + p.cohort + std::to_string(i + 1);
      p.data = generate_synthetic(s, seed).data;
      out.plates.push_back(std::move(p));
    }
  }
  std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int src : spec.source_plates) {
    if (src < 0 || src >= spec.plates_per_cohort) throw ConfigError("source plate index out of range");
    const Plate& plate = out.plates[static_cast<std::size_t>(src)];
    const Split split = transfer_split(plate, config);
    const ScalerStats xs = fit_scaler(plate.data.features, split.train, ScalerKind::minmax010);
    Eigen::MatrixXd y(plate.data.rows(), 1);
    y.col(0) = plate.data.targets;
    const ScalerStats ys = fit_scaler(y, split.train, ScalerKind::minmax01);
    for (int r = 0; r < spec.runs_per_source; ++r) {
      SourceRun run;
      run.id = plate.id + "_run" + std::to_string(r + 1);
      run.plate = plate.id;
      for (int f = 0; f < spec.formulas_per_run; ++f) {
        SyntheticSpec s = spec.base;
        auto wobble = [&](double v) { return v * (1.0 + spec.coefficient_jitter * jitter(rng)); };
        s.a1 = wobble(s.a1);
        s.a2 = wobble(s.a2);
        s.a3 = wobble(s.a3);
        s.b1 = wobble(s.b1);
        s.b0 = wobble(s.b0);
        run.formulas.push_back(parse(response_formula(s, xs, ys), plate.data.feature_names));
      }
      run.delta_r2_vs_ml = source_delta_r2(plate, run.formulas, config);
      out.sources.push_back(std::move(run));
    }
  }
  return out;
}

std::vector<Plate> plates_from_csv(const std::filesystem::path& csv, std::string_view plate_column,
                                   std::string_view cohort_column) {
  const CsvTable t = read_csv(csv);
  auto col = [&](std::string_view name) -> std::ptrdiff_t {
    if (name.empty()) return -1;
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it == t.header.end()) throw DataError("plates: column '" + std::string(name) + "' not found in " + csv.string());
    return it - t.header.begin();
  };
  const auto pc = col(plate_column);
  const auto cc = col(cohort_column);
  if (pc < 0) throw ConfigError("plates: a plate-id column is required");
  std::vector<std::size_t> feature_cols;
  for (std::size_t j = 0; j + 1 < t.header.size(); ++j)
    if (static_cast<std::ptrdiff_t>(j) != pc && static_cast<std::ptrdiff_t>(j) != cc) feature_cols.push_back(j);
  const std::size_t target_col = t.header.size() - 1;
  if (static_cast<std::ptrdiff_t>(target_col) == pc || static_cast<std::ptrdiff_t>(target_col) == cc)
    throw DataError("plates: the last column must be the target");

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> rows;
  std::map<std::string, std::string> cohorts;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& id = t.rows[i].at(static_cast<std::size_t>(pc));
    if (!rows.count(id)) order.push_back(id);
    rows[id].push_back(i);
    if (cc >= 0) cohorts[id] = t.rows[i].at(static_cast<std::size_t>(cc));
  }
  std::vector<std::string> names;
  for (auto j : feature_cols) names.push_back(t.header[j]);
  std::vector<Plate> out;
  for (const auto& id : order) {
    const auto& r = rows[id];
    Eigen::MatrixXd x(static_cast<Index>(r.size()), static_cast<Index>(feature_cols.size()));
    Eigen::VectorXd y(static_cast<Index>(r.size()));
    for (std::size_t i = 0; i < r.size(); ++i) {
      for (std::size_t j = 0; j < feature_cols.size(); ++j)
        x(static_cast<Index>(i), static_cast<Index>(j)) = std::stod(t.rows[r[i]].at(feature_cols[j]));
      y(static_cast<Index>(i)) = std::stod(t.rows[r[i]].at(target_col));
    }
    out.push_back({id, cohorts.count(id) ? cohorts[id] : std::string(), make_dataset(std::move(x), names, std::move(y))});
  }
  return out;
}

}  // namespace rescorr
