#include "rescorr/agent.hpp"

#include <numeric>
#include <sstream>

namespace rescorr {

void AgentConfig::validate() const {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (T < 0) throw ConfigError("T must be non-negative");
  if (B < 1) throw ConfigError("B must be at least 1");
  if (!(tau_fail > 0 && tau_fail < 1)) throw ConfigError("tau_fail must lie in (0, 1)");
  if (p_min < 0) throw ConfigError("p_min must be non-negative");
  if (!(kappa > 0 && kappa <= 1)) throw ConfigError("kappa must lie in (0, 1]");
  if (!(gamma_s > 0)) throw ConfigError("gamma_s must be positive");
  if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  if (retry_budget < 0) throw ConfigError("retry_budget must be non-negative");
  if (!(beta_train >= 0 && beta_train <= 1)) throw ConfigError("beta must lie in [0, 1]");
  if (!(tau_k_train > 0)) throw ConfigError("tau_k must be positive");
  if (tau && !(*tau > 0)) throw ConfigError("tau must be positive");
}

std::size_t count_calls(int K, int T, Index pool_size, Index B) {
  const auto k = static_cast<std::size_t>(K);
  const auto batches = static_cast<std::size_t>((pool_size + B - 1) / B);
  return k * batches + k * (1 + 2 * static_cast<std::size_t>(T));
}

std::vector<std::string> anonymized_names(std::size_t d) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < d; ++j) out.push_back("feat_" + std::to_string(j));
  return out;
}

namespace {
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
}  // namespace

std::string substitute_names(std::string_view text, std::span<const std::string> names,
                             std::span<const std::string> aliases) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return names[a].size() > names[b].size(); });
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    bool replaced = false;
    if (i == 0 || !ident_char(text[i - 1])) {
      for (std::size_t o : order) {
        const std::string& n = names[o];
        if (n.empty() || text.compare(i, n.size(), n) != 0) continue;
        const std::size_t end = i + n.size();
        if (end < text.size() && ident_char(text[end]) && ident_char(n.back())) continue;
        out += aliases[o];
        i = end;
        replaced = true;
        break;
      }
    }
    if (!replaced) out += text[i++];
  }
  return out;
}

AugmentedContext build_context(const Dataset& data, const HighResidualPool& pool, const BaseModel& base,
                               const AgentConfig& config) {
  AugmentedContext ctx;
  const auto& source = data.feature_names;
  ctx.schema = config.anonymize_features ? anonymized_names(source.size()) : source;
  auto anon = [&](std::string_view s) {
    return config.anonymize_features ? substitute_names(s, source, ctx.schema) : std::string(s);
  };
  for (std::size_t j = 0; j < source.size(); ++j) {
    ctx.features += "- " + ctx.schema[j];
    const auto it = config.feature_descriptions.find(source[j]);
    if (it != config.feature_descriptions.end() && !it->second.empty()) ctx.features += ": " + anon(it->second);
    ctx.features += '\n';
  }
  if (config.include_domain_context && !config.domain_context.empty())
    ctx.domain = "Domain context: " + anon(config.domain_context) + "\n";

  const Eigen::VectorXd importance = base.feature_importance();
  if (importance.size() == static_cast<Index>(source.size())) {
    std::ostringstream os;
    os.precision(4);
    os << "Base model (" << to_string(base.kind) << ") feature importance:";
    for (std::size_t j = 0; j < source.size(); ++j) os << ' ' << ctx.schema[j] << '=' << importance(static_cast<Index>(j));
    os << '\n';
    ctx.model_digest = os.str();
  }

  ctx.batches = score_examples(pool, config.B);
  for (const auto& batch : ctx.batches) ctx.batch_tables.push_back(format_table(pool_table(pool, ctx.schema, batch)));
  const IndexList top = rank_by_magnitude(pool.r);
  const std::size_t shown = std::min<std::size_t>(top.size(), std::max<std::size_t>(config.failure_rows, 1));
  ctx.pool_overview = format_table(pool_table(pool, ctx.schema, std::span<const Index>(top.data(), shown)));
  return ctx;
}

int MechanismState::best() const {
  int best = -1;
  for (std::size_t i = 0; i < log.size(); ++i)
    if (best < 0 || log[i].loss < log[static_cast<std::size_t>(best)].loss) best = static_cast<int>(i);
  return best;
}

std::vector<Failure> failure_set(const Dataset& data, std::span<const Index> rows, const Eigen::VectorXd& y_hat,
                                 const Eigen::MatrixXd& probs, double tau_fail) {
  std::vector<Failure> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index row = rows[i];
    const Index ii = static_cast<Index>(i);
    if (data.task == Task::regression) {
      const double err = std::abs(y_hat(ii) - data.targets(row));
      if (err > tau_fail) out.push_back({row, data.targets(row), y_hat(ii), err});
    } else {
      const int y = data.label(row);
      const double py = probs(ii, y - 1);
      if (py < 1.0 - tau_fail) out.push_back({row, static_cast<double>(y), py, 1.0 - py});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Failure& a, const Failure& b) { return a.error > b.error; });
  return out;
}

std::string format_failures(const Dataset& data, std::span<const std::string> schema,
                            const std::vector<Failure>& failures, std::size_t max_rows) {
  if (failures.empty()) return "(no failures: every training row is within the failure threshold)\n";
  CsvTable t;
  t.header.assign(schema.begin(), schema.end());
  t.header.insert(t.header.end(), {"y", "y_hat", "error"});
  const std::size_t n = std::min(failures.size(), max_rows);
  auto fmt = [](double v) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed << v;
    return os.str();
  };
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> row;
    for (Index j = 0; j < data.cols(); ++j) row.push_back(fmt(data.features(failures[i].row, j)));
    row.push_back(fmt(failures[i].y));
    row.push_back(fmt(failures[i].y_hat));
    row.push_back(fmt(failures[i].error));
    t.rows.push_back(std::move(row));
  }
  return format_table(t);
}

namespace {

// Per-row outputs of one candidate mechanism on the training rows.
struct CandidateOutput {
  Eigen::VectorXd delta;  // regression
  Eigen::MatrixXd q;      // classification
  bool rejected = false;
  std::string reason;
};

CandidateOutput run_candidate(const EnsembleModel& frame, const std::vector<FormulaAst>& formulas,
                              const Eigen::MatrixXd& x, double tau_k) {
  CandidateOutput out;
  if (frame.task == Task::regression) {
    EvalReport r = evaluate(formulas.at(0), x, frame.correction_bounds());
    out.delta = std::move(r.output);
    out.rejected = r.rejected;
    out.reason = r.rejection_reason;
  } else {
    const ScoreReport s = multiclass_scores(formulas, x);
    out.rejected = s.rejected;
    out.reason = s.rejection_reason;
    if (!s.rejected) out.q = class_probs(s.scores, tau_k);
  }
  return out;
}

}  // namespace

double mechanism_loss(const EnsembleModel& frame, const std::vector<FormulaAst>& formulas, const Eigen::MatrixXd& x,
                      const Eigen::VectorXd& y, const BasePrediction& base, double beta, double tau_k) {
  const CandidateOutput c = run_candidate(frame, formulas, x, tau_k);
  if (c.rejected) return std::numeric_limits<double>::infinity();
  if (frame.task == Task::regression) return (base.values + c.delta - y).squaredNorm() / static_cast<double>(y.size());
  std::vector<int> labels(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < y.size(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(y(i));
  return cross_entropy(labels, blend(base.probs, c.q, beta));
}

double global_score(const EnsembleModel& frame, const std::vector<FormulaAst>& formulas, const Eigen::MatrixXd& x,
                    const Eigen::VectorXd& y, const BasePrediction& base, double beta, double tau_k) {
  const CandidateOutput c = run_candidate(frame, formulas, x, tau_k);
  if (c.rejected) return 0.0;
  if (frame.task == Task::regression) return regression_score(mean_absolute_error(y, base.values + c.delta), frame.hyper.tau);
  std::vector<int> labels(static_cast<std::size_t>(y.size()));
  for (Index i = 0; i < y.size(); ++i) labels[static_cast<std::size_t>(i)] = static_cast<int>(y(i));
  return macro_f1(labels, argmax_labels(blend(base.probs, c.q, beta)), frame.num_classes);
}

namespace {

struct Generation {
  std::string explanation;
  std::vector<FormulaAst> asts;
};

class Trainer {
 public:
  Trainer(const Dataset& data, std::span<const Index> train, const BaseModel& base, const AgentConfig& config,
          LlmProvider& provider)
      : data_(data), train_(train.begin(), train.end()), base_(base), config_(config), provider_(provider) {}

  TrainResult run();

 private:
  std::string call(const std::string& prompt, CallPurpose purpose, int agent, int iteration, bool retry) {
    CompletionRequest req;
    req.prompt = prompt;
    req.model_id = config_.model_id;
    req.temperature = config_.temperature;
    req.max_tokens = config_.max_tokens;
    req.purpose = purpose;
    req.agent = agent;
    req.iteration = iteration;
    req.retry = retry;
    return provider_.complete(req);
  }

  static bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

  // Non-empty response or nullopt after retry_budget retries.
  std::optional<std::string> call_nonempty(const std::string& prompt, CallPurpose purpose, int agent, int iteration) {
    for (int attempt = 0; attempt <= config_.retry_budget; ++attempt) {
      std::string text = call(prompt, purpose, agent, iteration, attempt > 0);
      if (!blank(text)) return text;
      log_info("agent " + std::to_string(agent) + ": empty " + to_string(purpose) + " response");
    }
    return std::nullopt;
  }

  std::string task_instructions() const {
    if (data_.task == Task::regression)
      return "Output the correction as a single line starting with \"Formula:\". Its value is added to the base "
             "model prediction.";
    std::string s = "Output one score formula per class, each on its own line starting with \"Formula[c]:\" for c = 1.." +
                    std::to_string(data_.num_classes) +
                    ". Scores are turned into class probabilities with a softmax and blended with the base model.";
    return s;
  }

  std::map<std::string, std::string> common_values() const {
    std::string list;
    for (std::size_t j = 0; j < ctx_.schema.size(); ++j) list += (j ? ", " : "") + ctx_.schema[j];
    return {{"features", ctx_.features},
            {"domain_block", ctx_.domain},
            {"domain_context", ctx_.domain},
            {"model_digest", ctx_.model_digest},
            {"allowed_operators", allowed_operators_description()},
            {"feature_list", list},
            {"task_instructions", task_instructions()}};
  }

  // Extract, parse, lint and trial-evaluate. Throws FormulaError on failure.
  Generation validate(const std::string& response) {
    Generation g;
    g.explanation = strip_formula_lines(response);
    std::vector<FormulaSource> sources;
    if (data_.task == Task::regression)
      sources.push_back(extract_formula(response));
    else
      sources = extract_class_formulas(response, data_.num_classes);
    for (const auto& src : sources) {
      g.asts.push_back(parse(src, ctx_.schema));
      for (const auto& w : lint(g.asts.back())) log_info("lint: " + w);
    }
    const CandidateOutput c = run_candidate(frame_, g.asts, x_, config_.tau_k_train);
    if (c.rejected) throw NumericRejection(c.reason);
    return g;
  }

  struct NumericRejection : Error {
    using Error::Error;
  };

  // One generation with the regeneration loop; nullopt when the budget is exhausted.
  std::optional<Generation> generate(const std::string& prompt, CallPurpose purpose, int agent, int iteration) {
    std::string current = prompt;
    for (int attempt = 0; attempt <= config_.retry_budget; ++attempt) {
      const std::string response = call(current, purpose, agent, iteration, attempt > 0);
      ++stats_.generations;
      std::string problem;
      try {
        if (blank(response)) throw FormulaError(FormulaErrorKind::extraction, "empty response");
        Generation g = validate(response);
        if (attempt == 0) ++stats_.first_pass;
        return g;
      } catch (const FormulaError& e) {
        (e.failure_class() == FailureClass::type ? stats_.type : stats_.syntax)++;
        problem = to_string(e.failure_class()) + " error: " + e.what();
      } catch (const NumericRejection& e) {
        ++stats_.numeric;
        problem = std::string("numeric error: ") + e.what();
      }
      log_info("agent " + std::to_string(agent) + " " + to_string(purpose) + " rejected (" + problem + ")");
      current = prompt + "\n\nYour previous answer was rejected (" + problem +
                "). Fix the problem and answer again in the required format.";
    }
    return std::nullopt;
  }

  double loss_of(const std::vector<FormulaAst>& asts) const {
    return mechanism_loss(frame_, asts, x_, y_, base_pred_, config_.beta_train, config_.tau_k_train);
  }

  IterationEntry make_entry(int t, std::string hypothesis, const Generation& g) const {
    IterationEntry e;
    e.t = t;
    e.hypothesis = std::move(hypothesis);
    e.explanation = g.explanation;
    for (const auto& a : g.asts) e.formulas.push_back(print(a));
    e.loss = loss_of(g.asts);
    return e;
  }

  std::string failure_table(const std::vector<Failure>& failures) const;
  std::string serialize_state(const MechanismState& s) const;

  const Dataset& data_;
  IndexList train_;
  const BaseModel& base_;
  const AgentConfig& config_;
  LlmProvider& provider_;

  AugmentedContext ctx_;
  EnsembleModel frame_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd y_;
  BasePrediction base_pred_;
  ValidationStats stats_;
};

std::string Trainer::failure_table(const std::vector<Failure>& failures) const {
  return format_failures(data_, ctx_.schema, failures, config_.failure_rows);
}

std::string Trainer::serialize_state(const MechanismState& s) const {
  std::ostringstream os;
  os.precision(6);
  for (const auto& e : s.log) {
    os << "Iteration " << e.t << ":\n";
    os << "Hypothesis:\n" << e.hypothesis << "\n";
    os << "Explanation:\n" << e.explanation << "\n";
    for (std::size_t c = 0; c < e.formulas.size(); ++c) {
      if (e.formulas.size() == 1)
        os << "Formula: " << e.formulas[c] << "\n";
      else
        os << "Formula[" << c + 1 << "]: " << e.formulas[c] << "\n";
    }
    os << "Loss: " << e.loss << "\n";
    if (!e.critique.empty()) os << "Critique:\n" << e.critique << "\n";
    os << "\n";
  }
  return os.str();
}

TrainResult Trainer::run() {
  config_.validate();
  if (train_.empty()) throw DataError("train: empty training split");
  if (base_.task != data_.task) throw DataError("train: base model task does not match dataset task");

  TrainResult result;
  x_ = data_.feature_rows(train_);
  y_ = data_.target_rows(train_);
  base_pred_ = predict(base_, x_, data_.row_ids_of(train_));

  frame_.task = data_.task;
  frame_.num_classes = data_.num_classes;
  frame_.source_feature_names = data_.feature_names;
  frame_.base = base_;
  frame_.bounds = config_.bounds;
  frame_.hyper.beta = config_.beta_train;
  frame_.hyper.gamma = config_.gamma;
  frame_.hyper.p_min = config_.p_min;
  frame_.hyper.tau = data_.task == Task::regression ? config_.tau.value_or(target_range_tau(y_)) : 1.0;
  frame_.input_scaler = identity_scaler(data_.cols());
  frame_.target_scaler = identity_scaler(1);

  result.residuals = residual_table(data_, train_, base_pred_);
  result.pool = select_pool(result.residuals, config_.kappa, data_,
                            fit_scaler(data_.features, train_, ScalerKind::standardize), config_.gamma_s);
  ctx_ = build_context(data_, result.pool, base_, config_);
  frame_.feature_names = ctx_.schema;
  result.expected_calls = count_calls(config_.K, config_.T, result.pool.size(), config_.B);

  const auto common = common_values();
  std::vector<MechanismState> states(static_cast<std::size_t>(config_.K));
  std::vector<std::vector<FormulaAst>> working(states.size());
  std::vector<std::string> hypothesis(states.size());
  std::vector<std::size_t> working_entry(states.size(), 0);

  // Encode and decode.
  for (int k = 0; k < config_.K; ++k) {
    auto& s = states[static_cast<std::size_t>(k)];
    s.agent = k;
    std::string z;
    const std::size_t nb = ctx_.batch_tables.size();
    for (std::size_t b = 0; b < nb && s.alive; ++b) {
      auto values = common;
      values["high_residual_table"] = ctx_.batch_tables[b];
      values["batch_index"] = std::to_string(b + 1);
      values["batch_count"] = std::to_string(nb);
      const auto part = call_nonempty(render_template(config_.templates.encoder_for(k), values), CallPurpose::encoder, k, 0);
      if (!part) {
        s.alive = false;
        s.drop_reason = "empty encoder response after retries";
        break;
      }
      if (!z.empty()) z += "\n\n";
      z += *part;
    }
    if (!s.alive) {
      log_warn("agent " + std::to_string(k) + " dropped: " + s.drop_reason);
      continue;
    }
    auto values = common;
    values["z_k"] = z;
    const auto g = generate(render_template(config_.templates.decoder, values), CallPurpose::decoder, k, 0);
    if (!g) {
      s.alive = false;
      s.drop_reason = "no valid formula after " + std::to_string(config_.retry_budget) + " regenerations";
      log_warn("agent " + std::to_string(k) + " dropped: " + s.drop_reason);
      continue;
    }
    s.log.push_back(make_entry(0, z, *g));
    s.asts.push_back(g->asts);
    working[static_cast<std::size_t>(k)] = g->asts;
    hypothesis[static_cast<std::size_t>(k)] = z;
  }

  // Refinement.
  for (int t = 0; t < config_.T; ++t) {
    std::vector<std::size_t> live;
    for (std::size_t k = 0; k < states.size(); ++k)
      if (states[k].alive) live.push_back(k);
    if (live.empty()) break;

    // Ensemble snapshot with uniform weights over live agents.
    Eigen::VectorXd ens_values;
    Eigen::MatrixXd ens_probs;
    if (data_.task == Task::regression) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(x_.rows());
      for (std::size_t k : live) sum += run_candidate(frame_, working[k], x_, config_.tau_k_train).delta;
      ens_values = base_pred_.values + sum / static_cast<double>(live.size());
      for (Index i = 0; i < ens_values.size(); ++i)
        ens_values(i) = std::clamp(ens_values(i), std::min(config_.bounds.lo, base_pred_.values(i)),
                                   std::max(config_.bounds.hi, base_pred_.values(i)));
    } else {
      Eigen::MatrixXd mix = Eigen::MatrixXd::Zero(x_.rows(), data_.num_classes);
      for (std::size_t k : live) mix += run_candidate(frame_, working[k], x_, config_.tau_k_train).q;
      ens_probs = blend(base_pred_.probs, mix / static_cast<double>(live.size()), config_.beta_train);
    }
    const auto failures = failure_set(data_, train_, ens_values, ens_probs, config_.tau_fail);
    const std::string table = failure_table(failures);

    for (std::size_t k : live) {
      auto& s = states[k];
      auto& current = s.log[working_entry[k]];
      const int agent = static_cast<int>(k);

      auto cvalues = common;
      cvalues["z_k"] = hypothesis[k];
      cvalues["explanation"] = current.explanation;
      std::string ftext;
      for (std::size_t c = 0; c < current.formulas.size(); ++c)
        ftext += (c ? "\n" : "") + current.formulas[c];
      cvalues["formula"] = ftext;
      std::ostringstream loss;
      loss.precision(6);
      loss << current.loss;
      cvalues["loss"] = loss.str();
      cvalues["failure_table"] = table;
      const auto critique = call_nonempty(render_template(config_.templates.critique, cvalues), CallPurpose::critique, agent, t);
      // A critique that stays empty does not skip the refinement; the agent refines from its
      // state alone, which keeps the call count at its planned value.
      if (!critique) {
        log_warn("agent " + std::to_string(k) + ": critique empty at iteration " + std::to_string(t) +
                 ", refining without it");
      } else {
        if (!current.critique.empty()) current.critique += "\n\n";
        current.critique += *critique;
      }

      auto rvalues = common;
      rvalues["high_residual_table"] = ctx_.pool_overview;
      rvalues["state"] = serialize_state(s);
      rvalues["z_k"] = rvalues["state"];
      const auto g = generate(render_template(config_.templates.refine, rvalues), CallPurpose::refine, agent, t + 1);
      if (!g) {
        const int best = s.best();
        working[k] = s.asts[static_cast<std::size_t>(best)];
        working_entry[k] = static_cast<std::size_t>(best);
        hypothesis[k] = s.log[static_cast<std::size_t>(best)].hypothesis;
        log_warn("agent " + std::to_string(k) + ": refinement failed at iteration " + std::to_string(t) +
                 ", keeping the best mechanism so far (iteration " + std::to_string(s.log[static_cast<std::size_t>(best)].t) + ")");
        continue;
      }
      s.log.push_back(make_entry(t + 1, g->explanation, *g));
      s.asts.push_back(g->asts);
      working[k] = g->asts;
      working_entry[k] = s.log.size() - 1;
      hypothesis[k] = g->explanation;
    }
  }

  // Selection and scoring.
  EnsembleModel model = frame_;
  model.pools.push_back(result.pool);
  for (auto& s : states) {
    if (!s.alive || s.log.empty()) {
      result.scores.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const int best = s.best();
    const auto& entry = s.log[static_cast<std::size_t>(best)];
    Mechanism m;
    m.agent = s.agent;
    m.hypothesis = entry.hypothesis;
    m.explanation = entry.explanation;
    m.formulas = s.asts[static_cast<std::size_t>(best)];
    m.tau_k = config_.tau_k_train;
    m.pool = 0;
    m.selected_iteration = entry.t;
    m.p = std::isfinite(entry.loss)
              ? global_score(frame_, m.formulas, x_, y_, base_pred_, config_.beta_train, config_.tau_k_train)
              : 0.0;
    result.scores.push_back(m.p);
    if (m.p > config_.p_min)
      model.mechanisms.push_back(std::move(m));
    else
      log_info("agent " + std::to_string(s.agent) + " filtered: p = " + std::to_string(m.p) + " <= p_min");
  }
  if (model.mechanisms.empty()) log_warn("train: no mechanism retained, inference falls back to the base model");

  result.model = std::move(model);
  result.states = std::move(states);
  result.context = ctx_;
  result.validation = stats_;
  return result;
}

}  // namespace

TrainResult train(const Dataset& data, std::span<const Index> train, const BaseModel& base, const AgentConfig& config,
                  LlmProvider& provider) {
  return Trainer(data, train, base, config, provider).run();
}

}  // namespace rescorr
