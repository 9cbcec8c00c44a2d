#include "rescorr/pipeline.hpp"

#include <json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace rescorr {

using nlohmann::json;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_text(const std::filesystem::path& p, std::string_view text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("config: 'dataset' is required");
  if (K < 1) throw ConfigError("config: K must be at least 1");
  if (T < 0) throw ConfigError("config: T must be non-negative");
  if (B < 1) throw ConfigError("config: B must be at least 1");
  if (!(kappa > 0 && kappa <= 1)) throw ConfigError("config: kappa must lie in (0, 1]");
  if (!(tau_fail > 0 && tau_fail < 1)) throw ConfigError("config: tau_fail must lie in (0, 1)");
  if (p_min < 0) throw ConfigError("config: p_min must be non-negative");
  if (beta_grid.empty() || tau_k_grid.empty()) throw ConfigError("config: grids must not be empty");
  for (double b : beta_grid)
    if (b < 0 || b > 1) throw ConfigError("config: beta grid values must lie in [0, 1]");
  for (double t : tau_k_grid)
    if (!(t > 0)) throw ConfigError("config: tau_k grid values must be positive");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw ConfigError("config: split fractions must sum to 1");
  if (split_strategy != "random" && split_strategy != "quantile_stratified")
    throw ConfigError("config: split_strategy must be random or quantile_stratified");
  (void)base_kind_from_string(base_model);
  (void)scaler_kind_from_string(input_scaler);
  (void)scaler_kind_from_string(target_scaler);
  if (base_model == "frozen" && frozen_predictions.empty())
    throw ConfigError("config: base_model=frozen needs 'frozen_predictions'");
  if (provider.empty()) throw ConfigError("config: 'provider' is required (scripted:<path> or an http endpoint)");
}

namespace {

template <typename T>
void take(const json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

json to_json(const RunConfig& c) {
  return {{"dataset", c.dataset},
          {"sidecar", c.sidecar},
          {"base_model", c.base_model},
          {"frozen_predictions", c.frozen_predictions},
          {"ridge_lambda", c.ridge_lambda},
          {"K", c.K},
          {"T", c.T},
          {"kappa", c.kappa},
          {"B", c.B},
          {"tau_fail", c.tau_fail},
          {"p_min", c.p_min},
          {"beta_grid", c.beta_grid},
          {"tau_k_grid", c.tau_k_grid},
          {"gamma", c.gamma},
          {"gamma_s", c.gamma_s},
          {"seed", c.seed},
          {"retry_budget", c.retry_budget},
          {"failure_rows", c.failure_rows},
          {"train_fraction", c.train_fraction},
          {"val_fraction", c.val_fraction},
          {"test_fraction", c.test_fraction},
          {"split_strategy", c.split_strategy},
          {"q_bins", c.q_bins},
          {"input_scaler", c.input_scaler},
          {"target_scaler", c.target_scaler},
          {"provider", c.provider},
          {"model_id", c.model_id},
          {"temperature", c.temperature},
          {"max_tokens", c.max_tokens},
          {"record_transcript", c.record_transcript},
          {"http_prompt_field", c.http_prompt_field},
          {"http_model_field", c.http_model_field},
          {"http_response_pointer", c.http_response_pointer},
          {"api_key_env", c.api_key_env},
          {"include_domain_context", c.include_domain_context},
          {"anonymize_features", c.anonymize_features},
          {"domain_context", c.domain_context},
          {"domain_context_file", c.domain_context_file},
          {"feature_descriptions", c.feature_descriptions},
          {"templates_dir", c.templates_dir},
          {"output_dir", c.output_dir},
          {"plate_id", c.plate_id}};
}

RunConfig from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig c;
  const json known = to_json(c);
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + key + "'");
  try {
    take(j, "dataset", c.dataset);
    take(j, "sidecar", c.sidecar);
    take(j, "base_model", c.base_model);
    take(j, "frozen_predictions", c.frozen_predictions);
    take(j, "ridge_lambda", c.ridge_lambda);
    take(j, "K", c.K);
    take(j, "T", c.T);
    take(j, "kappa", c.kappa);
    take(j, "B", c.B);
    take(j, "tau_fail", c.tau_fail);
    take(j, "p_min", c.p_min);
    take(j, "beta_grid", c.beta_grid);
    take(j, "tau_k_grid", c.tau_k_grid);
    take(j, "gamma", c.gamma);
    take(j, "gamma_s", c.gamma_s);
    take(j, "seed", c.seed);
    take(j, "retry_budget", c.retry_budget);
    take(j, "failure_rows", c.failure_rows);
    take(j, "train_fraction", c.train_fraction);
    take(j, "val_fraction", c.val_fraction);
    take(j, "test_fraction", c.test_fraction);
    take(j, "split_strategy", c.split_strategy);
    take(j, "q_bins", c.q_bins);
    take(j, "input_scaler", c.input_scaler);
    take(j, "target_scaler", c.target_scaler);
    take(j, "provider", c.provider);
    take(j, "model_id", c.model_id);
    take(j, "temperature", c.temperature);
    take(j, "max_tokens", c.max_tokens);
    take(j, "record_transcript", c.record_transcript);
    take(j, "http_prompt_field", c.http_prompt_field);
    take(j, "http_model_field", c.http_model_field);
    take(j, "http_response_pointer", c.http_response_pointer);
    take(j, "api_key_env", c.api_key_env);
    take(j, "include_domain_context", c.include_domain_context);
    take(j, "anonymize_features", c.anonymize_features);
    take(j, "domain_context", c.domain_context);
    take(j, "domain_context_file", c.domain_context_file);
    take(j, "feature_descriptions", c.feature_descriptions);
    take(j, "templates_dir", c.templates_dir);
    take(j, "output_dir", c.output_dir);
    take(j, "plate_id", c.plate_id);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

}  // namespace

RunConfig run_config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_run_config(const std::filesystem::path& path) { return run_config_from_json(read_text(path)); }

std::string run_config_json(const RunConfig& config) { return to_json(config).dump(2); }

void apply_override(RunConfig& config, std::string_view key, std::string_view value) {
  json j = to_json(config);
  const std::string k(key);
  if (!j.contains(k)) throw ConfigError("config: unknown key '" + k + "'");
  json parsed;
  const json& current = j.at(k);
  try {
    if (current.is_string())
      parsed = std::string(value);
    else if (current.is_array() && !value.empty() && value.front() != '[')
      parsed = json::parse("[" + std::string(value) + "]");
    else
      parsed = json::parse(value);
  } catch (const json::exception&) {
    throw ConfigError("config: cannot parse value for '" + k + "': " + std::string(value));
  }
  j[k] = parsed;
  config = from_json(j);
}

AgentConfig agent_config(const RunConfig& c, const Dataset& data) {
  AgentConfig a;
  a.K = c.K;
  a.T = c.T;
  a.B = c.B;
  a.tau_fail = c.tau_fail;
  a.p_min = c.p_min;
  a.kappa = c.kappa;
  a.gamma_s = c.gamma_s;
  a.gamma = c.gamma;
  a.retry_budget = c.retry_budget;
  a.failure_rows = c.failure_rows;
  a.include_domain_context = c.include_domain_context;
  a.anonymize_features = c.anonymize_features;
  a.domain_context = c.domain_context;
  if (!c.domain_context_file.empty()) a.domain_context = read_text(c.domain_context_file);
  a.feature_descriptions = c.feature_descriptions;
  a.templates = c.templates_dir.empty() ? PromptTemplates::defaults() : PromptTemplates::from_directory(c.templates_dir);
  a.model_id = c.model_id;
  a.temperature = c.temperature;
  a.max_tokens = c.max_tokens;
  a.beta_train = 0.5;
  // Training-time beta: the middle of the validation grid, fixed before refinement starts.
  if (!c.beta_grid.empty()) {
    auto g = c.beta_grid;
    std::sort(g.begin(), g.end());
    a.beta_train = g[g.size() / 2];
  }
  a.tau_k_train = 1.0;
  if (data.task == Task::regression) {
    // Output bounds: the scaled training target range.
    a.bounds = {0.0, 1.0};
  }
  return a;
}

PreparedData prepare_data(const RunConfig& config, Dataset raw) {
  PreparedData p;
  SplitSpec s;
  s.train = config.train_fraction;
  s.val = config.val_fraction;
  s.test = config.test_fraction;
  s.seed = config.seed;
  s.strategy = config.split_strategy == "quantile_stratified" ? SplitStrategy::quantile_stratified : SplitStrategy::random;
  s.q_bins = config.q_bins;
  if (raw.task == Task::classification && s.strategy == SplitStrategy::quantile_stratified)
    throw ConfigError("quantile-stratified splits are for regression targets");
  p.split = make_split(raw, s);
  if (p.split.train.empty()) throw DataError("training split is empty");
  p.input_scaler = fit_scaler(raw, p.split, scaler_kind_from_string(config.input_scaler));
  p.model_space = raw;
  p.model_space.features = apply_scaler(p.input_scaler, raw.features);
  if (raw.task == Task::regression) {
    Eigen::MatrixXd y(raw.rows(), 1);
    y.col(0) = raw.targets;
    p.target_scaler = fit_scaler(y, p.split.train, scaler_kind_from_string(config.target_scaler));
    p.model_space.targets = apply_scaler(p.target_scaler, raw.targets);
  } else {
    p.target_scaler = identity_scaler(1);
  }
  p.raw = std::move(raw);
  return p;
}

PreparedData prepare_data(const RunConfig& config) {
  std::optional<std::filesystem::path> sidecar;
  if (!config.sidecar.empty()) sidecar = config.sidecar;
  return prepare_data(config, load_dataset_csv(config.dataset, sidecar));
}

std::unique_ptr<LlmProvider> make_provider(const RunConfig& config) {
  const std::string& p = config.provider;
  if (p.rfind("scripted:", 0) == 0) return std::make_unique<ScriptedProvider>(ScriptedProvider::parse_transcript(read_text(p.substr(9))));
  if (p.rfind("http://", 0) == 0 || p.rfind("https://", 0) == 0) {
    HttpProviderConfig h;
    h.endpoint = p;
    h.prompt_field = config.http_prompt_field;
    h.model_field = config.http_model_field;
    h.response_pointer = config.http_response_pointer;
    h.api_key_env = config.api_key_env;
    return std::make_unique<HttpProvider>(h);
  }
  throw ConfigError("provider must be scripted:<path> or an http(s) endpoint, got '" + p + "'");
}

std::string mechanisms_at_iteration(const TrainResult& result, int t) {
  std::vector<MechanismText> texts;
  for (const auto& s : result.states)
    for (const auto& e : s.log)
      if (e.t == t) texts.push_back({s.agent, e.explanation, e.formulas});
  return render_mechanisms(texts);
}

namespace {

json metric_json(const MetricReport& m) {
  json j = json::object();
  if (m.r2) j["r2"] = *m.r2;
  if (m.mae) j["mae"] = *m.mae;
  if (m.accuracy) j["accuracy"] = *m.accuracy;
  if (m.macro_f1) j["macro_f1"] = *m.macro_f1;
  if (m.minority_f1) j["minority_f1"] = *m.minority_f1;
  if (m.ece) j["ece"] = *m.ece;
  return j;
}

json split_metrics(const EnsembleModel& model, const Dataset& raw, const IndexList& rows) {
  if (rows.empty()) return json::object();
  const Prediction p = predict_raw(model, raw.feature_rows(rows), raw.row_ids_of(rows));
  if (raw.task == Task::regression) {
    const Eigen::VectorXd y = raw.target_rows(rows);
    return {{"base", metric_json(regression_metrics(y, p.base_values))},
            {"ensemble", metric_json(regression_metrics(y, p.values))}};
  }
  const auto labels = raw.labels(rows);
  return {{"base", metric_json(classification_metrics(labels, p.base_probs))},
          {"ensemble", metric_json(classification_metrics(labels, p.probs))}};
}

void write_partial(const RunConfig& config, const std::filesystem::path& out, const LlmProvider& provider,
                   const RecordingProvider* recorder) {
  write_text(out / "config.json", run_config_json(config) + "\n");
  write_text(out / "ledger.json", provider.ledger().to_json() + "\n");
  if (recorder) recorder->flush();
}

}  // namespace

TrainOutcome run_train(const RunConfig& config, Dataset raw, LlmProvider* provider) {
  config.validate();
  const std::filesystem::path out = config.output_dir;
  std::filesystem::create_directories(out);

  TrainOutcome outcome;
  outcome.data = prepare_data(config, std::move(raw));
  const PreparedData& pd = outcome.data;
  const Dataset& ms = pd.model_space;

  BaseModel base;
  if (config.base_model == "frozen") {
    FrozenPredictions f = load_frozen_predictions(config.frozen_predictions, ms.task, ms.num_classes);
    if (ms.task == Task::regression)
      for (auto& [id, v] : f.values) {
        Eigen::VectorXd one(1);
        one << v;
        v = apply_scaler(pd.target_scaler, one)(0);
      }
    base = frozen_model(std::move(f), ms.task, ms.num_classes, ms.feature_names);
  } else {
    FitOptions fo;
    fo.ridge_lambda = config.ridge_lambda;
    base = fit_base(base_kind_from_string(config.base_model), ms, pd.split.train, fo);
  }

  AgentConfig ac = agent_config(config, ms);
  if (ms.task == Task::regression) {
    const Eigen::VectorXd yt = ms.target_rows(pd.split.train);
    ac.bounds = {yt.minCoeff(), yt.maxCoeff()};
  }

  std::unique_ptr<LlmProvider> owned;
  if (!provider) {
    owned = make_provider(config);
    provider = owned.get();
  }
  std::unique_ptr<RecordingProvider> recorder;
  LlmProvider* active = provider;
  if (config.record_transcript) {
    recorder = std::make_unique<RecordingProvider>(*provider, out / "transcript.txt");
    active = recorder.get();
  }

  try {
    outcome.result = train(ms, pd.split.train, base, ac, *active);
  } catch (const ProviderError&) {
    write_partial(config, out, *active, recorder.get());
    throw;
  }
  TrainResult& r = outcome.result;
  EnsembleModel& model = r.model;
  model.input_scaler = pd.input_scaler;
  model.target_scaler = pd.target_scaler;

  json tune_json = json::object();
  if (ms.task == Task::classification) {
    if (pd.split.val.empty()) {
      log_warn("no validation split: beta and tau_k keep their training values");
    } else {
      TuneGrid grid{config.beta_grid, config.tau_k_grid};
      const TuneReport tr = tune(model, ms.feature_rows(pd.split.val), ms.labels(pd.split.val),
                                 ms.row_ids_of(pd.split.val), grid);
      tune_json = {{"beta", tr.beta}, {"tau_k", tr.tau_k}, {"beta_losses", tr.beta_losses}};
    }
  }

  // Artifact.
  write_text(out / "config.json", run_config_json(config) + "\n");
  int max_t = -1;
  for (const auto& s : r.states)
    for (const auto& e : s.log) max_t = std::max(max_t, e.t);
  for (int t = 0; t <= max_t; ++t) {
    const std::string text = mechanisms_at_iteration(r, t);
    if (!text.empty()) write_text(out / ("mechanisms_iter_" + std::to_string(t) + ".txt"), text);
  }
  save_bundle(model, out / "bundle");
  write_text(out / "ledger.json", active->ledger().to_json() + "\n");

  json agents = json::array();
  for (std::size_t k = 0; k < r.states.size(); ++k) {
    const auto& s = r.states[k];
    json losses = json::array();
    json iterations = json::array();
    for (const auto& e : s.log) {
      losses.push_back(std::isfinite(e.loss) ? json(e.loss) : json(nullptr));
      iterations.push_back(e.t);
    }
    const int best = s.best();
    const double p = r.scores[k];
    const bool retained = std::any_of(model.mechanisms.begin(), model.mechanisms.end(),
                                      [&](const Mechanism& m) { return m.agent == s.agent; });
    agents.push_back({{"agent", s.agent},
                      {"alive", s.alive},
                      {"drop_reason", s.drop_reason},
                      {"iterations", iterations},
                      {"losses", losses},
                      {"selected_iteration", best >= 0 ? json(s.log[static_cast<std::size_t>(best)].t) : json(nullptr)},
                      {"p_k", std::isfinite(p) ? json(p) : json(nullptr)},
                      {"retained", retained}});
  }
  const auto& ledger = active->ledger();
  json metrics = {{"train", split_metrics(model, pd.raw, pd.split.train)},
                  {"val", split_metrics(model, pd.raw, pd.split.val)},
                  {"test", split_metrics(model, pd.raw, pd.split.test)}};
  json results = {
      {"schema_version", kArtifactSchemaVersion},
      {"task", to_string(ms.task)},
      {"seed", config.seed},
      {"plate_id", config.plate_id},
      {"template_hash", ac.templates.hash()},
      {"split", {{"train", pd.split.train.size()}, {"val", pd.split.val.size()}, {"test", pd.split.test.size()}}},
      {"pool_size", r.pool.size()},
      {"calls",
       {{"expected", r.expected_calls},
        {"total", ledger.total()},
        {"retries", ledger.retries()},
        {"encoder", ledger.count(CallPurpose::encoder)},
        {"decoder", ledger.count(CallPurpose::decoder)},
        {"critique", ledger.count(CallPurpose::critique)},
        {"refine", ledger.count(CallPurpose::refine)},
        {"prompt_tokens_estimate", ledger.prompt_tokens()},
        {"completion_tokens_estimate", ledger.completion_tokens()}}},
      {"validation",
       {{"generations", r.validation.generations},
        {"first_pass", r.validation.first_pass},
        {"syntax", r.validation.syntax},
        {"numeric", r.validation.numeric},
        {"type", r.validation.type}}},
      {"agents", agents},
      {"hyper",
       {{"beta", model.hyper.beta}, {"gamma", model.hyper.gamma}, {"tau", model.hyper.tau}, {"p_min", model.hyper.p_min}}},
      {"tune", tune_json},
      {"metrics", metrics}};
  if (ms.task == Task::regression && !pd.split.test.empty()) {
    const auto& test = metrics["test"];
    results["delta_r2_vs_ml"] = test["ensemble"]["r2"].get<double>() - test["base"]["r2"].get<double>();
  } else if (!pd.split.test.empty()) {
    const auto& test = metrics["test"];
    results["delta_macro_f1_vs_ml"] = test["ensemble"]["macro_f1"].get<double>() - test["base"]["macro_f1"].get<double>();
  }
  outcome.final_results = results.dump(2);
  write_text(out / "final_results.json", outcome.final_results + "\n");
  if (recorder) recorder->flush();
  return outcome;
}

TrainOutcome run_train(const RunConfig& config, LlmProvider* provider) {
  config.validate();
  std::optional<std::filesystem::path> sidecar;
  if (!config.sidecar.empty()) sidecar = config.sidecar;
  return run_train(config, load_dataset_csv(config.dataset, sidecar), provider);
}

CsvTable predict_table(const EnsembleModel& model, const CsvTable& input, const PredictOptions& options) {
  std::vector<std::size_t> cols;
  std::vector<std::string> missing;
  for (const auto& name : model.source_feature_names) {
    const auto it = std::find(input.header.begin(), input.header.end(), name);
    if (it == input.header.end())
      missing.push_back(name);
    else
      cols.push_back(static_cast<std::size_t>(it - input.header.begin()));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DataError("input is missing feature columns: " + list);
  }
  std::optional<std::size_t> id_col;
  if (!options.row_id_column.empty()) {
    const auto it = std::find(input.header.begin(), input.header.end(), options.row_id_column);
    if (it == input.header.end()) throw DataError("input is missing the row id column '" + options.row_id_column + "'");
    id_col = static_cast<std::size_t>(it - input.header.begin());
  }
  const Index n = static_cast<Index>(input.rows.size());
  Eigen::MatrixXd x(n, static_cast<Index>(cols.size()));
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto& row = input.rows[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < cols.size(); ++j) {
      try {
        x(i, static_cast<Index>(j)) = std::stod(row.at(cols[j]));
      } catch (const std::exception&) {
        throw DataError("row " + std::to_string(i + 1) + ": column '" + input.header[cols[j]] + "' is not numeric");
      }
    }
    ids[static_cast<std::size_t>(i)] = id_col ? std::stoll(row.at(*id_col)) : i;
  }
  if (!x.allFinite()) throw DataError("input contains NaN or Inf");
  const Prediction p = predict_raw(model, x, ids);

  CsvTable out;
  out.header = {"row_id", "prediction"};
  if (model.task == Task::classification)
    for (int c = 1; c <= model.num_classes; ++c) out.header.push_back("prob_" + std::to_string(c));
  const std::size_t m = model.mechanisms.size();
  if (options.explain) {
    out.header.push_back("base_prediction");
    for (std::size_t k = 0; k < m; ++k) {
      out.header.push_back("alpha_" + std::to_string(k + 1));
      if (model.task == Task::regression) out.header.push_back("delta_" + std::to_string(k + 1));
    }
    out.header.push_back("fallback");
    if (model.task == Task::regression) out.header.push_back("clip_adjustment");
  }
  for (Index i = 0; i < n; ++i) {
    std::vector<std::string> row{std::to_string(ids[static_cast<std::size_t>(i)]), shortest(p.values(i))};
    if (model.task == Task::classification)
      for (int c = 0; c < model.num_classes; ++c) row.push_back(shortest(p.probs(i, c)));
    if (options.explain) {
      row.push_back(shortest(model.task == Task::regression ? p.base_values(i) : p.base_values(i)));
      double sum = 0;
      for (std::size_t k = 0; k < m; ++k) {
        const Index kk = static_cast<Index>(k);
        row.push_back(shortest(p.alpha(i, kk)));
        if (model.task == Task::regression) {
          row.push_back(shortest(p.delta(i, kk)));
          sum += p.alpha(i, kk) * p.delta(i, kk);
        }
      }
      row.push_back(p.fallback(i) ? "1" : "0");
      if (model.task == Task::regression) row.push_back(shortest(p.values(i) - p.base_values(i) - sum));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

void run_predict(const std::filesystem::path& bundle, const std::filesystem::path& input,
                 const std::filesystem::path& output, const PredictOptions& options) {
  const EnsembleModel model = load_bundle(bundle);
  write_csv(output, predict_table(model, read_csv(input), options));
}

std::map<std::string, std::string> anonymize_csv(const std::filesystem::path& input, const std::filesystem::path& output,
                                                 std::span<const std::string> keep_columns) {
  CsvTable t = read_csv(input);
  if (t.header.size() < 2) throw DataError("anonymize: need feature columns and a target column");
  std::map<std::string, std::string> map;
  std::size_t next = 0;
  for (std::size_t j = 0; j + 1 < t.header.size(); ++j) {
    if (std::find(keep_columns.begin(), keep_columns.end(), t.header[j]) != keep_columns.end()) continue;
    const std::string alias = "feat_" + std::to_string(next++);
    map[t.header[j]] = alias;
    t.header[j] = alias;
  }
  write_csv(output, t);
  return map;
}

SourceRun source_run_from_artifact(const std::filesystem::path& dir) {
  const EnsembleModel model = load_bundle(dir / "bundle");
  if (model.task != Task::regression) throw DataError("transfer: only regression runs can act as sources");
  json results;
  try {
    results = json::parse(read_text(dir / "final_results.json"));
  } catch (const json::exception& e) {
    throw DataError(std::string("final_results.json: ") + e.what());
  }
  SourceRun run;
  run.id = dir.filename().string();
  if (run.id.empty()) run.id = dir.parent_path().filename().string();
  run.plate = results.value("plate_id", std::string());
  run.delta_r2_vs_ml = results.value("delta_r2_vs_ml", 0.0);
  for (const auto& m : model.mechanisms) run.formulas.push_back(m.formulas.at(0));
  return run;
}

}  // namespace rescorr
