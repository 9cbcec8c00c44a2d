#include "rescorr/bundle.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace rescorr {

using nlohmann::json;

std::string render_mechanisms(std::span<const MechanismText> mechanisms) {
  std::string out;
  for (std::size_t i = 0; i < mechanisms.size(); ++i) {
    const auto& m = mechanisms[i];
    if (i) out += '\n';
    out += "# Mechanism " + std::to_string(i + 1) + " (agent " + std::to_string(m.agent) + ")\n";
    std::istringstream lines(m.explanation);
    for (std::string line; std::getline(lines, line);) {
      if (line.rfind("# Mechanism", 0) == 0 || line.rfind("Formula", 0) == 0) line = "  " + line;
      out += line + '\n';
    }
    if (m.formulas.size() == 1) {
      out += "Formula: " + m.formulas[0] + '\n';
    } else {
      for (std::size_t c = 0; c < m.formulas.size(); ++c)
        out += "Formula[" + std::to_string(c + 1) + "]: " + m.formulas[c] + '\n';
    }
  }
  return out;
}

std::vector<MechanismText> parse_mechanisms(std::string_view text) {
  std::vector<MechanismText> out;
  std::vector<std::string> explanation;
  auto finish = [&] {
    if (out.empty()) return;
    while (!explanation.empty() && explanation.back().find_first_not_of(" \t\r") == std::string::npos) explanation.pop_back();
    std::string joined;
    for (std::size_t i = 0; i < explanation.size(); ++i) joined += (i ? "\n" : "") + explanation[i];
    out.back().explanation = joined;
    explanation.clear();
  };
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("# Mechanism", 0) == 0) {
      finish();
      MechanismText m;
      const auto agent = line.find("(agent ");
      if (agent != std::string::npos) m.agent = std::stoi(line.substr(agent + 7));
      out.push_back(std::move(m));
      continue;
    }
    if (out.empty()) continue;
    if (line.rfind("Formula:", 0) == 0) {
      out.back().formulas = {extract_formula(line).text};
    } else if (line.rfind("Formula[", 0) == 0) {
      const auto close = line.find("]:");
      if (close == std::string::npos) throw FormulaError(FormulaErrorKind::extraction, "malformed class formula line: " + line);
      const int c = std::stoi(line.substr(8, close - 8));
      auto& f = out.back().formulas;
      if (c < 1) throw FormulaError(FormulaErrorKind::extraction, "bad class index in: " + line);
      if (f.size() < static_cast<std::size_t>(c)) f.resize(static_cast<std::size_t>(c));
      std::string expr = line.substr(close + 2);
      const auto b = expr.find_first_not_of(" \t");
      f[static_cast<std::size_t>(c - 1)] = b == std::string::npos ? "" : expr.substr(b);
    } else {
      std::string_view v(line);
      if (v.rfind("  # Mechanism", 0) == 0 || v.rfind("  Formula", 0) == 0) v.remove_prefix(2);
      explanation.emplace_back(v);
    }
  }
  finish();
  for (const auto& m : out)
    for (const auto& f : m.formulas)
      if (f.empty()) throw FormulaError(FormulaErrorKind::extraction, "mechanism block with an empty formula");
  return out;
}

namespace {

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(r);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd mat_from(const json& j) {
  Eigen::MatrixXd m(j.at("rows").get<Index>(), j.at("cols").get<Index>());
  const auto& data = j.at("data");
  for (Index i = 0; i < m.rows(); ++i)
    for (Index c = 0; c < m.cols(); ++c) m(i, c) = data.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(c)).get<double>();
  return m;
}

json scaler_json(const ScalerStats& s) {
  return {{"kind", to_string(s.kind)},
          {"location", vec_json(s.location)},
          {"scale", vec_json(s.scale)},
          {"degenerate", s.degenerate},
          {"fitted_on", s.fitted_on}};
}

ScalerStats scaler_from(const json& j) {
  ScalerStats s;
  s.kind = scaler_kind_from_string(j.at("kind").get<std::string>());
  s.location = vec_from(j.at("location"));
  s.scale = vec_from(j.at("scale"));
  s.degenerate = j.at("degenerate").get<std::vector<bool>>();
  s.fitted_on = j.at("fitted_on").get<std::string>();
  return s;
}

json base_json(const BaseModel& b) {
  json j = {{"kind", to_string(b.kind)},
            {"task", to_string(b.task)},
            {"num_classes", b.num_classes},
            {"feature_names", b.feature_names},
            {"lambda", b.lambda}};
  if (b.kind == BaseKind::linear || b.kind == BaseKind::ridge) {
    j["coef"] = vec_json(b.coef);
    j["intercept"] = b.intercept;
  } else if (b.kind == BaseKind::logistic) {
    j["weights"] = mat_json(b.weights);
    j["intercepts"] = vec_json(b.intercepts);
    j["iterations"] = b.iterations;
    j["gradient_norm"] = b.gradient_norm;
  } else if (b.frozen) {
    json values = json::array();
    for (const auto& [id, v] : b.frozen->values) {
      json row = {{"row_id", id}, {"value", v}};
      const auto it = b.frozen->probs.find(id);
      if (it != b.frozen->probs.end()) row["probs"] = vec_json(it->second);
      values.push_back(row);
    }
    j["frozen"] = {{"provenance", b.frozen->provenance}, {"rows", values}};
  }
  return j;
}

BaseModel base_from(const json& j) {
  BaseModel b;
  b.kind = base_kind_from_string(j.at("kind").get<std::string>());
  b.task = task_from_string(j.at("task").get<std::string>());
  b.num_classes = j.at("num_classes").get<int>();
  b.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  b.lambda = j.at("lambda").get<double>();
  if (b.kind == BaseKind::linear || b.kind == BaseKind::ridge) {
    b.coef = vec_from(j.at("coef"));
    b.intercept = j.at("intercept").get<double>();
  } else if (b.kind == BaseKind::logistic) {
    b.weights = mat_from(j.at("weights"));
    b.intercepts = vec_from(j.at("intercepts"));
    b.iterations = j.at("iterations").get<int>();
    b.gradient_norm = j.at("gradient_norm").get<double>();
  } else {
    FrozenPredictions f;
    f.provenance = j.at("frozen").at("provenance").get<std::string>();
    for (const auto& row : j.at("frozen").at("rows")) {
      const auto id = row.at("row_id").get<std::int64_t>();
      f.values[id] = row.at("value").get<double>();
      if (row.contains("probs")) f.probs[id] = vec_from(row.at("probs"));
    }
    b.frozen = std::move(f);
  }
  return b;
}

json model_json(const EnsembleModel& model) {
  json mechs = json::array();
  for (const auto& m : model.mechanisms)
    mechs.push_back({{"agent", m.agent},
                     {"p", m.p},
                     {"tau_k", m.tau_k},
                     {"pool", m.pool},
                     {"selected_iteration", m.selected_iteration},
                     {"hypothesis", m.hypothesis}});
  json pools = json::array();
  for (const auto& p : model.pools)
    pools.push_back({{"rows", p.rows},
                     {"x", mat_json(p.x)},
                     {"y", vec_json(p.y)},
                     {"y_hat", vec_json(p.y_hat)},
                     {"r", vec_json(p.r)},
                     {"distance_stats", scaler_json(p.distance_stats)},
                     {"gamma_s", p.gamma_s},
                     {"d95", p.d95},
                     {"sigma", p.sigma}});
  return {{"schema_version", kBundleSchemaVersion},
          {"task", to_string(model.task)},
          {"num_classes", model.num_classes},
          {"feature_names", model.feature_names},
          {"source_feature_names", model.source_feature_names},
          {"hyper",
           {{"beta", model.hyper.beta}, {"gamma", model.hyper.gamma}, {"tau", model.hyper.tau}, {"p_min", model.hyper.p_min}}},
          {"bounds", {{"lo", model.bounds.lo}, {"hi", model.bounds.hi}}},
          {"input_scaler", scaler_json(model.input_scaler)},
          {"target_scaler", scaler_json(model.target_scaler)},
          {"base", base_json(model.base)},
          {"mechanisms", mechs},
          {"pools", pools}};
}

}  // namespace

std::string model_metadata_json(const EnsembleModel& model) { return model_json(model).dump(2); }

void save_bundle(const EnsembleModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<MechanismText> texts;
  for (const auto& m : model.mechanisms) {
    MechanismText t{m.agent, m.explanation, {}};
    for (const auto& f : m.formulas) t.formulas.push_back(print(f));
    texts.push_back(std::move(t));
  }
  {
    std::ofstream out(dir / "mechanisms.txt", std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + (dir / "mechanisms.txt").string());
    out << render_mechanisms(texts);
  }
  std::ofstream out(dir / "model.json", std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "model.json").string());
  out << model_metadata_json(model) << '\n';
}

EnsembleModel load_bundle(const std::filesystem::path& dir) {
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  json j;
  try {
    j = json::parse(slurp(dir / "model.json"));
  } catch (const json::exception& e) {
    throw DataError(std::string("model.json: ") + e.what());
  }
  if (j.at("schema_version").get<int>() != kBundleSchemaVersion)
    throw DataError("bundle schema version " + std::to_string(j.at("schema_version").get<int>()) + " is not supported");

  EnsembleModel model;
  try {
    model.task = task_from_string(j.at("task").get<std::string>());
    model.num_classes = j.at("num_classes").get<int>();
    model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    model.source_feature_names = j.at("source_feature_names").get<std::vector<std::string>>();
    const auto& h = j.at("hyper");
    model.hyper = {h.at("beta").get<double>(), h.at("gamma").get<double>(), h.at("tau").get<double>(),
                   h.at("p_min").get<double>()};
    model.bounds = {j.at("bounds").at("lo").get<double>(), j.at("bounds").at("hi").get<double>()};
    model.input_scaler = scaler_from(j.at("input_scaler"));
    model.target_scaler = scaler_from(j.at("target_scaler"));
    model.base = base_from(j.at("base"));
    for (const auto& p : j.at("pools")) {
      auto pool = make_pool(mat_from(p.at("x")), vec_from(p.at("y")), vec_from(p.at("y_hat")), vec_from(p.at("r")),
                            scaler_from(p.at("distance_stats")), p.at("gamma_s").get<double>(),
                            p.at("rows").get<IndexList>());
      pool.d95 = p.at("d95").get<double>();
      pool.sigma = p.at("sigma").get<double>();
      model.pools.push_back(std::move(pool));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("model.json: ") + e.what());
  }

  const auto texts = parse_mechanisms(slurp(dir / "mechanisms.txt"));
  const auto& meta = j.at("mechanisms");
  if (texts.size() != meta.size())
    throw DataError("bundle: mechanisms.txt has " + std::to_string(texts.size()) + " blocks, model.json lists " +
                    std::to_string(meta.size()));
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Mechanism m;
    m.agent = meta[i].at("agent").get<int>();
    m.p = meta[i].at("p").get<double>();
    m.tau_k = meta[i].at("tau_k").get<double>();
    m.pool = meta[i].at("pool").get<std::size_t>();
    m.selected_iteration = meta[i].at("selected_iteration").get<int>();
    m.hypothesis = meta[i].at("hypothesis").get<std::string>();
    m.explanation = texts[i].explanation;
    for (const auto& f : texts[i].formulas) m.formulas.push_back(parse(FormulaSource{f, FormulaOrigin::file}, model.feature_names));
    if (m.pool >= model.pools.size()) throw DataError("bundle: mechanism references a missing pool");
    model.mechanisms.push_back(std::move(m));
  }
  return model;
}

}  // namespace rescorr
