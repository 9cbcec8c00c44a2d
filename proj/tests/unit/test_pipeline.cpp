#include "../support/fixtures.hpp"

#include <doctest.h>

#include <cstdlib>
#include <json.hpp>

using namespace rescorr;
using namespace rescorr::testing;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

/// 200-row synthetic plate on disk: 120 train rows, pool of 36, 4 encoder batches.
fs::path synthetic_csv(const fs::path& dir) {
  SyntheticSpec s;
  s.n = 200;
  const SyntheticData d = generate_synthetic(s, 3);
  const fs::path p = dir / "synthetic.csv";
  save_dataset_csv(d.data, p, "Y");
  return p;
}

std::vector<AgentScript> two_agents(const std::string& f0 = "0.05*X1*X3", const std::string& f1 = "0.1*X1*X3") {
  AgentScript a;
  a.formulas = {f0, f1};
  AgentScript b;
  b.hypothesis = "A saturating response in X2.";
  b.formulas = {"0", "0.02*X2"};
  return {a, b};
}

struct ScriptedRun {
  fs::path dir;
  RunConfig config;
};

ScriptedRun scripted_run(const std::string& tag, int T, std::vector<AgentScript> agents = two_agents()) {
  ScriptedRun r;
  r.dir = temp_dir(tag);
  const fs::path csv = synthetic_csv(r.dir);
  write_transcript(r.dir / "script.txt", scripted_session(batches_for(120, 0.3, 10), T, agents));
  r.config = scripted_config(csv, r.dir / "script.txt", r.dir / "out");
  r.config.T = T;
  return r;
}

const std::vector<std::string> kDeterministicFiles{"final_results.json", "ledger.json", "bundle/model.json",
                                                   "bundle/mechanisms.txt", "mechanisms_iter_0.txt", "transcript.txt"};

}  // namespace

TEST_CASE("config: unknown keys and bad values are configuration errors") {
  CHECK_THROWS_AS(run_config_from_json(R"({"K": 2, "kapa": 0.3})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(R"({"K": "two"})"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json("not json"), ConfigError);
  RunConfig c = run_config_from_json(R"({"K": 3, "beta_grid": [0.2, 0.4]})");
  CHECK(c.K == 3);
  CHECK(c.beta_grid == std::vector<double>{0.2, 0.4});
  CHECK(run_config_from_json(run_config_json(c)).K == 3);
  RunConfig bad;
  bad.kappa = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config: overrides parse by field type and later values win") {
  RunConfig c = run_config_from_json(R"({"T": 4, "provider": "scripted:a.txt"})");
  apply_override(c, "T", "6");
  apply_override(c, "provider", "scripted:b.txt");
  apply_override(c, "beta_grid", "0.1,0.9");
  apply_override(c, "anonymize_features", "true");
  CHECK(c.T == 6);
  CHECK(c.provider == "scripted:b.txt");
  CHECK(c.beta_grid == std::vector<double>{0.1, 0.9});
  CHECK(c.anonymize_features);
  CHECK_THROWS_AS(apply_override(c, "nope", "1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "T", "many"), ConfigError);
}

TEST_CASE("beta during training is the median of the grid") {
  RunConfig c;
  c.beta_grid = {0.9, 0.1, 0.3};
  Dataset d;
  d.features = Eigen::MatrixXd::Zero(2, 1);
  d.feature_names = {"x"};
  d.targets = Eigen::VectorXd::Zero(2);
  d.row_ids = {0, 1};
  CHECK(agent_config(c, d).beta_train == 0.3);
}

TEST_CASE("scripted training writes a complete, byte-deterministic artifact") {
  ScriptedRun a = scripted_run("det_a", 2);
  const TrainOutcome oa = run_train(a.config);
  ScriptedRun b = scripted_run("det_b", 2);
  run_train(b.config);
  for (const auto& f : kDeterministicFiles) {
    INFO(f);
    REQUIRE(fs::exists(a.dir / "out" / f));
    CHECK(slurp(a.dir / "out" / f) == slurp(b.dir / "out" / f));
  }
  for (int t = 0; t <= 2; ++t) CHECK(fs::exists(a.dir / "out" / ("mechanisms_iter_" + std::to_string(t) + ".txt")));
  CHECK_FALSE(fs::exists(a.dir / "out" / "mechanisms_iter_3.txt"));
  CHECK(fs::exists(a.dir / "out" / "config.json"));

  const auto results = nlohmann::json::parse(oa.final_results);
  CHECK(results["calls"]["expected"] == count_calls(2, 2, 36, 10));
  CHECK(results["calls"]["total"] == results["calls"]["expected"]);
  CHECK(results["pool_size"] == 36);
  CHECK(results.contains("delta_r2_vs_ml"));
}

TEST_CASE("T = 0 stops after the initial mechanisms") {
  ScriptedRun r = scripted_run("t0", 0);
  const TrainOutcome o = run_train(r.config);
  CHECK(fs::exists(r.dir / "out" / "mechanisms_iter_0.txt"));
  CHECK_FALSE(fs::exists(r.dir / "out" / "mechanisms_iter_1.txt"));
  CHECK(o.result.expected_calls == count_calls(2, 0, 36, 10));
}

TEST_CASE("anonymized runs show aliases to the model and keep the bundle usable on the raw CSV") {
  std::vector<AgentScript> agents = two_agents("0.05*feat_0*feat_2", "0.1*feat_0*feat_2");
  agents[1].formulas = {"0", "0.02*feat_1"};
  ScriptedRun r = scripted_run("anon", 1, agents);
  r.config.anonymize_features = true;
  run_train(r.config);
  for (const char* f : {"mechanisms_iter_0.txt", "mechanisms_iter_1.txt"}) {
    const std::string text = slurp(r.dir / "out" / f);
    CHECK(text.find("feat_0") != std::string::npos);
    CHECK(text.find("X1") == std::string::npos);
  }
  const fs::path pred = r.dir / "pred.csv";
  run_predict(r.dir / "out" / "bundle", r.dir / "synthetic.csv", pred);
  CHECK(read_csv(pred).rows.size() == 200);
}

TEST_CASE("no credential value reaches any artifact") {
  const std::string secret = "sk-test-DO-NOT-LEAK-4711";
  ::setenv("RESCORR_TEST_KEY", secret.c_str(), 1);
  ScriptedRun r = scripted_run("creds", 1);
  r.config.api_key_env = "RESCORR_TEST_KEY";
  run_train(r.config);
  for (const auto& e : fs::recursive_directory_iterator(r.dir / "out")) {
    if (!e.is_regular_file()) continue;
    INFO(e.path().string());
    CHECK(slurp(e.path()).find(secret) == std::string::npos);
  }
  HttpProviderConfig hc;
  hc.endpoint = "http://127.0.0.1:9/v1";
  hc.api_key_env = "RESCORR_TEST_KEY";
  HttpProvider http(hc);
  CompletionRequest req;
  req.prompt = "hello";
  CHECK(http.request_body(req).find(secret) == std::string::npos);
  ::unsetenv("RESCORR_TEST_KEY");
}

TEST_CASE("predict: the worked example bundle reproduces 0.711 on its anchor row") {
  const fs::path dir = temp_dir("worked");
  save_bundle(worked_example_model(), dir / "bundle");
  CsvTable in{{"id", "NAD", "sperm", "fol"}, {{"0", "0.8", "0.7", "0.3"}}};
  write_csv(dir / "in.csv", in);
  PredictOptions o;
  o.row_id_column = "id";
  o.explain = true;
  run_predict(dir / "bundle", dir / "in.csv", dir / "out.csv", o);
  const CsvTable out = read_csv(dir / "out.csv");
  REQUIRE(out.rows.size() == 1);
  const double y = std::stod(out.rows[0][1]);
  CHECK(std::abs(y - 0.711) <= 5e-4);
  // base + 0.28 * (0.5*0.8*0.7 + 0.5*0.3/0.8), computed independently.
  CHECK(y == doctest::Approx(0.58 + 0.28 * (0.28 + 0.1875)).epsilon(1e-12));
}

TEST_CASE("predict: a bundle without mechanisms returns the base model exactly") {
  EnsembleModel m = worked_example_model();
  m.mechanisms.clear();
  const CsvTable out = predict_table(m, CsvTable{{"id", "NAD", "sperm", "fol"}, {{"0", "0.8", "0.7", "0.3"}}},
                                     PredictOptions{false, "id"});
  CHECK(std::stod(out.rows[0][1]) == 0.58);
}

TEST_CASE("predict: explain columns add up to the prediction") {
  ScriptedRun r = scripted_run("explain", 1);
  run_train(r.config);
  const EnsembleModel m = load_bundle(r.dir / "out" / "bundle");
  const CsvTable out = predict_table(m, read_csv(r.dir / "synthetic.csv"), PredictOptions{true, ""});
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(out.header.begin(), out.header.end(), name) - out.header.begin());
  };
  const std::size_t K = m.mechanisms.size();
  REQUIRE(K >= 1);
  for (const auto& row : out.rows) {
    double sum = std::stod(row[col("base_prediction")]) + std::stod(row[col("clip_adjustment")]);
    for (std::size_t k = 1; k <= K; ++k)
      sum += std::stod(row[col("alpha_" + std::to_string(k))]) * std::stod(row[col("delta_" + std::to_string(k))]);
    CHECK(sum == doctest::Approx(std::stod(row[col("prediction")])).epsilon(1e-9));
  }
}

TEST_CASE("predict: missing feature columns are named in the error") {
  try {
    predict_table(worked_example_model(), CsvTable{{"NAD", "fol"}, {{"0.1", "0.2"}}});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("sperm") != std::string::npos);
  }
}

TEST_CASE("replaying a recorded transcript reproduces the run") {
  ScriptedRun first = scripted_run("rec", 2);
  run_train(first.config);
  RunConfig replay = first.config;
  replay.provider = "scripted:" + (first.dir / "out" / "transcript.txt").string();
  replay.output_dir = (first.dir / "replay").string();
  run_train(replay);
  for (const auto& f : kDeterministicFiles) {
    INFO(f);
    CHECK(slurp(first.dir / "out" / f) == slurp(first.dir / "replay" / f));
  }
}

TEST_CASE("prediction needs only the bundle directory") {
  ScriptedRun r = scripted_run("bundle_only", 1);
  run_train(r.config);
  const fs::path moved = r.dir / "moved";
  fs::copy(r.dir / "out" / "bundle", moved, fs::copy_options::recursive);
  fs::remove_all(r.dir / "out");
  fs::remove(r.dir / "script.txt");
  run_predict(moved, r.dir / "synthetic.csv", r.dir / "p.csv");
  CHECK(read_csv(r.dir / "p.csv").rows.size() == 200);
  // Nothing in the bundle names a provider.
  CHECK(slurp(moved / "model.json").find("scripted") == std::string::npos);
}

TEST_CASE("a provider failure leaves a partial artifact and propagates") {
  ScriptedRun r = scripted_run("partial", 2);
  auto responses = scripted_session(batches_for(120, 0.3, 10), 2, two_agents());
  responses.resize(6);
  write_transcript(r.dir / "script.txt", responses);
  CHECK_THROWS_AS(run_train(r.config), ProviderError);
  const fs::path out = r.dir / "out";
  CHECK(fs::exists(out / "config.json"));
  CHECK(fs::exists(out / "ledger.json"));
  CHECK(fs::exists(out / "transcript.txt"));
  CHECK_FALSE(fs::exists(out / "final_results.json"));
  const auto ledger = nlohmann::json::parse(slurp(out / "ledger.json"));
  CHECK(ledger.dump().find("false") != std::string::npos);
}

TEST_CASE("anonymize_csv renames features and keeps the target") {
  const fs::path dir = temp_dir("anon_csv");
  write_csv(dir / "in.csv", CsvTable{{"NAD", "sperm", "plate", "y"}, {{"1", "2", "3", "4"}}});
  const std::vector<std::string> keep{"plate"};
  const auto map = anonymize_csv(dir / "in.csv", dir / "out.csv", keep);
  CHECK(map.at("NAD") == "feat_0");
  CHECK(map.at("sperm") == "feat_1");
  CHECK(read_csv(dir / "out.csv").header == names({"feat_0", "feat_1", "plate", "y"}));
}
