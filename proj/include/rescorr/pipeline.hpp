#pragma once

#include "rescorr/agent.hpp"
#include "rescorr/bench.hpp"
#include "rescorr/bundle.hpp"

#include <filesystem>
#include <memory>

namespace rescorr {

inline constexpr int kArtifactSchemaVersion = 1;

/// Flat run configuration. Defaults: K=2, kappa=0.3, T=10, B=10, p_min=0.1, gamma=2.0, tau_fail=0.5.
struct RunConfig {
  std::string dataset;
  std::string sidecar;
  std::string base_model = "linear";
  std::string frozen_predictions;
  double ridge_lambda = 1e-3;

  int K = 2;
  int T = 10;
  double kappa = 0.3;
  Index B = 10;
  double tau_fail = 0.5;
  double p_min = 0.1;
  std::vector<double> beta_grid{0.3, 0.5, 0.7};
  std::vector<double> tau_k_grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  double gamma = 2.0;
  double gamma_s = 1.0;
  std::uint64_t seed = 0;
  int retry_budget = 3;
  std::size_t failure_rows = 20;

  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::string split_strategy = "random";
  int q_bins = 5;
  std::string input_scaler = "standardize";
  std::string target_scaler = "minmax01";

  std::string provider;  // "scripted:<path>" or an http(s) endpoint
  std::string model_id = "scripted";
  double temperature = 0.7;
  int max_tokens = 2048;
  bool record_transcript = true;
  std::string http_prompt_field = "prompt";
  std::string http_model_field = "model";
  std::string http_response_pointer = "/text";
  std::string api_key_env = "RESCORR_API_KEY";

  bool include_domain_context = true;
  bool anonymize_features = false;
  std::string domain_context;
  std::string domain_context_file;
  std::map<std::string, std::string> feature_descriptions;
  std::string templates_dir;

  std::string output_dir = "run";
  std::string plate_id;

  void validate() const;
};

/// Reads a flat JSON object; unknown keys are configuration errors.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(std::string_view text);
std::string run_config_json(const RunConfig& config);
/// Applies one "key=value" override using the JSON key names.
void apply_override(RunConfig& config, std::string_view key, std::string_view value);

AgentConfig agent_config(const RunConfig& config, const Dataset& data);

/// Model-space view of a dataset: scaled features (and scaled regression targets).
struct PreparedData {
  Dataset raw;
  Dataset model_space;
  Split split;
  ScalerStats input_scaler;
  ScalerStats target_scaler;
};

PreparedData prepare_data(const RunConfig& config);
PreparedData prepare_data(const RunConfig& config, Dataset raw);

std::unique_ptr<LlmProvider> make_provider(const RunConfig& config);

struct TrainOutcome {
  TrainResult result;
  PreparedData data;
  std::string final_results;  // JSON text written to final_results.json
};

/// Runs the whole training pipeline and writes the artifact directory. When `provider`
/// is null one is built from the config. On a provider failure the partial artifact
/// (config, ledger, transcript) is written before the error propagates.
TrainOutcome run_train(const RunConfig& config, LlmProvider* provider = nullptr);
TrainOutcome run_train(const RunConfig& config, Dataset raw, LlmProvider* provider = nullptr);

/// Mechanism file text for iteration t (agents without an entry at t are omitted).
std::string mechanisms_at_iteration(const TrainResult& result, int t);

struct PredictOptions {
  bool explain = false;
  std::string row_id_column;
};

/// Feature columns are matched by name; missing columns raise DataError naming them.
CsvTable predict_table(const EnsembleModel& model, const CsvTable& input, const PredictOptions& options = {});
void run_predict(const std::filesystem::path& bundle, const std::filesystem::path& input,
                 const std::filesystem::path& output, const PredictOptions& options = {});

/// Renames feature columns to feat_0..feat_{d-1} (the last column is kept as the target).
/// Returns the name map (original -> alias).
std::map<std::string, std::string> anonymize_csv(const std::filesystem::path& input, const std::filesystem::path& output,
                                                 std::span<const std::string> keep_columns = {});

/// Source run from a training artifact directory (bundle formulas + recorded delta R^2 + plate id).
SourceRun source_run_from_artifact(const std::filesystem::path& dir);

}  // namespace rescorr
