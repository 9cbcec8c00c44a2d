#pragma once

#include "rescorr/pipeline.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace rescorr::testing {

/// Thin wrapper over mt19937_64 for hand-rolled property generators.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return uniform() < p; }

  Eigen::MatrixXd matrix(Index rows, Index cols, double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Index j = 0; j < cols; ++j)
      for (Index i = 0; i < rows; ++i) m(i, j) = uniform(lo, hi);
    return m;
  }
  Eigen::VectorXd vector(Index n, double lo = -1.0, double hi = 1.0) { return matrix(n, 1, lo, hi).col(0); }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto p = std::filesystem::temp_directory_path() /
                 ("rescorr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::vector<std::string> names(std::initializer_list<const char*> list) {
  return std::vector<std::string>(list.begin(), list.end());
}

/// What one scripted agent says over a training session.
struct AgentScript {
  std::string hypothesis = "Residuals grow with the interaction of the leading features.";
  /// formulas[0] answers the decoder, formulas[t] the refinement at iteration t-1; the
  /// last entry repeats. Plain expressions get a "Formula: " prefix; text that already
  /// contains a Formula line is used as the whole formula block.
  std::vector<std::string> formulas{"0"};
  std::string critique = "Failures cluster where the correction is too small.";
  std::vector<std::string> explanations;  // optional, aligned with formulas
};

inline std::string formula_block(const std::string& f) {
  return f.find("Formula") != std::string::npos ? f : "Formula: " + f;
}

/// Responses in the order the trainer asks: per agent (encoder batches, decoder), then
/// for each iteration and each agent (critique, refine). Assumes no regenerations.
inline std::vector<std::string> scripted_session(std::size_t batches, int T, const std::vector<AgentScript>& agents) {
  std::vector<std::string> out;
  auto pick = [](const std::vector<std::string>& v, std::size_t i) { return v.empty() ? std::string() : v[std::min(i, v.size() - 1)]; };
  for (const auto& a : agents) {
    for (std::size_t b = 0; b < batches; ++b)
      out.push_back(b == 0 ? a.hypothesis : "Batch " + std::to_string(b + 1) + " agrees with the first.");
    const std::string expl = a.explanations.empty() ? "Initial mechanism." : pick(a.explanations, 0);
    out.push_back(expl + "\n" + formula_block(pick(a.formulas, 0)));
  }
  for (int t = 0; t < T; ++t) {
    for (const auto& a : agents) {
      out.push_back(a.critique);
      const auto i = static_cast<std::size_t>(t + 1);
      const std::string expl = a.explanations.empty() ? "Refined mechanism " + std::to_string(t + 1) + "." : pick(a.explanations, i);
      out.push_back(expl + "\n" + formula_block(pick(a.formulas, i)));
    }
  }
  return out;
}

inline std::size_t batches_for(Index n_train, double kappa, Index B) {
  const Index pool = pool_size(n_train, kappa);
  return static_cast<std::size_t>((pool + B - 1) / B);
}

/// The cofactor worked example: three features, one anchor row at (0.8, 0.7, 0.3) with
/// y = 0.72 and a frozen base prediction of 0.58. Mechanism 1 carries the refined
/// formula with p = 0.28; mechanism 2 is a zero correction with p = 0.72 on the same
/// pool, so the attention weight on mechanism 1 at the anchor is exactly 0.28.
inline constexpr const char* kWorkedF0 = "0.5*NAD*sperm";
inline constexpr const char* kWorkedF1 = "0.5*NAD*sperm + 0.5*fol/(0.5+fol)";

inline EnsembleModel worked_example_model() {
  const auto feats = names({"NAD", "sperm", "fol"});
  EnsembleModel m;
  m.task = Task::regression;
  m.feature_names = feats;
  m.source_feature_names = feats;
  FrozenPredictions fp;
  fp.values[0] = 0.58;
  fp.provenance = "worked example";
  m.base = frozen_model(fp, Task::regression, 0, feats);
  Eigen::MatrixXd x(1, 3);
  x << 0.8, 0.7, 0.3;
  Eigen::VectorXd y(1), yh(1), r(1);
  y << 0.72;
  yh << 0.58;
  r << 0.14;
  m.pools.push_back(make_pool(x, y, yh, r, identity_scaler(3), 1.0, {0}));
  Mechanism a;
  a.agent = 0;
  a.explanation = "NAD-spermidine synergy plus folinic acid saturation.";
  a.formulas = {parse(kWorkedF1, feats)};
  a.p = 0.28;
  Mechanism b;
  b.agent = 1;
  b.explanation = "No systematic correction.";
  b.formulas = {parse("0", feats)};
  b.p = 0.72;
  m.mechanisms = {a, b};
  m.hyper.p_min = 0.1;
  m.bounds = {0.0, 1.0};
  m.input_scaler = identity_scaler(3);
  m.target_scaler = identity_scaler(1);
  return m;
}

/// Scripted run config over a dataset already on disk.
inline RunConfig scripted_config(const std::filesystem::path& dataset, const std::filesystem::path& transcript,
                                 const std::filesystem::path& out) {
  RunConfig c;
  c.dataset = dataset.string();
  c.provider = "scripted:" + transcript.string();
  c.output_dir = out.string();
  return c;
}

/// Scripted provider that also keeps every request it saw.
class SpyProvider : public LlmProvider {
 public:
  explicit SpyProvider(std::vector<std::string> responses) : inner_(std::move(responses)) {}

  const std::vector<CompletionRequest>& requests() const { return requests_; }
  std::vector<CompletionRequest> requests(CallPurpose p) const {
    std::vector<CompletionRequest> out;
    for (const auto& r : requests_)
      if (r.purpose == p) out.push_back(r);
    return out;
  }

 protected:
  std::string do_complete(const CompletionRequest& request) override {
    requests_.push_back(request);
    return inner_.complete(request);
  }

 private:
  ScriptedProvider inner_;
  std::vector<CompletionRequest> requests_;
};

inline void write_transcript(const std::filesystem::path& p, const std::vector<std::string>& responses) {
  std::ofstream f(p, std::ios::binary);
  f << render_transcript(responses);
}

}  // namespace rescorr::testing
