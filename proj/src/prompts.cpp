#include "rescorr/prompts.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace rescorr {

namespace {

constexpr const char* kEncoderError = R"(You are studying where a baseline regression or classification model goes wrong.
Batch {batch_index} of {batch_count}.
Features:
{features}
{domain_block}{model_digest}
Rows with the largest residuals (features, target y, base prediction y_hat, residual r = y - y_hat):
{high_residual_table}
Look for feature combinations, thresholds and nonlinear effects that the base model misses.
Answer with a structured hypothesis using these fields:
- hypothesised_pattern: ...
- implicated_features: [...]
- functional_form_guess: ...
- rationale: ...
)";

constexpr const char* kEncoderSample = R"(You are learning the relationship between features and target directly from samples.
Batch {batch_index} of {batch_count}.
Features:
{features}
{domain_block}{model_digest}
Samples (features, target y, base prediction y_hat, residual r = y - y_hat):
{high_residual_table}
Which relations between feature values and target values hold across these samples?
Which feature combinations push the target up or down, and which rules would predict it?
Aim for the underlying pattern rather than a patch for individual errors.
Answer with a structured hypothesis using these fields:
- hypothesised_pattern: ...
- implicated_features: [...]
- functional_form_guess: ...
- rationale: ...
)";

constexpr const char* kDecoder = R"(Turn the hypothesis below into a correction term for the base model.
First write a short explanation (two or three sentences) of the mechanism.
Then give one executable expression built only from: {allowed_operators}
Keep it numerically stable: clip bounded quantities, put a positive constant in every denominator,
use log1p instead of log, and keep arguments of exp small.
Available features: {feature_list}
{task_instructions}
Hypothesis:
{z_k}
)";

constexpr const char* kCritique = R"(Hypothesis under review:
{z_k}
Current correction:
{explanation}
Formula: {formula}
Training loss: {loss}
Largest remaining failures of the ensemble (features, target y, prediction y_hat, error):
{failure_table}
Explain why the correction misses these cases. Say whether the functional form is wrong or only the
coefficients are off, and propose one concrete change to the formula that fixes the main failure mode
without hurting rows that are already predicted well.
)";

constexpr const char* kRefine = R"(You convert an accumulated mechanism history into an improved, executable correction.
Features:
{features}
{domain_block}Rows with the largest residuals of the base model:
{high_residual_table}
History of this mechanism (hypothesis, formula, loss and critique per iteration):
{state}
Requirements:
1. Describe the mechanism in words, including the nonlinearity and the interaction it captures.
2. Name at most three intermediate concepts, then expand them inline in the final formula.
3. Use only: {allowed_operators}
4. Keep constants moderate and put a positive constant in every denominator.
Available features: {feature_list}
{task_instructions}
)";

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read template " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  return {kEncoderError, kEncoderSample, kDecoder, kCritique, kRefine};
}

PromptTemplates PromptTemplates::from_directory(const std::filesystem::path& dir) {
  PromptTemplates t = defaults();
  const std::pair<const char*, std::string*> files[] = {{"encoder_error.txt", &t.encoder_error},
                                                        {"encoder_sample.txt", &t.encoder_sample},
                                                        {"decoder.txt", &t.decoder},
                                                        {"critique.txt", &t.critique},
                                                        {"refine.txt", &t.refine}};
  for (const auto& [name, slot] : files)
    if (std::filesystem::exists(dir / name)) *slot = read_file(dir / name);
  return t;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string PromptTemplates::hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const std::string* s : {&encoder_error, &encoder_sample, &decoder, &critique, &refine}) {
    h = fnv1a64(*s, h);
    h = fnv1a64(std::string_view("\0", 1), h);
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    if (tpl[i] == '{') {
      const auto close = tpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const auto it = values.find(std::string(tpl.substr(i + 1, close - i - 1)));
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out += tpl[i++];
  }
  return out;
}

}  // namespace rescorr
