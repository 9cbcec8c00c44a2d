#pragma once

#include "rescorr/ensemble.hpp"

#include <filesystem>

namespace rescorr {

inline constexpr int kBundleSchemaVersion = 1;

/// Text block per mechanism: "# Mechanism <k>" header, explanation lines, then
/// "Formula:" (regression) or "Formula[c]:" lines.
struct MechanismText {
  int agent = 0;
  std::string explanation;
  std::vector<std::string> formulas;
};

std::string render_mechanisms(std::span<const MechanismText> mechanisms);
std::vector<MechanismText> parse_mechanisms(std::string_view text);

/// Directory with mechanisms.txt and model.json. Loading reproduces predictions bit-exactly.
void save_bundle(const EnsembleModel& model, const std::filesystem::path& dir);
EnsembleModel load_bundle(const std::filesystem::path& dir);

/// model.json content (without formulas) as a JSON string, and its inverse.
std::string model_metadata_json(const EnsembleModel& model);

}  // namespace rescorr
