#pragma once

#include "rescorr/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>

namespace rescorr {

/// Editable prompt text. Placeholders are written {name}.
struct PromptTemplates {
  std::string encoder_error;
  std::string encoder_sample;
  std::string decoder;
  std::string critique;
  std::string refine;

  static PromptTemplates defaults();
  /// Defaults overridden by any of encoder_error.txt, encoder_sample.txt, decoder.txt,
  /// critique.txt, refine.txt found in dir.
  static PromptTemplates from_directory(const std::filesystem::path& dir);

  /// Encoder variant for agent k (0-based): even agents look at error patterns, odd at sample patterns.
  const std::string& encoder_for(int k) const { return k % 2 == 0 ? encoder_error : encoder_sample; }

  /// FNV-1a 64 over all templates, as 16 hex digits.
  std::string hash() const;
};

/// Replaces {name} for every key in values; other braces are left alone.
std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& values);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ull);

}  // namespace rescorr
