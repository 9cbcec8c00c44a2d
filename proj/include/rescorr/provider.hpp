#pragma once

#include "rescorr/common.hpp"

#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>

namespace rescorr {

enum class CallPurpose { encoder, decoder, critique, refine };

std::string to_string(CallPurpose purpose);

struct CompletionRequest {
  std::string prompt;
  std::string model_id = "scripted";
  double temperature = 0.0;
  int max_tokens = 1024;
  CallPurpose purpose = CallPurpose::encoder;
  int agent = 0;
  int iteration = 0;
  bool retry = false;
};

struct LedgerEntry {
  CallPurpose purpose;
  int agent;
  int iteration;
  bool retry;
  std::size_t prompt_tokens;
  std::size_t completion_tokens;
  bool ok;
};

/// Append-only, thread-safe record of every provider call.
class CallLedger {
 public:
  void record(LedgerEntry entry);
  std::vector<LedgerEntry> entries() const;
  std::size_t total() const;
  std::size_t retries() const;
  std::size_t count(CallPurpose purpose) const;
  std::size_t prompt_tokens() const;
  std::size_t completion_tokens() const;
  /// JSON text: totals plus one object per call.
  std::string to_json() const;

 private:
  mutable std::mutex mutex_;
  std::vector<LedgerEntry> entries_;
};

/// Rough token estimate (characters / 4, rounded up).
std::size_t estimate_tokens(std::string_view text);

class LlmProvider {
 public:
  virtual ~LlmProvider() = default;

  /// Ledgers the call, then delegates. Failed calls are ledgered too.
  std::string complete(const CompletionRequest& request);

  CallLedger& ledger() { return *ledger_; }
  const CallLedger& ledger() const { return *ledger_; }
  void share_ledger(std::shared_ptr<CallLedger> ledger) { ledger_ = std::move(ledger); }

 protected:
  virtual std::string do_complete(const CompletionRequest& request) = 0;

 private:
  std::shared_ptr<CallLedger> ledger_ = std::make_shared<CallLedger>();
};

/// Canned responses consumed in order. Transcript format: blocks introduced by a
/// line starting with "### RESPONSE"; the block text runs to the next header.
class ScriptedProvider : public LlmProvider {
 public:
  explicit ScriptedProvider(std::vector<std::string> responses);
  static ScriptedProvider from_file(const std::filesystem::path& path);
  static std::vector<std::string> parse_transcript(std::string_view text);

  std::size_t remaining() const;

 protected:
  std::string do_complete(const CompletionRequest& request) override;

 private:
  mutable std::mutex mutex_;
  std::deque<std::string> responses_;
  std::size_t served_ = 0;
};

std::string render_transcript(std::span<const std::string> responses, std::span<const std::string> tags = {});

/// JSON over HTTP POST. Field names of the request and the JSON pointer to the
/// response text are configurable so one client covers several backends.
struct HttpProviderConfig {
  std::string endpoint;  // e.g. http://localhost:8080/v1/complete
  std::string model_field = "model";
  std::string prompt_field = "prompt";
  std::string temperature_field = "temperature";
  std::string max_tokens_field = "max_tokens";
  std::string response_pointer = "/text";
  std::string api_key_env = "RESCORR_API_KEY";
  int timeout_seconds = 120;
  int transport_retries = 2;
};

class HttpProvider : public LlmProvider {
 public:
  explicit HttpProvider(HttpProviderConfig config);

  /// Request body for a call (exposed for tests; never contains the API key).
  std::string request_body(const CompletionRequest& request) const;
  std::string extract_text(std::string_view response_body) const;

 protected:
  std::string do_complete(const CompletionRequest& request) override;

 private:
  HttpProviderConfig config_;
};

/// Forwards to an inner provider and keeps every response so the session can be
/// replayed through ScriptedProvider.
class RecordingProvider : public LlmProvider {
 public:
  RecordingProvider(LlmProvider& inner, std::filesystem::path transcript);

  const std::vector<std::string>& responses() const { return responses_; }
  void flush() const;

 protected:
  std::string do_complete(const CompletionRequest& request) override;

 private:
  LlmProvider& inner_;
  std::filesystem::path transcript_;
  std::vector<std::string> responses_;
  std::vector<std::string> tags_;
};

}  // namespace rescorr
