#include "rescorr/provider.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rescorr {

using nlohmann::json;

std::string to_string(CallPurpose purpose) {
  switch (purpose) {
    case CallPurpose::encoder: return "encoder";
    case CallPurpose::decoder: return "decoder";
    case CallPurpose::critique: return "critique";
    case CallPurpose::refine: return "refine";
  }
  return "encoder";
}

std::size_t estimate_tokens(std::string_view text) { return (text.size() + 3) / 4; }

void CallLedger::record(LedgerEntry entry) {
  std::lock_guard lock(mutex_);
  entries_.push_back(entry);
}

std::vector<LedgerEntry> CallLedger::entries() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t CallLedger::total() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::size_t CallLedger::retries() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [](const auto& e) { return e.retry; }));
}

std::size_t CallLedger::count(CallPurpose purpose) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.purpose == purpose; }));
}

std::size_t CallLedger::prompt_tokens() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.prompt_tokens;
  return n;
}

std::size_t CallLedger::completion_tokens() const {
  std::lock_guard lock(mutex_);
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.completion_tokens;
  return n;
}

std::string CallLedger::to_json() const {
  const auto all = entries();
  json calls = json::array();
  std::size_t retries = 0, prompt = 0, completion = 0;
  for (const auto& e : all) {
    calls.push_back({{"purpose", to_string(e.purpose)},
                     {"agent", e.agent},
                     {"iteration", e.iteration},
                     {"retry", e.retry},
                     {"prompt_tokens", e.prompt_tokens},
                     {"completion_tokens", e.completion_tokens},
                     {"ok", e.ok}});
    retries += e.retry ? 1 : 0;
    prompt += e.prompt_tokens;
    completion += e.completion_tokens;
  }
  json out = {{"total_calls", all.size()},
              {"retries", retries},
              {"prompt_tokens_estimate", prompt},
              {"completion_tokens_estimate", completion},
              {"calls", calls}};
  return out.dump(2);
}

std::string LlmProvider::complete(const CompletionRequest& request) {
  LedgerEntry entry{request.purpose, request.agent, request.iteration, request.retry, estimate_tokens(request.prompt), 0, false};
  try {
    std::string text = do_complete(request);
    entry.completion_tokens = estimate_tokens(text);
    entry.ok = true;
    ledger_->record(entry);
    return text;
  } catch (...) {
    ledger_->record(entry);
    throw;
  }
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::string_view kHeader = "### RESPONSE";
constexpr std::string_view kEscaped = "\\### RESPONSE";
}  // namespace

ScriptedProvider::ScriptedProvider(std::vector<std::string> responses)
    : responses_(std::make_move_iterator(responses.begin()), std::make_move_iterator(responses.end())) {}

std::vector<std::string> ScriptedProvider::parse_transcript(std::string_view text) {
  std::vector<std::string> out;
  std::optional<std::string> current;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.rfind(kHeader, 0) == 0) {
      if (current) out.push_back(std::move(*current));
      current = std::string();
    } else if (current) {
      if (line.rfind(kEscaped, 0) == 0) line.remove_prefix(1);
      *current += line;
      *current += '\n';
    }
    start = end + 1;
  }
  if (current) out.push_back(std::move(*current));
  for (auto& r : out)
    if (!r.empty() && r.back() == '\n') r.pop_back();
  // A block written as "text\n" followed by a separator blank line loses only that separator.
  for (auto& r : out)
    if (!r.empty() && r.back() == '\n') r.pop_back();
  return out;
}

std::string render_transcript(std::span<const std::string> responses, std::span<const std::string> tags) {
  std::string out;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    out += std::string(kHeader) + " " + std::to_string(i + 1);
    if (i < tags.size() && !tags[i].empty()) out += " " + tags[i];
    out += '\n';
    std::size_t start = 0;
    const std::string& r = responses[i];
    while (start <= r.size()) {
      auto end = r.find('\n', start);
      if (end == std::string::npos) end = r.size();
      const std::string_view line(r.data() + start, end - start);
      if (line.rfind(kHeader, 0) == 0) out += '\\';
      out += line;
      out += '\n';
      start = end + 1;
    }
    out += '\n';
  }
  return out;
}

ScriptedProvider ScriptedProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open transcript " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ScriptedProvider(parse_transcript(ss.str()));
}

std::size_t ScriptedProvider::remaining() const {
  std::lock_guard lock(mutex_);
  return responses_.size();
}

std::string ScriptedProvider::do_complete(const CompletionRequest& request) {
  std::lock_guard lock(mutex_);
  if (responses_.empty())
    throw ProviderError("scripted provider exhausted after " + std::to_string(served_) + " responses (next call: " +
                        to_string(request.purpose) + ", agent " + std::to_string(request.agent) + ")");
  std::string r = std::move(responses_.front());
  responses_.pop_front();
  ++served_;
  return r;
}

// ---------------------------------------------------------------------------

HttpProvider::HttpProvider(HttpProviderConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError("http provider: empty endpoint");
}

std::string HttpProvider::request_body(const CompletionRequest& request) const {
  json body;
  body[config_.model_field] = request.model_id;
  body[config_.prompt_field] = request.prompt;
  body[config_.temperature_field] = request.temperature;
  body[config_.max_tokens_field] = request.max_tokens;
  return body.dump();
}

std::string HttpProvider::extract_text(std::string_view response_body) const {
  json parsed;
  try {
    parsed = json::parse(response_body);
  } catch (const json::exception& e) {
    throw ProviderError(std::string("http provider: response is not JSON: ") + e.what());
  }
  const json::json_pointer ptr(config_.response_pointer);
  if (!parsed.contains(ptr) || !parsed.at(ptr).is_string())
    throw ProviderError("http provider: no string at " + config_.response_pointer + " in response");
  return parsed.at(ptr).get<std::string>();
}

std::string HttpProvider::do_complete(const CompletionRequest& request) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("http provider: endpoint needs a scheme: " + config_.endpoint);
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  const std::string base = config_.endpoint.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);

  httplib::Client client(base);
  client.set_read_timeout(config_.timeout_seconds, 0);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  const std::string body = request_body(request);
  std::string last_error;
  for (int attempt = 0; attempt <= config_.transport_retries; ++attempt) {
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) throw ProviderError("http provider: HTTP " + std::to_string(res->status) + " from " + config_.endpoint);
    return extract_text(res->body);
  }
  throw ProviderError("http provider: " + last_error + " (" + config_.endpoint + ")");
}

// ---------------------------------------------------------------------------

RecordingProvider::RecordingProvider(LlmProvider& inner, std::filesystem::path transcript)
    : inner_(inner), transcript_(std::move(transcript)) {}

std::string RecordingProvider::do_complete(const CompletionRequest& request) {
  std::string text = inner_.complete(request);
  responses_.push_back(text);
  tags_.push_back(to_string(request.purpose) + " agent=" + std::to_string(request.agent) +
                  " t=" + std::to_string(request.iteration) + (request.retry ? " retry" : ""));
  flush();
  return text;
}

void RecordingProvider::flush() const {
  if (transcript_.empty()) return;
  std::ofstream out(transcript_, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write transcript " + transcript_.string());
  out << render_transcript(responses_, tags_);
}

}  // namespace rescorr
