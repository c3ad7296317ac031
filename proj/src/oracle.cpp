#include "fiat/oracle.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>
#include <vector>

#include <httplib.h>

#include "fiat/checkpoint.hpp"
#include "fiat/rng.hpp"

namespace fiat {

namespace {

std::string iso8601_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string truncate_at_stops(std::string text, const std::vector<std::string>& stops) {
  size_t cut = std::string::npos;
  for (const std::string& s : stops) {
    if (s.empty()) continue;
    size_t at = text.find(s);
    if (at != std::string::npos) cut = std::min(cut, at);
  }
  if (cut != std::string::npos) text.erase(cut);
  return text;
}

std::string format_leak(double leak) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", leak);
  return buf;
}

}  // namespace

void BackendConfig::validate() const {
  require(kind == "http" || kind == "mock", ErrorKind::ConfigError,
          "backend kind must be http or mock, got " + kind);
  require(timeout_seconds > 0.0, ErrorKind::ConfigError, "backend timeout must be positive");
  require(max_concurrent >= 1, ErrorKind::ConfigError, "max_concurrent must be at least 1");
  require(max_retries >= 1, ErrorKind::ConfigError, "max_retries must be at least 1");
  require(leak_strength >= 0.0 && leak_strength <= 1.0, ErrorKind::ConfigError,
          "leak_strength must lie in [0, 1]");
  if (kind == "http")
    require(!endpoint.empty(), ErrorKind::ConfigError, "http backend needs an endpoint");
}

std::string BackendConfig::id() const {
  if (kind == "http") return "http:" + model;
  return "mock:" + mock_rule + ":leak=" + format_leak(leak_strength) +
         ":seed=" + std::to_string(mock_seed);
}

void to_json(nlohmann::json& j, const BackendConfig& c) {
  j = {{"kind", c.kind},
       {"endpoint", c.endpoint},
       {"model", c.model},
       {"timeout_seconds", c.timeout_seconds},
       {"max_retries", c.max_retries},
       {"max_concurrent", c.max_concurrent},
       {"max_context_bytes", c.max_context_bytes},
       {"mock_rule", c.mock_rule},
       {"leak_strength", c.leak_strength},
       {"mock_seed", c.mock_seed}};
}

void from_json(const nlohmann::json& j, BackendConfig& c) {
  if (j.contains("kind")) j.at("kind").get_to(c.kind);
  if (j.contains("endpoint")) j.at("endpoint").get_to(c.endpoint);
  if (j.contains("model")) j.at("model").get_to(c.model);
  if (j.contains("timeout_seconds")) j.at("timeout_seconds").get_to(c.timeout_seconds);
  if (j.contains("max_retries")) j.at("max_retries").get_to(c.max_retries);
  if (j.contains("max_concurrent")) j.at("max_concurrent").get_to(c.max_concurrent);
  if (j.contains("max_context_bytes")) j.at("max_context_bytes").get_to(c.max_context_bytes);
  if (j.contains("mock_rule")) j.at("mock_rule").get_to(c.mock_rule);
  if (j.contains("leak_strength")) j.at("leak_strength").get_to(c.leak_strength);
  if (j.contains("mock_seed")) j.at("mock_seed").get_to(c.mock_seed);
}

std::string cache_key(const std::string& backend_id, const std::string& model,
                      const std::string& prompt, const DecodeParams& dp) {
  nlohmann::json canon = {
      {"backend", backend_id},
      {"model", model},
      {"prompt", prompt},
      {"decode", {{"max_tokens", dp.max_new_tokens}, {"temperature", 0.0}, {"stop", dp.stop}}},
  };
  return sha256_hex(canon.dump());
}

// --- mock backend ---

MockBackend::MockBackend(const BackendConfig& config)
    : rule_(config.mock_rule),
      leak_strength_(config.leak_strength),
      seed_(config.mock_seed) {}

void MockBackend::register_answers(const std::map<std::string, std::string>& answers) {
  for (const auto& [input, gold] : answers) answers_[input] = gold;
}

std::string mock_rationale_text(const std::string& input, const std::string& gold,
                                double leak_strength, uint64_t seed) {
  Rng rng(fnv1a(input) ^ seed);
  bool leak = !gold.empty() && rng.uniform() < leak_strength;
  if (!leak) return "the archive check returned: inconclusive.";
  if (gold == "yes") return "the archive check returned: confirmed.";
  if (gold == "no") return "the archive check returned: denied.";
  return "the records point to: " + gold + ".";
}

std::string MockBackend::complete(const std::string& prompt, const DecodeParams&) {
  if (rule_ == "reverse_last_line") {
    size_t nl = prompt.find_last_of('\n');
    std::string last = nl == std::string::npos ? prompt : prompt.substr(nl + 1);
    return std::string(last.rbegin(), last.rend());
  }
  require(rule_ == "rationale", ErrorKind::ConfigError, "unknown mock rule: " + rule_);

  // recover the example input from the prompt's final "Input:" line
  std::string input;
  size_t at = prompt.rfind("Input: ");
  if (at != std::string::npos && (at == 0 || prompt[at - 1] == '\n')) {
    size_t end = prompt.find('\n', at);
    if (end == std::string::npos) end = prompt.size();
    input = prompt.substr(at + 7, end - (at + 7));
  }
  std::string gold;
  auto it = answers_.find(input);
  if (it != answers_.end()) gold = it->second;

  // Direct answers are uninformed guesses; knowledge surfaces only in the
  // rationale. The trailing block serves ICL-style prompts that parse the
  // text after "Answer:".
  return mock_rationale_text(input, gold, leak_strength_, seed_) + "\n\nAnswer: yes";
}

// --- http backend ---

HttpBackend::HttpBackend(const BackendConfig& config) : config_(config) {}

std::string HttpBackend::complete(const std::string& prompt, const DecodeParams& dp) {
  nlohmann::json body = {
      {"model", config_.model},
      {"prompt", prompt},
      {"max_tokens", dp.max_new_tokens},
      {"temperature", 0.0},
      {"stop", dp.stop},
  };
  const std::string payload = body.dump();

  httplib::Client client(config_.endpoint);
  const auto timeout_ms =
      std::chrono::milliseconds(static_cast<long long>(config_.timeout_seconds * 1000.0));
  client.set_connection_timeout(timeout_ms);
  client.set_read_timeout(timeout_ms);
  client.set_write_timeout(timeout_ms);
  httplib::Headers headers;
  if (const char* token = std::getenv("FIAT_ORACLE_TOKEN"); token != nullptr && *token != '\0')
    headers.emplace("Authorization", std::string("Bearer ") + token);

  bool last_was_timeout = false;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 1) {
      // exponential backoff starting at 500 ms, doubling per retry
      auto backoff = std::chrono::milliseconds(500LL << (attempt - 2));
      std::this_thread::sleep_for(backoff);
    }
    auto result = client.Post("/v1/generate", headers, payload, "application/json");
    if (!result) {
      httplib::Error err = result.error();
      last_was_timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                         err == httplib::Error::Write;
      last_error = httplib::to_string(err);
      continue;  // connection failures and timeouts are retryable
    }
    if (result->status >= 500) {
      last_was_timeout = false;
      last_error = "server returned status " + std::to_string(result->status);
      continue;  // 5xx is retryable
    }
    if (result->status < 200 || result->status >= 300)
      raise(ErrorKind::MalformedResponse,
            "backend returned status " + std::to_string(result->status));
    nlohmann::json parsed = nlohmann::json::parse(result->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("text") || !parsed.at("text").is_string())
      raise(ErrorKind::MalformedResponse, "backend response lacks a string \"text\" field");
    return parsed.at("text").get<std::string>();
  }
  if (last_was_timeout)
    raise(ErrorKind::Timeout, "backend timed out after " + std::to_string(config_.max_retries) +
                                  " attempts: " + last_error);
  raise(ErrorKind::BackendUnavailable,
        "backend unavailable after " + std::to_string(config_.max_retries) +
            " attempts: " + last_error);
}

// --- oracle ---

Oracle::Oracle(BackendConfig config, std::filesystem::path cache_dir)
    : config_(std::move(config)), cache_dir_(std::move(cache_dir)) {
  config_.validate();
  if (config_.kind == "mock") {
    auto mock = std::make_unique<MockBackend>(config_);
    mock_ = mock.get();
    backend_ = std::move(mock);
  } else {
    backend_ = std::make_unique<HttpBackend>(config_);
  }
  std::filesystem::create_directories(cache_dir_);
}

std::filesystem::path Oracle::cache_path(const std::string& key) const {
  return cache_dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<std::string> Oracle::cache_lookup(const std::string& key) const {
  std::ifstream in(cache_path(key));
  if (!in.good()) return std::nullopt;
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  require(!j.is_discarded() && j.contains("text") && j.at("text").is_string(),
          ErrorKind::SchemaViolation, "corrupt cache entry " + cache_path(key).string());
  return j.at("text").get<std::string>();
}

void Oracle::cache_store(const std::string& key, const std::string& text) const {
  nlohmann::json entry = {
      {"prompt_hash", key},
      {"text", text},
      {"backend", config_.id()},
      {"created_at", iso8601_now()},
  };
  auto path = cache_path(key);
  std::filesystem::create_directories(path.parent_path());
  // write-then-rename so concurrent writers of the same key stay consistent
  auto tmp = path;
  tmp += "." + std::to_string(
                   std::hash<std::thread::id>{}(std::this_thread::get_id())) +
         ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::IoError, "cannot write cache entry " + tmp.string());
    out << entry.dump();
  }
  std::filesystem::rename(tmp, path);
}

OracleResponse Oracle::generate(const std::string& prompt, const DecodeParams& dp) {
  require(static_cast<int>(prompt.size()) <= config_.max_context_bytes,
          ErrorKind::SequenceTooLong,
          "prompt of " + std::to_string(prompt.size()) + " bytes exceeds backend context of " +
              std::to_string(config_.max_context_bytes));
  auto t0 = std::chrono::steady_clock::now();
  std::string key = cache_key(config_.id(), config_.model, prompt, dp);

  OracleResponse response;
  response.backend_id = config_.id();
  if (auto cached = cache_lookup(key)) {
    response.text = *cached;
    response.cache_hit = true;
  } else {
    backend_calls_.fetch_add(1);
    response.text = truncate_at_stops(backend_->complete(prompt, dp), dp.stop);
    response.cache_hit = false;
    cache_store(key, response.text);
  }
  response.latency_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return response;
}

OracleResponse Oracle::generate(const RenderedPrompt& prompt, const DecodeParams& dp) {
  return generate(prompt.text, dp);
}

std::vector<BatchItem> Oracle::batch_generate(const std::vector<std::string>& prompts,
                                              const DecodeParams& dp) {
  require(!prompts.empty(), ErrorKind::ConfigError, "batch_generate: empty prompt list");
  std::vector<BatchItem> items(prompts.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= prompts.size()) break;
      items[i].index = i;
      try {
        items[i].response = generate(prompts[i], dp);
        items[i].ok = true;
      } catch (const Error& e) {
        items[i].ok = false;
        items[i].error_kind = e.kind();
        items[i].error = "item " + std::to_string(i) + ": " + e.what();
      } catch (const std::exception& e) {
        items[i].ok = false;
        items[i].error_kind = ErrorKind::BackendUnavailable;
        items[i].error = "item " + std::to_string(i) + ": " + e.what();
      }
    }
  };
  size_t n_threads = std::min<size_t>(static_cast<size_t>(config_.max_concurrent), prompts.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  return items;
}

}  // namespace fiat
