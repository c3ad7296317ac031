#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "fiat/model.hpp"
#include "fiat/prompt.hpp"

namespace fiat {

struct BackendConfig {
  std::string kind = "mock";  // "http" | "mock"
  std::string endpoint;       // http://host:port
  std::string model = "mock-oracle";
  double timeout_seconds = 10.0;
  int max_retries = 3;
  int max_concurrent = 4;
  int max_context_bytes = 4096;

  // mock knobs
  std::string mock_rule = "rationale";  // "rationale" | "reverse_last_line"
  double leak_strength = 1.0;
  uint64_t mock_seed = 17;

  void validate() const;
  /// Stable identity used in cache keys and response provenance.
  std::string id() const;
};

void to_json(nlohmann::json& j, const BackendConfig& c);
void from_json(const nlohmann::json& j, BackendConfig& c);

struct OracleResponse {
  std::string text;  // verbatim backend output, stop-sequence-truncated
  bool cache_hit = false;
  double latency_ms = 0.0;
  std::string backend_id;
};

/// SHA-256 over the canonical JSON of {backend, model, prompt, decode params}
/// (sorted keys, no insignificant whitespace); 64 hex chars.
std::string cache_key(const std::string& backend_id, const std::string& model,
                      const std::string& prompt, const DecodeParams& dp);

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string complete(const std::string& prompt, const DecodeParams& dp) = 0;
};

/// Deterministic test double for the frozen big model. Directly asked for an
/// answer it guesses blindly; its task knowledge surfaces only inside the
/// rationale it writes, where a gold-correlated hint appears with probability
/// leak_strength (a distractor otherwise).
class MockBackend : public Backend {
 public:
  explicit MockBackend(const BackendConfig& config);

  /// Teaches the mock the gold answers, keyed by the example input text as it
  /// appears on the prompt's final "Input:" line.
  void register_answers(const std::map<std::string, std::string>& answers);

  std::string complete(const std::string& prompt, const DecodeParams& dp) override;

 private:
  std::string rule_;
  double leak_strength_;
  uint64_t seed_;
  std::map<std::string, std::string> answers_;
};

/// Hint text for a single example; seeded and deterministic per input.
std::string mock_rationale_text(const std::string& input, const std::string& gold,
                                double leak_strength, uint64_t seed);

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(const BackendConfig& config);
  std::string complete(const std::string& prompt, const DecodeParams& dp) override;

 private:
  BackendConfig config_;
};

struct BatchItem {
  size_t index = 0;
  bool ok = false;
  OracleResponse response;
  ErrorKind error_kind = ErrorKind::BackendUnavailable;
  std::string error;
};

/// Backend plus a persistent response cache (one JSON file per key under
/// {cache_dir}/{first two hex chars}/{key}.json).
class Oracle {
 public:
  Oracle(BackendConfig config, std::filesystem::path cache_dir);

  OracleResponse generate(const std::string& prompt, const DecodeParams& dp);
  OracleResponse generate(const RenderedPrompt& prompt, const DecodeParams& dp);

  /// Results are positionally aligned with the prompts; failures carry the
  /// item index and error kind instead of aborting the batch.
  std::vector<BatchItem> batch_generate(const std::vector<std::string>& prompts,
                                        const DecodeParams& dp);

  MockBackend* mock() { return mock_; }
  size_t backend_calls() const { return backend_calls_.load(); }
  const BackendConfig& config() const { return config_; }
  const std::filesystem::path& cache_dir() const { return cache_dir_; }

 private:
  std::filesystem::path cache_path(const std::string& key) const;
  std::optional<std::string> cache_lookup(const std::string& key) const;
  void cache_store(const std::string& key, const std::string& text) const;

  BackendConfig config_;
  std::filesystem::path cache_dir_;
  std::unique_ptr<Backend> backend_;
  MockBackend* mock_ = nullptr;
  std::atomic<size_t> backend_calls_{0};
};

}  // namespace fiat
