#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace facetpipe {

struct GenerationRequest {
  std::string prompt;
  int max_new_tokens = 128;
  double temperature = 0.1;
  double top_p = 1.0;
  std::vector<std::string> stop_sequences;
  std::optional<std::uint64_t> seed;
};

struct GenerationResponse {
  std::string text;
  std::string backend_id;
  std::int64_t latency_ms = 0;
  int attempt_count = 1;
};

enum class BackendKind { kHttp, kMock };

// A mock rule answers prompts matching `key` under `match`; rules are tried
// in order. With several responses, the pick is a pure function of
// (prompt, seed).
struct MockRule {
  enum class Match { kExact, kSuffix, kContains };

  Match match = Match::kExact;
  std::string key;
  std::vector<std::string> responses;
};

struct BackendConfig {
  BackendKind kind = BackendKind::kMock;
  std::string endpoint_url;
  std::string model;  // optional "model" field of the completions body
  int timeout_ms = 30000;
  int max_retries = 3;
  int max_concurrency = 4;
  std::map<std::string, std::string> headers;
  int backoff_base_ms = 250;
  double backoff_factor = 2.0;
  double jitter_fraction = 0.1;
  std::vector<MockRule> mock_rules;
  std::string mock_table_path;  // informational; rules are already loaded
};

// Throws ConfigError if an invariant of the config does not hold.
void validate(const BackendConfig& config);
void validate(const GenerationRequest& request);

// FACETPIPE_BACKEND_URL replaces the endpoint; FACETPIPE_BACKEND_KEY adds a
// bearer Authorization header.
void apply_env_overrides(BackendConfig& config);

// Mock fixture: JSON array of {"match": "exact|suffix|contains", "key": ..,
// "response": .. | "responses": [..]}.
std::vector<MockRule> load_mock_rules(const std::string& path);
std::vector<MockRule> parse_mock_rules(const std::string& json_text);

// Fallback answer of the mock: the last '...' or "..." quoted span in the
// prompt, else the trimmed prompt.
std::string last_quoted_string(const std::string& prompt);

// Nominal wait before retry number `retry` (1-based): base * factor^(retry-1),
// scaled by a jitter factor in [1 - j, 1 + j] drawn from (seed, retry).
std::chrono::milliseconds backoff_delay(const BackendConfig& config, int retry, std::uint64_t seed);

class Backend {
 public:
  virtual ~Backend() = default;

  virtual GenerationResponse generate(const GenerationRequest& request) const = 0;
  virtual std::string id() const = 0;
  virtual int max_concurrency() const = 0;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(std::vector<MockRule> rules, int max_concurrency = 4, std::string id = "mock");

  GenerationResponse generate(const GenerationRequest& request) const override;
  std::string id() const override { return id_; }
  int max_concurrency() const override { return max_concurrency_; }

 private:
  std::vector<MockRule> rules_;
  int max_concurrency_;
  std::string id_;
};

// OpenAI-compatible completions client. Retries transport failures and 5xx
// with exponential backoff; 4xx is fatal. Safe to share across threads.
class HttpBackend final : public Backend {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpBackend(BackendConfig config, Sleeper sleeper = {});

  GenerationResponse generate(const GenerationRequest& request) const override;
  std::string id() const override;
  int max_concurrency() const override { return config_.max_concurrency; }

  const BackendConfig& config() const noexcept { return config_; }

 private:
  BackendConfig config_;
  Sleeper sleeper_;
  std::string scheme_host_port_;
  std::string path_;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

GenerationResponse generate(const BackendConfig& config, const GenerationRequest& request);

// Responses come back in input order. At most backend.max_concurrency()
// requests are in flight. The first failure stops dispatch and is rethrown
// as BatchError carrying its index.
std::vector<GenerationResponse> generate_batch(const Backend& backend, std::span<const GenerationRequest> requests);
std::vector<GenerationResponse> generate_batch(const BackendConfig& config,
                                               std::span<const GenerationRequest> requests);

}  // namespace facetpipe
