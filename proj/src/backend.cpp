#include "facetpipe/backend.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "facetpipe/error.hpp"
#include "facetpipe/text.hpp"

namespace facetpipe {

using json = nlohmann::json;

void validate(const BackendConfig& config) {
  if (config.max_concurrency < 1) throw ConfigError("backend: max_concurrency must be >= 1");
  if (config.timeout_ms < 1) throw ConfigError("backend: timeout_ms must be >= 1");
  if (config.max_retries < 0) throw ConfigError("backend: max_retries must be >= 0");
  if (config.backoff_base_ms < 0 || config.backoff_factor < 1.0) {
    throw ConfigError("backend: backoff base must be >= 0 and factor >= 1");
  }
  if (config.jitter_fraction < 0.0 || config.jitter_fraction >= 1.0) {
    throw ConfigError("backend: jitter_fraction must be in [0, 1)");
  }
  if (config.kind == BackendKind::kHttp && config.endpoint_url.empty()) {
    throw ConfigError("backend: http backend requires endpoint_url");
  }
}

void validate(const GenerationRequest& request) {
  if (request.prompt.empty()) throw ContractViolation("generation request: empty prompt");
  if (request.max_new_tokens < 1) throw ContractViolation("generation request: max_new_tokens must be >= 1");
  if (!(request.temperature >= 0.0)) throw ContractViolation("generation request: temperature must be >= 0");
  if (!(request.top_p > 0.0 && request.top_p <= 1.0)) {
    throw ContractViolation("generation request: top_p must be in (0, 1]");
  }
}

void apply_env_overrides(BackendConfig& config) {
  if (const char* url = std::getenv("FACETPIPE_BACKEND_URL"); url != nullptr && *url != '\0') {
    config.endpoint_url = url;
  }
  if (const char* key = std::getenv("FACETPIPE_BACKEND_KEY"); key != nullptr && *key != '\0') {
    config.headers["Authorization"] = std::string("Bearer ") + key;
  }
}

std::vector<MockRule> parse_mock_rules(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("mock table: ") + e.what());
  }
  if (!root.is_array()) throw ConfigError("mock table must be a JSON array of rules");
  std::vector<MockRule> rules;
  for (const json& r : root) {
    MockRule rule;
    const std::string match = r.value("match", "exact");
    if (match == "exact") {
      rule.match = MockRule::Match::kExact;
    } else if (match == "suffix") {
      rule.match = MockRule::Match::kSuffix;
    } else if (match == "contains") {
      rule.match = MockRule::Match::kContains;
    } else {
      throw ConfigError("mock table: unknown match kind '" + match + "'");
    }
    rule.key = r.at("key").get<std::string>();
    if (r.contains("responses")) {
      rule.responses = r.at("responses").get<std::vector<std::string>>();
    } else {
      rule.responses.push_back(r.at("response").get<std::string>());
    }
    if (rule.responses.empty()) throw ConfigError("mock table: rule '" + rule.key + "' has no response");
    rules.push_back(std::move(rule));
  }
  return rules;
}

std::vector<MockRule> load_mock_rules(const std::string& path) { return parse_mock_rules(read_file(path)); }

std::string last_quoted_string(const std::string& prompt) {
  // Scan right to left for a closing quote, then its opener of the same kind.
  for (std::size_t close = prompt.size(); close-- > 0;) {
    const char q = prompt[close];
    if (q != '\'' && q != '"') continue;
    if (close == 0) break;
    const std::size_t open = prompt.rfind(q, close - 1);
    if (open == std::string::npos) continue;
    return prompt.substr(open + 1, close - open - 1);
  }
  return std::string(trim(prompt));
}

std::chrono::milliseconds backoff_delay(const BackendConfig& config, int retry, std::uint64_t seed) {
  const double nominal = config.backoff_base_ms * std::pow(config.backoff_factor, retry - 1);
  SplitMix64 rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(retry)));
  const double scale = 1.0 + config.jitter_fraction * (2.0 * rng.uniform() - 1.0);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::ceil(nominal * scale)));
}

// ---- mock ----

MockBackend::MockBackend(std::vector<MockRule> rules, int max_concurrency, std::string id)
    : rules_(std::move(rules)), max_concurrency_(max_concurrency), id_(std::move(id)) {
  if (max_concurrency_ < 1) throw ConfigError("mock backend: max_concurrency must be >= 1");
}

GenerationResponse MockBackend::generate(const GenerationRequest& request) const {
  validate(request);
  GenerationResponse resp;
  resp.backend_id = id_;
  resp.attempt_count = 1;
  resp.latency_ms = 0;
  for (const MockRule& rule : rules_) {
    bool hit = false;
    switch (rule.match) {
      case MockRule::Match::kExact:
        hit = request.prompt == rule.key;
        break;
      case MockRule::Match::kSuffix:
        hit = ends_with(request.prompt, rule.key);
        break;
      case MockRule::Match::kContains:
        hit = request.prompt.find(rule.key) != std::string::npos;
        break;
    }
    if (!hit) continue;
    std::size_t pick = 0;
    if (rule.responses.size() > 1) {
      SplitMix64 rng(fnv1a(request.prompt) ^ request.seed.value_or(0));
      pick = rng.below(rule.responses.size());
    }
    resp.text = std::string(trim(rule.responses[pick]));
    return resp;
  }
  resp.text = std::string(trim(last_quoted_string(request.prompt)));
  return resp;
}

// ---- http ----

namespace {

bool is_retryable_status(int status) { return status >= 500; }

}  // namespace

HttpBackend::HttpBackend(BackendConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(std::move(sleeper)) {
  config_.kind = BackendKind::kHttp;
  validate(config_);
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };

  const std::string& url = config_.endpoint_url;
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("backend: endpoint_url lacks a scheme: " + url);
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ConfigError("backend: unsupported scheme '" + scheme + "'");
  const std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    scheme_host_port_ = url;
    path_ = "/v1/completions";
  } else {
    scheme_host_port_ = url.substr(0, path_start);
    path_ = url.substr(path_start);
  }
}

std::string HttpBackend::id() const {
  return config_.model.empty() ? config_.endpoint_url : config_.model + "@" + config_.endpoint_url;
}

GenerationResponse HttpBackend::generate(const GenerationRequest& request) const {
  validate(request);
  json body;
  if (!config_.model.empty()) body["model"] = config_.model;
  body["prompt"] = request.prompt;
  body["max_tokens"] = request.max_new_tokens;
  body["temperature"] = request.temperature;
  body["top_p"] = request.top_p;
  if (!request.stop_sequences.empty()) body["stop"] = request.stop_sequences;
  if (request.seed) body["seed"] = *request.seed;
  const std::string payload = body.dump();

  httplib::Headers headers;
  for (const auto& [k, v] : config_.headers) headers.emplace(k, v);

  const std::uint64_t jitter_seed = request.seed.value_or(fnv1a(request.prompt));
  const auto started = std::chrono::steady_clock::now();
  const int max_attempts = config_.max_retries + 1;
  std::string last_error;

  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    httplib::Client client(scheme_host_port_);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 200 && res->status < 300) {
      json reply;
      try {
        reply = json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw BackendError(BackendError::Kind::kProtocol, std::string("malformed response body: ") + e.what(),
                           attempt);
      }
      const json* text = nullptr;
      if (reply.is_object() && reply.contains("choices") && reply["choices"].is_array() &&
          !reply["choices"].empty() && reply["choices"][0].is_object() &&
          reply["choices"][0].contains("text") && reply["choices"][0]["text"].is_string()) {
        text = &reply["choices"][0]["text"];
      }
      if (text == nullptr) {
        throw BackendError(BackendError::Kind::kProtocol, "response lacks choices[0].text", attempt);
      }
      GenerationResponse resp;
      resp.text = std::string(trim(text->get<std::string>()));
      resp.backend_id = id();
      resp.attempt_count = attempt;
      resp.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - started)
                            .count();
      return resp;
    } else if (res->status < 400) {
      throw BackendError(BackendError::Kind::kProtocol, "unexpected HTTP " + std::to_string(res->status), attempt);
    } else if (!is_retryable_status(res->status)) {
      throw BackendError(BackendError::Kind::kFatalRequest,
                         "HTTP " + std::to_string(res->status) + " from " + config_.endpoint_url, attempt);
    } else {
      last_error = "HTTP " + std::to_string(res->status);
    }

    if (attempt < max_attempts) {
      const auto delay = backoff_delay(config_, attempt, jitter_seed);
      spdlog::debug("{}: attempt {} failed ({}); retrying in {} ms", config_.endpoint_url, attempt, last_error,
                    delay.count());
      sleeper_(delay);
    }
  }
  throw BackendError(BackendError::Kind::kRetryExhausted,
                     "gave up after " + std::to_string(max_attempts) + " attempts: " + last_error, max_attempts);
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  validate(config);
  if (config.kind == BackendKind::kMock) {
    return std::make_unique<MockBackend>(config.mock_rules, config.max_concurrency);
  }
  return std::make_unique<HttpBackend>(config);
}

GenerationResponse generate(const BackendConfig& config, const GenerationRequest& request) {
  return make_backend(config)->generate(request);
}

std::vector<GenerationResponse> generate_batch(const Backend& backend, std::span<const GenerationRequest> requests) {
  if (requests.empty()) throw ContractViolation("generate_batch: empty request list");
  for (const GenerationRequest& r : requests) validate(r);

  std::vector<GenerationResponse> responses(requests.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::size_t error_index = requests.size();
  std::exception_ptr error;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        responses[i] = backend.generate(requests[i]);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
        failed.store(true);
      }
    }
  };

  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(1, backend.max_concurrency())), requests.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const BackendError& e) {
      throw BatchError(error_index, e);
    }
  }
  return responses;
}

std::vector<GenerationResponse> generate_batch(const BackendConfig& config,
                                               std::span<const GenerationRequest> requests) {
  return generate_batch(*make_backend(config), requests);
}

}  // namespace facetpipe
