#pragma once

#include <chrono>
#include <functional>
#include <mutex>
#include <string>

#include "faithdec/error.hpp"

namespace faithdec {

/// A text-completion service. Implementations must be safe to call from
/// several threads. Failures raise kService.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Deterministic stand-in for a completion service. It reads the last
/// "Caption: " line of the prompt; if a "Tags: " line follows, it answers
/// "<caption> | <tags>", otherwise "[PARA] <caption>".
class MarkerMockLlm final : public LlmClient {
 public:
  std::string complete(const std::string& prompt) override;
};

struct HttpLlmConfig {
  std::string url;  // http://host:port/path
  std::string model = "vicuna";
  double temperature = 0.7;
  int max_tokens = 128;
  double timeout_seconds = 30.0;
  /// Maximum requests per second across threads; 0 disables the cap.
  double rate_limit = 0.0;
};

/// POST {"model","prompt","temperature","max_tokens"} -> {"text"}.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(HttpLlmConfig config);
  std::string complete(const std::string& prompt) override;

 private:
  void wait_for_slot();

  HttpLlmConfig config_;
  std::string scheme_host_port_;
  std::string path_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{200};
  /// Replaced in tests to avoid real sleeps.
  std::function<void(std::chrono::milliseconds)> sleep;
};

struct Completion {
  std::string text;
  int retries = 0;
};

/// Calls `llm` up to max_attempts times, doubling the delay after each
/// kService failure. The last failure is rethrown.
Completion complete_with_retry(LlmClient& llm, const std::string& prompt,
                               const RetryPolicy& policy);

}  // namespace faithdec
