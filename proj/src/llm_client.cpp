#include "faithdec/llm_client.hpp"

#include <thread>

#include "faithdec/log.hpp"
#include "httplib.h"
#include "json.hpp"

namespace faithdec {

std::string MarkerMockLlm::complete(const std::string& prompt) {
  std::string caption;
  std::string tags;
  bool have_caption = false;
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    auto nl = prompt.find('\n', pos);
    if (nl == std::string::npos) nl = prompt.size();
    const std::string_view line(prompt.data() + pos, nl - pos);
    if (line.starts_with("Caption: ")) {
      caption = std::string(line.substr(9));
      tags.clear();
      have_caption = true;
    } else if (have_caption && line.starts_with("Tags: ")) {
      tags = std::string(line.substr(6));
    }
    pos = nl + 1;
  }
  if (!have_caption) throw Error(ErrorCode::kService, "mock: prompt has no 'Caption: ' line");
  return tags.empty() ? "[PARA] " + caption : caption + " | " + tags;
}

HttpLlmClient::HttpLlmClient(HttpLlmConfig config) : config_(std::move(config)) {
  const std::string& url = config_.url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http") {
    throw Error(ErrorCode::kInvalidArgument, "LLM url must start with http://: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

void HttpLlmClient::wait_for_slot() {
  if (config_.rate_limit <= 0.0) return;
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(1.0 / config_.rate_limit));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(rate_mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

std::string HttpLlmClient::complete(const std::string& prompt) {
  wait_for_slot();
  nlohmann::ordered_json body;
  body["model"] = config_.model;
  body["prompt"] = prompt;
  body["temperature"] = config_.temperature;
  body["max_tokens"] = config_.max_tokens;

  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(config_.timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  auto res = client.Post(path_, body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::kService, "LLM request failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error(ErrorCode::kService, "LLM returned HTTP " + std::to_string(res->status));
  }
  const auto reply = nlohmann::json::parse(res->body, nullptr, false);
  if (reply.is_discarded() || !reply.is_object() || !reply.contains("text") ||
      !reply["text"].is_string()) {
    throw Error(ErrorCode::kService, "LLM reply lacks a string 'text'");
  }
  return reply["text"].get<std::string>();
}

Completion complete_with_retry(LlmClient& llm, const std::string& prompt,
                               const RetryPolicy& policy) {
  auto delay = policy.base_delay;
  for (int attempt = 1;; ++attempt) {
    try {
      Completion c{llm.complete(prompt), attempt - 1};
      if (c.retries > 0) log::info("completion succeeded after {} retries", c.retries);
      return c;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kService || attempt >= policy.max_attempts) throw;
      log::warn("completion attempt {} failed: {}", attempt, e.what());
      if (policy.sleep) {
        policy.sleep(delay);
      } else {
        std::this_thread::sleep_for(delay);
      }
      delay *= 2;
    }
  }
}

}  // namespace faithdec
