#include "faithdec/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace faithdec {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kRange: return "range";
    case ErrorCode::kParse: return "parse";
    case ErrorCode::kNormalization: return "normalization";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kZeroVector: return "zero_vector";
    case ErrorCode::kPrecondition: return "precondition";
    case ErrorCode::kBackendUnavailable: return "backend_unavailable";
    case ErrorCode::kBackend: return "backend";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kService: return "service";
    case ErrorCode::kEmptyResponse: return "empty_response";
    case ErrorCode::kTooFewTags: return "too_few_tags";
    case ErrorCode::kRender: return "render";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void VocabInfo::validate() const {
  if (vocab_size == 0) throw Error(ErrorCode::kRange, "vocab_size must be positive");
  if (bos_id >= vocab_size) throw Error(ErrorCode::kRange, "bos_id out of range");
  if (eos_id >= vocab_size) throw Error(ErrorCode::kRange, "eos_id out of range");
  if (bos_id == eos_id) throw Error(ErrorCode::kRange, "bos_id must differ from eos_id");
  if (token_strings.size() != vocab_size) {
    throw Error(ErrorCode::kRange, "token_strings must have vocab_size entries");
  }
}

Hypothesis Hypothesis::root(const VocabInfo& vocab) {
  Hypothesis h;
  h.tokens_.push_back(vocab.bos_id);
  return h;
}

Hypothesis::Hypothesis(std::vector<TokenId> tokens, double logprob,
                       const VocabInfo& vocab)
    : tokens_(std::move(tokens)), logprob_(logprob) {
  if (tokens_.empty() || tokens_.front() != vocab.bos_id) {
    throw Error(ErrorCode::kPrecondition, "hypothesis must start with bos");
  }
  if (!(logprob_ <= 0.0)) {
    throw Error(ErrorCode::kPrecondition, "hypothesis logprob must be <= 0");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!vocab.contains(tokens_[i])) {
      throw Error(ErrorCode::kPrecondition, "hypothesis token out of vocabulary");
    }
    if (tokens_[i] == vocab.eos_id && i + 1 != tokens_.size()) {
      throw Error(ErrorCode::kPrecondition, "eos may only appear as the last token");
    }
  }
  completed_ = tokens_.back() == vocab.eos_id;
}

Hypothesis Hypothesis::extend(TokenId token, double step_logprob, TokenId eos_id) const {
  if (completed_) throw Error(ErrorCode::kPrecondition, "cannot extend a completed hypothesis");
  Hypothesis h;
  h.tokens_.reserve(tokens_.size() + 1);
  h.tokens_ = tokens_;
  h.tokens_.push_back(token);
  h.logprob_ = logprob_ + step_logprob;
  h.completed_ = token == eos_id;
  return h;
}

double Hypothesis::length_normalized_logprob() const noexcept {
  const auto steps = tokens_.size() > 1 ? tokens_.size() - 1 : 1;
  return logprob_ / static_cast<double>(steps);
}

ValidatedConfig validate_config(const DecodeConfig& cfg) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::kRange, field + ": " + why);
  };
  if (cfg.beam_width == 0) fail("beam_width", "must be positive");
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) fail("alpha", "must lie in [0,1]");
  // Room for at least BOS and EOS.
  if (cfg.max_len < 2) fail("max_len", "must be at least 2");
  if (cfg.rollout_max_len < cfg.max_len) fail("rollout_max_len", "must be >= max_len");
  if (cfg.expansions_per_beam == 0) fail("expansions_per_beam", "must be positive");
  if (cfg.n_best == 0) fail("n_best", "must be positive");
  if (cfg.n_best > cfg.beam_width) fail("n_best", "must be <= beam_width");
  return ValidatedConfig(cfg);
}

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace

std::string normalize_text(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : c);
  }
  return out;
}

std::vector<std::string> tokenize_words(std::string_view s) {
  std::vector<std::string> words;
  const std::string norm = normalize_text(s);
  std::size_t start = 0;
  while (start < norm.size()) {
    auto end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    words.emplace_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return words;
}

}  // namespace faithdec
