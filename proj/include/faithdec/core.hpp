#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faithdec/error.hpp"

namespace faithdec {

using TokenId = std::uint32_t;

struct VocabInfo {
  std::size_t vocab_size = 0;
  TokenId bos_id = 0;
  TokenId eos_id = 0;
  std::vector<std::string> token_strings;

  /// Throws kRange if the vocabulary is inconsistent.
  void validate() const;
  bool contains(TokenId id) const noexcept { return id < vocab_size; }
};

/// A BOS-rooted token path with its cumulative natural-log model probability.
class Hypothesis {
 public:
  /// The root hypothesis [BOS] with log-probability 0.
  static Hypothesis root(const VocabInfo& vocab);

  /// Checks the BOS/EOS/logprob invariants against `vocab`.
  Hypothesis(std::vector<TokenId> tokens, double logprob, const VocabInfo& vocab);

  /// Returns a copy extended by one token. Throws kPrecondition if already
  /// completed.
  Hypothesis extend(TokenId token, double step_logprob, TokenId eos_id) const;

  const std::vector<TokenId>& tokens() const noexcept { return tokens_; }
  double logprob() const noexcept { return logprob_; }
  bool completed() const noexcept { return completed_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  /// logprob divided by the number of tokens after BOS.
  double length_normalized_logprob() const noexcept;

  friend bool operator==(const Hypothesis&, const Hypothesis&) = default;

 private:
  Hypothesis() = default;

  std::vector<TokenId> tokens_;
  double logprob_ = 0.0;
  bool completed_ = false;
};

struct DecodeConfig {
  std::uint32_t beam_width = 4;
  double alpha = 0.8;
  std::uint32_t max_len = 20;
  std::uint32_t rollout_max_len = 30;
  std::uint32_t expansions_per_beam = 8;
  std::uint64_t seed = 0;
  std::uint32_t n_best = 1;
  bool rollout_cache = true;
};

/// A DecodeConfig that has passed validate_config. Decoders only accept this.
class ValidatedConfig {
 public:
  const DecodeConfig& get() const noexcept { return cfg_; }
  const DecodeConfig* operator->() const noexcept { return &cfg_; }

 private:
  friend ValidatedConfig validate_config(const DecodeConfig& cfg);
  explicit ValidatedConfig(const DecodeConfig& cfg) : cfg_(cfg) {}
  DecodeConfig cfg_;
};

/// Throws kRange naming the offending field.
ValidatedConfig validate_config(const DecodeConfig& cfg);

/// ASCII-lowercases, collapses whitespace runs to one space and trims.
std::string normalize_text(std::string_view s);

/// normalize_text followed by a split on single spaces.
std::vector<std::string> tokenize_words(std::string_view s);

}  // namespace faithdec
