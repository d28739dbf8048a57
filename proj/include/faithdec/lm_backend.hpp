#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faithdec/core.hpp"

namespace faithdec {

/// Conditional next-token distribution for one conditioning input.
///
/// The public entry point checks the prefix contract and then defers to the
/// backend. Returned vectors cover the full vocabulary in natural-log scale.
class LmSession {
 public:
  virtual ~LmSession() = default;

  virtual const VocabInfo& vocab() const = 0;
  virtual const std::string& context_id() const = 0;

  /// Throws kPrecondition unless `prefix` starts with BOS, holds only valid
  /// ids and contains no EOS.
  std::vector<double> next_logprobs(std::span<const TokenId> prefix);

 protected:
  virtual std::vector<double> compute_logprobs(std::span<const TokenId> prefix) = 0;
};

class LmBackend {
 public:
  virtual ~LmBackend() = default;
  virtual std::unique_ptr<LmSession> open_session(std::string_view context_id) = 0;
};

/// An explicit probability table keyed by (context_id, prefix).
///
/// Prefix keys exclude the leading BOS. Lookup order is the exact context,
/// then the wildcard context "*", then the fallback distribution.
class TabularLM final : public LmBackend {
 public:
  using Key = std::pair<std::string, std::vector<TokenId>>;

  TabularLM(VocabInfo vocab, std::vector<double> fallback,
            std::map<Key, std::vector<double>> rows);

  const VocabInfo& vocab() const noexcept { return vocab_; }
  std::unique_ptr<LmSession> open_session(std::string_view context_id) override;

  /// Probability vector for (context_id, prefix-with-BOS).
  const std::vector<double>& distribution(std::string_view context_id,
                                          std::span<const TokenId> prefix) const;

  std::size_t row_count() const noexcept { return rows_.size(); }

 private:
  VocabInfo vocab_;
  std::vector<double> fallback_;
  std::map<Key, std::vector<double>, std::less<>> rows_;
};

/// Parses the line-oriented table format. Errors carry the line number.
TabularLM parse_tabular_lm(std::string_view text);
TabularLM load_tabular_lm(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace faithdec
