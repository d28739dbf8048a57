#pragma once

// Test-only helpers: random tabular LMs, an exhaustive sequence enumerator
// and a call-counting session wrapper.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "faithdec/decoder.hpp"
#include "faithdec/embedding.hpp"
#include "faithdec/lm_backend.hpp"

namespace faithdec::testing {

inline VocabInfo toy_vocab(std::size_t n) {
  VocabInfo v;
  v.vocab_size = n;
  v.bos_id = 0;
  v.eos_id = 1;
  v.token_strings = {"<s>", "</s>"};
  for (std::size_t i = 2; i < n; ++i) v.token_strings.push_back("w" + std::to_string(i));
  return v;
}

struct ToyInstance {
  std::unique_ptr<TabularLM> lm;
  std::map<std::string, EmbeddingVector, std::less<>> audio;
  std::string context = "clip";
};

/// Random LM over `vocab_size` tokens with a row for every prefix up to
/// max_len - 1 tokens. Some entries are zero; BOS occasionally receives
/// mass so the never-generate-BOS rule is exercised. With `ties` the weights
/// come from {0, 1, 2} so equal scores are common.
inline ToyInstance random_toy(std::uint64_t seed, std::size_t vocab_size, std::uint32_t max_len,
                              bool ties = false) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto vocab = toy_vocab(vocab_size);

  std::map<TabularLM::Key, std::vector<double>> rows;
  std::function<void(std::vector<TokenId>&)> visit = [&](std::vector<TokenId>& prefix) {
    std::vector<double> p(vocab_size);
    double sum = 0.0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      if (i == vocab.bos_id) {
        p[i] = unit(rng) < 0.2 ? unit(rng) : 0.0;
        if (ties) p[i] = 0.0;
      } else {
        p[i] = unit(rng) < 0.15 ? 0.0 : unit(rng);
        if (ties) p[i] = static_cast<double>(rng() % 3);
      }
      sum += p[i];
    }
    if (sum == 0.0) {
      p[vocab.eos_id] = 1.0;
      sum = 1.0;
    }
    for (double& x : p) x /= sum;
    rows.emplace(TabularLM::Key{"clip", prefix}, std::move(p));
    if (prefix.size() + 2 >= max_len) return;
    for (TokenId t = 2; t < vocab_size; ++t) {
      prefix.push_back(t);
      visit(prefix);
      prefix.pop_back();
    }
  };
  std::vector<TokenId> root;
  visit(root);

  ToyInstance inst;
  inst.lm = std::make_unique<TabularLM>(vocab, std::vector<double>{}, std::move(rows));
  std::vector<double> audio(vocab_size);
  for (double& a : audio) a = unit(rng) * 1.2 - 0.2;
  audio[2 % vocab_size] += 0.5;
  inst.audio.emplace("clip", EmbeddingVector(std::move(audio)));
  return inst;
}

struct Enumerated {
  std::vector<TokenId> tokens;
  double logprob;
};

/// Every complete sequence a decoder with unlimited width could produce:
/// BOS is never generated, impossible tokens are skipped and the last slot
/// before max_len is EOS.
inline std::vector<Enumerated> enumerate_sequences(LmSession& session, std::uint32_t max_len) {
  const auto& v = session.vocab();
  std::vector<Enumerated> out;
  std::function<void(std::vector<TokenId>&, double)> walk = [&](std::vector<TokenId>& prefix,
                                                              double lp_sum) {
    const auto lp = session.next_logprobs(prefix);
    std::vector<TokenId> next;
    if (prefix.size() + 1 < max_len) {
      for (TokenId t = 0; t < lp.size(); ++t) {
        if (t != v.bos_id && lp[t] != -std::numeric_limits<double>::infinity()) next.push_back(t);
      }
    }
    if (next.empty()) next.push_back(v.eos_id);
    for (TokenId t : next) {
      prefix.push_back(t);
      const double total = lp_sum + lp[t];
      if (t == v.eos_id) {
        out.push_back({prefix, total});
      } else {
        walk(prefix, total);
      }
      prefix.pop_back();
    }
  };
  std::vector<TokenId> root{v.bos_id};
  walk(root, 0.0);
  return out;
}

/// Counts next_logprobs calls on a wrapped session.
class CountingSession final : public LmSession {
 public:
  explicit CountingSession(LmSession& inner) : inner_(inner) {}

  const VocabInfo& vocab() const override { return inner_.vocab(); }
  const std::string& context_id() const override { return inner_.context_id(); }
  std::size_t calls() const { return calls_; }

 protected:
  std::vector<double> compute_logprobs(std::span<const TokenId> prefix) override {
    ++calls_;
    return inner_.next_logprobs(prefix);
  }

 private:
  LmSession& inner_;
  std::size_t calls_ = 0;
};

/// Cosine of bag-of-words count vectors, computed independently of the
/// library: counts words by linear scan over the vocabulary strings.
inline double brute_force_bow_cosine(const VocabInfo& v, const std::string& a,
                                     const std::string& b) {
  auto counts = [&](const std::string& s) {
    std::vector<double> c(v.vocab_size, 0.0);
    std::string word;
    auto flush = [&] {
      if (word.empty()) return;
      for (std::size_t i = 0; i < v.vocab_size; ++i) {
        if (v.token_strings[i] == word) {
          c[i] += 1;
          break;
        }
      }
      word.clear();
    };
    for (char ch : s) {
      if (ch == ' ' || ch == '\t' || ch == '\n') {
        flush();
      } else {
        word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      }
    }
    flush();
    return c;
  };
  const auto x = counts(a);
  const auto y = counts(b);
  double dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  return dot / std::sqrt(nx * ny);
}

}  // namespace faithdec::testing
