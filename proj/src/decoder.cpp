#include "faithdec/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace faithdec {

std::string detokenize(const VocabInfo& vocab, std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId id : tokens) {
    if (!vocab.contains(id)) {
      throw Error(ErrorCode::kInvalidArgument, "token id " + std::to_string(id) + " not in vocabulary");
    }
    if (id == vocab.bos_id || id == vocab.eos_id) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token_strings[id];
  }
  return out;
}

namespace {

TokenId greedy_token(const VocabInfo& vocab, const std::vector<double>& logprobs) {
  TokenId best = vocab.eos_id;
  double best_lp = -std::numeric_limits<double>::infinity();
  bool found = false;
  for (TokenId id = 0; id < logprobs.size(); ++id) {
    if (id == vocab.bos_id) continue;
    if (!found || logprobs[id] > best_lp) {
      best = id;
      best_lp = logprobs[id];
      found = true;
    }
  }
  return best;
}

// Rollout that also reports every intermediate prefix it passed through.
Hypothesis rollout_path(LmSession& session, const Hypothesis& prefix, std::uint32_t cap,
                        std::vector<std::vector<TokenId>>* visited) {
  const VocabInfo& vocab = session.vocab();
  Hypothesis h = prefix;
  while (!h.completed()) {
    if (visited) visited->push_back(h.tokens());
    const auto lp = session.next_logprobs(h.tokens());
    if (h.size() + 1 >= cap) {
      h = h.extend(vocab.eos_id, lp[vocab.eos_id], vocab.eos_id);
    } else {
      const TokenId t = greedy_token(vocab, lp);
      h = h.extend(t, lp[t], vocab.eos_id);
    }
  }
  return h;
}

struct Expansion {
  TokenId token;
  double logprob;
};

// Tokens a live beam may grow by, best first. BOS is never generated and
// impossible tokens are skipped; the final slot only admits EOS.
std::vector<Expansion> expansions(const VocabInfo& vocab, const std::vector<double>& lp,
                                  std::size_t beam_size, std::uint32_t max_len,
                                  std::uint32_t limit) {
  if (beam_size + 1 >= max_len) return {{vocab.eos_id, lp[vocab.eos_id]}};
  std::vector<Expansion> out;
  for (TokenId id = 0; id < lp.size(); ++id) {
    if (id == vocab.bos_id || lp[id] == -std::numeric_limits<double>::infinity()) continue;
    out.push_back({id, lp[id]});
  }
  if (out.empty()) return {{vocab.eos_id, lp[vocab.eos_id]}};
  const auto keep = std::min<std::size_t>(limit, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    [](const Expansion& a, const Expansion& b) {
                      if (a.logprob != b.logprob) return a.logprob > b.logprob;
                      return a.token < b.token;
                    });
  out.resize(keep);
  return out;
}

// Model-score order shared by both searches: higher cumulative logprob, then
// the lexicographically smaller token sequence.
bool model_order(const Hypothesis& a, const Hypothesis& b) {
  if (a.logprob() != b.logprob()) return a.logprob() > b.logprob();
  return a.tokens() < b.tokens();
}

bool final_model_order(const Hypothesis& a, const Hypothesis& b) {
  const double la = a.length_normalized_logprob();
  const double lb = b.length_normalized_logprob();
  if (la != lb) return la > lb;
  return model_order(a, b);
}

}  // namespace

Hypothesis greedy_rollout(LmSession& session, const Hypothesis& prefix,
                          std::uint32_t rollout_max_len) {
  return rollout_path(session, prefix, rollout_max_len, nullptr);
}

double weighted_score(double p_i, double sim, double alpha) {
  if (!(p_i >= 0.0 && p_i <= 1.0)) throw Error(ErrorCode::kRange, "p_i must lie in [0,1]");
  if (!(sim >= -1.0 && sim <= 1.0)) throw Error(ErrorCode::kRange, "sim must lie in [-1,1]");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::kRange, "alpha must lie in [0,1]");
  return (1.0 - alpha) * p_i + alpha * sim;
}

double final_ranking_score(const Hypothesis& hyp, double faithfulness, double alpha) {
  return weighted_score(std::exp(hyp.length_normalized_logprob()), faithfulness, alpha);
}

double faithfulness_score(const EmbeddingProvider& provider, std::string_view text,
                          std::string_view context_id) {
  const auto audio = provider.embed_audio(context_id);
  const auto caption = provider.embed_text(normalize_text(text));
  if (caption.is_zero()) return 0.0;
  return cosine_similarity(audio, caption);
}

NBestList standard_beam_search(LmSession& session, const ValidatedConfig& cfg) {
  const VocabInfo& vocab = session.vocab();
  std::vector<Hypothesis> beams{Hypothesis::root(vocab)};
  std::vector<Hypothesis> pool;

  while (!beams.empty()) {
    std::vector<Hypothesis> candidates;
    for (const auto& beam : beams) {
      const auto lp = session.next_logprobs(beam.tokens());
      for (const auto& e : expansions(vocab, lp, beam.size(), cfg->max_len, cfg->expansions_per_beam)) {
        candidates.push_back(beam.extend(e.token, e.logprob, vocab.eos_id));
      }
    }
    std::sort(candidates.begin(), candidates.end(), model_order);
    if (candidates.size() > cfg->beam_width) {
      candidates.erase(candidates.begin() + cfg->beam_width, candidates.end());
    }

    beams.clear();
    for (auto& c : candidates) (c.completed() ? pool : beams).push_back(std::move(c));
  }

  std::sort(pool.begin(), pool.end(), final_model_order);
  if (pool.size() > cfg->n_best) pool.erase(pool.begin() + cfg->n_best, pool.end());

  NBestList out;
  for (auto& h : pool) {
    const double score = h.length_normalized_logprob();
    auto text = detokenize(vocab, h.tokens());
    out.hypotheses.push_back({std::move(h), std::move(text), score, 0.0});
  }
  return out;
}

NBestList faithful_beam_search(LmSession& session, const EmbeddingProvider& provider,
                               std::string_view context_id, const ValidatedConfig& cfg,
                               DecodeTrace* trace) {
  const VocabInfo& vocab = session.vocab();
  const double alpha = cfg->alpha;

  // Fail before any model call when the clip has no audio embedding.
  (void)provider.embed_audio(context_id);

  std::map<std::vector<TokenId>, Hypothesis> rollout_cache;
  std::map<std::string, double, std::less<>> faith_cache;

  auto rollout = [&](const Hypothesis& prefix) -> Hypothesis {
    if (prefix.completed()) return prefix;
    if (cfg->rollout_cache) {
      if (auto it = rollout_cache.find(prefix.tokens()); it != rollout_cache.end()) {
        if (trace) ++trace->rollout_cache_hits;
        return it->second;
      }
    }
    std::vector<std::vector<TokenId>> visited;
    auto done = rollout_path(session, prefix, cfg->rollout_max_len,
                             cfg->rollout_cache ? &visited : nullptr);
    if (trace) ++trace->rollouts_computed;
    for (auto& v : visited) rollout_cache.emplace(std::move(v), done);
    return done;
  };
  auto faithfulness = [&](const std::string& text) {
    if (!cfg->rollout_cache) return faithfulness_score(provider, text, context_id);
    if (auto it = faith_cache.find(text); it != faith_cache.end()) return it->second;
    const double s = faithfulness_score(provider, text, context_id);
    faith_cache.emplace(text, s);
    return s;
  };

  std::vector<Hypothesis> beams{Hypothesis::root(vocab)};
  std::vector<Hypothesis> pool;

  while (!beams.empty()) {
    std::vector<Candidate> candidates;
    for (const auto& beam : beams) {
      const auto lp = session.next_logprobs(beam.tokens());
      for (const auto& e : expansions(vocab, lp, beam.size(), cfg->max_len, cfg->expansions_per_beam)) {
        Candidate c{beam.extend(e.token, e.logprob, vocab.eos_id), e.token, e.logprob,
                    Hypothesis::root(vocab), 0.0, 0.0};
        c.rolled_out = rollout(c.hypothesis);
        c.faithfulness = faithfulness(detokenize(vocab, c.rolled_out.tokens()));
        c.weighted = weighted_score(std::exp(c.hypothesis.logprob()), c.faithfulness, alpha);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.weighted != b.weighted) return a.weighted > b.weighted;
      return model_order(a.hypothesis, b.hypothesis);
    });
    const auto kept = std::min<std::size_t>(cfg->beam_width, candidates.size());

    beams.clear();
    for (std::size_t i = 0; i < kept; ++i) {
      const auto& h = candidates[i].hypothesis;
      (h.completed() ? pool : beams).push_back(h);
    }
    if (trace) {
      trace->steps.push_back({std::move(candidates), kept});
      if (trace->step_finished) trace->step_finished(trace->steps.size() - 1);
    }
  }

  struct Ranked {
    Hypothesis hyp;
    std::string text;
    double faith;
    double score;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(pool.size());
  for (auto& h : pool) {
    auto text = detokenize(vocab, h.tokens());
    const double f = faithfulness(text);
    const double s = final_ranking_score(h, f, alpha);
    ranked.push_back({std::move(h), std::move(text), f, s});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return final_model_order(a.hyp, b.hyp);
  });
  if (ranked.size() > cfg->n_best) ranked.erase(ranked.begin() + cfg->n_best, ranked.end());

  NBestList out;
  for (auto& r : ranked) {
    out.hypotheses.push_back({std::move(r.hyp), std::move(r.text), r.score, r.faith});
  }
  return out;
}

}  // namespace faithdec
