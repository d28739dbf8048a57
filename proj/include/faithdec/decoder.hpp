#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faithdec/core.hpp"
#include "faithdec/embedding.hpp"
#include "faithdec/lm_backend.hpp"

namespace faithdec {

/// Joins token strings with single spaces, skipping BOS and EOS.
/// Throws kInvalidArgument on an out-of-vocabulary id.
std::string detokenize(const VocabInfo& vocab, std::span<const TokenId> tokens);

/// Extends `prefix` with the argmax token (lowest id on ties, BOS never
/// chosen) until EOS. A prefix that reaches rollout_max_len - 1 tokens is
/// completed with EOS at that step's EOS log-probability. A completed prefix
/// is returned unchanged.
Hypothesis greedy_rollout(LmSession& session, const Hypothesis& prefix,
                          std::uint32_t rollout_max_len);

/// (1 - alpha) * p_i + alpha * sim. Throws kRange outside the documented
/// domains p_i in [0,1], sim in [-1,1], alpha in [0,1].
double weighted_score(double p_i, double sim, double alpha);

/// Score used to order completed hypotheses in faithful decoding:
/// weighted_score(exp(length-normalized logprob), faithfulness, alpha).
double final_ranking_score(const Hypothesis& hyp, double faithfulness, double alpha);

/// clap_score_at of `text`, except that a text embedding to the zero vector
/// (e.g. the empty caption under a bag-of-words provider) scores 0.
double faithfulness_score(const EmbeddingProvider& provider, std::string_view text,
                          std::string_view context_id);

struct ScoredHypothesis {
  Hypothesis hypothesis;
  std::string text;
  double score = 0.0;
  /// clap_score_at of the full caption; 0 for standard beam search.
  double faithfulness = 0.0;
};

struct NBestList {
  std::vector<ScoredHypothesis> hypotheses;

  const ScoredHypothesis& best() const { return hypotheses.front(); }
};

/// One expansion considered during a faithful search step.
struct Candidate {
  Hypothesis hypothesis;  // parent extended by `token`
  TokenId token = 0;
  double step_logprob = 0.0;
  Hypothesis rolled_out;
  double faithfulness = 0.0;
  double weighted = 0.0;
};

struct DecodeTrace {
  struct Step {
    /// Every candidate of the step in selection order.
    std::vector<Candidate> ranked;
    std::size_t kept = 0;
  };
  std::vector<Step> steps;
  std::size_t rollouts_computed = 0;
  std::size_t rollout_cache_hits = 0;
  /// Invoked after each step with the step index.
  std::function<void(std::size_t)> step_finished;
};

/// Beam search over cumulative model log-probability. Each live beam
/// contributes its top expansions_per_beam tokens, the best beam_width
/// candidates survive, and completed ones retire to the output pool. The
/// pool is ranked by length-normalized log-probability.
NBestList standard_beam_search(LmSession& session, const ValidatedConfig& cfg);

/// Beam search whose selection score mixes the candidate's sequence
/// probability with the audio similarity of its greedy rollout. Beams keep
/// pure model log-probabilities; completed hypotheses are ranked by
/// final_ranking_score. With alpha = 0 this selects exactly as
/// standard_beam_search.
NBestList faithful_beam_search(LmSession& session, const EmbeddingProvider& provider,
                               std::string_view context_id, const ValidatedConfig& cfg,
                               DecodeTrace* trace = nullptr);

}  // namespace faithdec
