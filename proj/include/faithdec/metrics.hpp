#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "faithdec/embedding.hpp"

namespace faithdec {

/// A candidate caption with its references, all normalize_text'ed.
struct EvalInstance {
  std::string context_id;
  std::string candidate;
  std::vector<std::string> references;

  /// Normalizes every string. Throws kInvalidArgument on empty references.
  static EvalInstance make(std::string context_id, std::string_view candidate,
                           std::span<const std::string> references);
};

enum class ReferenceAggregation { kMax, kMean };

struct MetricOptions {
  ReferenceAggregation clap_aggregation = ReferenceAggregation::kMax;
  /// Drop instances whose embeddings fail from the CLAPScore mean instead of
  /// failing the whole report.
  bool skip_failed_instances = false;
};

/// Corpus BLEU with unigram precision only: counts clipped to the maximum
/// count over the references, brevity penalty against the closest reference
/// length (shorter wins ties). Throws kInvalidArgument on an empty corpus.
double bleu1(std::span<const EvalInstance> instances);

/// Length of the longest common subsequence of two word sequences.
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// LCS F-measure with beta = 1.2, best reference.
double rouge_l_instance(const EvalInstance& instance);
/// Mean of rouge_l_instance.
double rouge_l(std::span<const EvalInstance> instances);

double clapscore_tt_instance(const EmbeddingProvider& provider, const EvalInstance& instance,
                             ReferenceAggregation aggregation = ReferenceAggregation::kMax);
/// Mean over instances of clapscore_tt_instance.
double clapscore_tt_metric(const EmbeddingProvider& provider,
                           std::span<const EvalInstance> instances,
                           const MetricOptions& options = {});

using MetricScores = std::vector<std::pair<std::string, double>>;

struct InstanceReport {
  std::string context_id;
  std::string candidate;
  MetricScores scores;
  std::optional<std::string> error;
};

struct MetricReport {
  std::string split;
  MetricScores corpus;
  std::vector<InstanceReport> instances;

  std::optional<double> corpus_score(std::string_view metric) const;
};

/// BLEU-1 and ROUGE-L always; CLAPScore_tt when a provider is given.
MetricReport evaluate(std::span<const EvalInstance> instances, const EmbeddingProvider* provider,
                      std::string split, const MetricOptions& options = {});

/// Two reports and per-metric deltas (second minus first).
struct ComparisonReport {
  MetricReport first;
  MetricReport second;
  MetricScores deltas;
};

ComparisonReport compare(MetricReport first, MetricReport second);

/// Hallucinated report first, non-hallucinated second.
ComparisonReport split_report(std::span<const EvalInstance> hallucinated,
                              std::span<const EvalInstance> clean,
                              const EmbeddingProvider* provider,
                              const MetricOptions& options = {});

std::string to_json(const MetricReport& report);
std::string to_json(const ComparisonReport& report);
std::string to_table(const MetricReport& report);
std::string to_table(const ComparisonReport& report);

}  // namespace faithdec
