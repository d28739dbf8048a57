#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "faithdec/llm_client.hpp"

namespace faithdec {

struct ScoredTag {
  std::string tag;
  double score = 0.0;
};

/// Audio-tagger output for one clip, best first. Equal scores must be
/// ordered by tag string.
struct RankedTagList {
  std::string context_id;
  std::vector<ScoredTag> tags;

  /// Throws kParse if the order is not strictly descending.
  void validate() const;
};

/// 1-indexed inclusive rank band tags are drawn from.
struct RankBand {
  std::size_t first = 30;
  std::size_t last = 40;
};

/// Draws 3 distinct tags uniformly from the rank band using a seeded
/// mt19937_64. Throws kTooFewTags when the list does not cover the band.
std::vector<std::string> select_dissimilar_tags(const RankedTagList& tags, std::uint64_t seed,
                                                RankBand band = {});

struct FewShot {
  std::string caption;
  std::vector<std::string> tags;
  std::string output;
};

/// Versioned prompt material loaded from disk.
struct PromptSet {
  std::string version;
  std::string paraphrase_template;
  std::string inject_template;
  std::vector<FewShot> fewshots;
};

/// Reads paraphrase.<version>.txt, inject.<version>.txt and
/// fewshots.<version>.jsonl from `dir`.
PromptSet load_prompt_set(const std::filesystem::path& dir, const std::string& version = "v1");

/// Replaces {{name}} placeholders. Any placeholder without a value is a
/// kRender error.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values);

std::string render_fewshots(std::span<const FewShot> fewshots);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

std::string render_paraphrase_prompt(const PromptSet& prompts, std::string_view caption);
std::string render_inject_prompt(const PromptSet& prompts, std::string_view caption,
                                 std::span<const std::string> tags);

/// First non-blank line of a completion, trimmed. Throws kEmptyResponse.
std::string first_line(std::string_view completion);

std::string paraphrase(LlmClient& llm, const PromptSet& prompts, std::string_view caption,
                       const RetryPolicy& retry = {});
std::string inject_tags(LlmClient& llm, const PromptSet& prompts, std::string_view caption,
                        std::span<const std::string> tags, const RetryPolicy& retry = {});

struct DatasetRow {
  std::size_t line = 0;
  std::string context_id;
  std::vector<std::string> captions;
  RankedTagList tags;
};

/// Parses the JSONL dataset. Format errors throw kParse naming the line.
std::vector<DatasetRow> parse_dataset_jsonl(std::string_view text);
std::vector<DatasetRow> load_dataset_jsonl(const std::filesystem::path& path);

struct AugmentRecord {
  std::string context_id;
  std::string original_caption;
  std::string paraphrase;
  std::vector<std::string> injected_tags;
  std::string hallucinated_caption;
  std::string prompt_fingerprint;
  std::string template_version;
  std::uint64_t seed = 0;
};

struct QuarantineEntry {
  std::string context_id;
  std::size_t line = 0;
  std::string reason;  // error code name
  std::string message;
};

using AugmentResult = std::variant<AugmentRecord, QuarantineEntry>;

struct AugmentOptions {
  std::uint64_t seed = 0;
  std::size_t parallelism = 1;
  RankBand band;
  RetryPolicy retry;
};

/// Seed for one row, derived from the run seed, row index and context id.
std::uint64_t row_seed(std::uint64_t seed, std::size_t index, std::string_view context_id);

/// Runs the pipeline over every row. Per-row failures become quarantine
/// entries; results are delivered to `sink` in input order.
void augment_dataset(std::span<const DatasetRow> rows, LlmClient& llm, const PromptSet& prompts,
                     const AugmentOptions& options,
                     const std::function<void(const AugmentResult&)>& sink);

std::string to_jsonl(const AugmentRecord& record);
std::string to_jsonl(const QuarantineEntry& entry);

}  // namespace faithdec
