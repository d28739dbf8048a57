#include "faithdec/augmenter.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <optional>
#include <random>
#include <thread>

#include "faithdec/core.hpp"
#include "faithdec/lm_backend.hpp"
#include "faithdec/log.hpp"
#include "json.hpp"

namespace faithdec {

void RankedTagList::validate() const {
  for (std::size_t i = 1; i < tags.size(); ++i) {
    const auto& a = tags[i - 1];
    const auto& b = tags[i];
    const bool ordered = a.score > b.score || (a.score == b.score && a.tag < b.tag);
    if (!ordered) {
      throw Error(ErrorCode::kParse, "tags of '" + context_id + "' not in descending order at '" +
                                         b.tag + "'");
    }
  }
}

namespace {

// Uniform draw from [0, n) without modulo bias; stable across standard
// libraries unlike std::uniform_int_distribution.
std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % n;
  }
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string join(std::span<const std::string> items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

}  // namespace

std::vector<std::string> select_dissimilar_tags(const RankedTagList& tags, std::uint64_t seed,
                                                RankBand band) {
  if (band.first < 1 || band.last < band.first || band.last - band.first + 1 < 3) {
    throw Error(ErrorCode::kRange, "rank band must hold at least 3 ranks");
  }
  if (tags.tags.size() < band.last) {
    throw Error(ErrorCode::kTooFewTags, "'" + tags.context_id + "' has " +
                                            std::to_string(tags.tags.size()) + " tags, need " +
                                            std::to_string(band.last));
  }
  std::vector<std::size_t> pool;
  for (std::size_t rank = band.first; rank <= band.last; ++rank) pool.push_back(rank - 1);

  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t k = 0; k < 3; ++k) {
    const auto j = k + uniform_below(rng, pool.size() - k);
    std::swap(pool[k], pool[j]);
    out.push_back(tags.tags[pool[k]].tag);
  }
  return out;
}

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      throw Error(ErrorCode::kRender, "unterminated placeholder at offset " + std::to_string(open));
    }
    const auto name = tmpl.substr(open + 2, close - open - 2);
    auto it = values.find(name);
    if (it == values.end()) {
      throw Error(ErrorCode::kRender, "unresolved placeholder {{" + std::string(name) + "}}");
    }
    out.append(tmpl.substr(pos, open - pos));
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.substr(std::min(pos, tmpl.size())));
  return out;
}

std::string render_fewshots(std::span<const FewShot> fewshots) {
  std::string out;
  for (std::size_t i = 0; i < fewshots.size(); ++i) {
    if (i) out += "\n";
    out += "Caption: " + fewshots[i].caption + "\n";
    out += "Tags: " + join(fewshots[i].tags, ", ") + "\n";
    out += "Output: " + fewshots[i].output + "\n";
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInvalidArgument, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string render_paraphrase_prompt(const PromptSet& prompts, std::string_view caption) {
  return render_template(prompts.paraphrase_template, {{"caption", std::string(caption)}});
}

std::string render_inject_prompt(const PromptSet& prompts, std::string_view caption,
                                 std::span<const std::string> tags) {
  return render_template(prompts.inject_template, {{"caption", std::string(caption)},
                                                   {"tags", join(tags, ", ")},
                                                   {"fewshots", render_fewshots(prompts.fewshots)}});
}

std::string first_line(std::string_view completion) {
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    auto nl = completion.find('\n', pos);
    if (nl == std::string_view::npos) nl = completion.size();
    auto line = completion.substr(pos, nl - pos);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
    if (!line.empty()) return std::string(line);
    pos = nl + 1;
  }
  throw Error(ErrorCode::kEmptyResponse, "completion was empty");
}

std::string paraphrase(LlmClient& llm, const PromptSet& prompts, std::string_view caption,
                       const RetryPolicy& retry) {
  if (normalize_text(caption).empty()) {
    throw Error(ErrorCode::kPrecondition, "caption to paraphrase is empty");
  }
  return first_line(complete_with_retry(llm, render_paraphrase_prompt(prompts, caption), retry).text);
}

std::string inject_tags(LlmClient& llm, const PromptSet& prompts, std::string_view caption,
                        std::span<const std::string> tags, const RetryPolicy& retry) {
  if (tags.size() != 3) {
    throw Error(ErrorCode::kPrecondition, "expected 3 tags, got " + std::to_string(tags.size()));
  }
  if (prompts.fewshots.empty()) {
    throw Error(ErrorCode::kPrecondition, "tag injection needs at least one few-shot exemplar");
  }
  if (normalize_text(caption).empty()) throw Error(ErrorCode::kPrecondition, "caption is empty");
  return first_line(complete_with_retry(llm, render_inject_prompt(prompts, caption, tags), retry).text);
}

PromptSet load_prompt_set(const std::filesystem::path& dir, const std::string& version) {
  PromptSet set;
  set.version = version;
  set.paraphrase_template = read_text_file(dir / ("paraphrase." + version + ".txt"));
  set.inject_template = read_text_file(dir / ("inject." + version + ".txt"));
  const auto shots = read_text_file(dir / ("fewshots." + version + ".jsonl"));
  std::size_t line_no = 0, pos = 0;
  while (pos < shots.size()) {
    auto nl = shots.find('\n', pos);
    if (nl == std::string::npos) nl = shots.size();
    const auto line = shots.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (normalize_text(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(ErrorCode::kParse, "fewshots line " + std::to_string(line_no) + ": invalid JSON");
    }
    try {
      set.fewshots.push_back({j.at("caption").get<std::string>(),
                              j.at("tags").get<std::vector<std::string>>(),
                              j.at("output").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, "fewshots line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return set;
}

std::vector<DatasetRow> parse_dataset_jsonl(std::string_view text) {
  std::vector<DatasetRow> rows;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (normalize_text(line).empty()) continue;

    auto fail = [&](const std::string& msg) -> void {
      throw Error(ErrorCode::kParse, "line " + std::to_string(line_no) + ": " + msg);
    };
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail("not a JSON object");

    DatasetRow row;
    row.line = line_no;
    try {
      row.context_id = j.at("context_id").get<std::string>();
      row.captions = j.at("captions").get<std::vector<std::string>>();
      for (const auto& t : j.at("tags")) {
        row.tags.tags.push_back({t.at("tag").get<std::string>(), t.at("score").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(e.what());
    }
    if (row.context_id.empty()) fail("empty context_id");
    if (row.captions.empty()) fail("'" + row.context_id + "' has no captions");
    for (const auto& c : row.captions) {
      if (normalize_text(c).empty()) fail("'" + row.context_id + "' has an empty caption");
    }
    row.tags.context_id = row.context_id;
    try {
      row.tags.validate();
    } catch (const Error& e) {
      fail(e.what());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DatasetRow> load_dataset_jsonl(const std::filesystem::path& path) {
  return parse_dataset_jsonl(read_text_file(path));
}

std::uint64_t row_seed(std::uint64_t seed, std::size_t index, std::string_view context_id) {
  return splitmix64(splitmix64(seed ^ fnv1a64(context_id)) + index);
}

namespace {

AugmentResult augment_row(const DatasetRow& row, std::size_t index, LlmClient& llm,
                          const PromptSet& prompts, const AugmentOptions& options) {
  const auto seed = row_seed(options.seed, index, row.context_id);
  try {
    std::mt19937_64 rng(seed);
    const auto& caption = row.captions[uniform_below(rng, row.captions.size())];
    const auto tag_seed = rng();
    auto tags = select_dissimilar_tags(row.tags, tag_seed, options.band);

    AugmentRecord rec;
    rec.context_id = row.context_id;
    rec.original_caption = caption;
    rec.paraphrase = paraphrase(llm, prompts, caption, options.retry);
    rec.hallucinated_caption = inject_tags(llm, prompts, caption, tags, options.retry);
    rec.prompt_fingerprint = sha256_hex(render_paraphrase_prompt(prompts, caption) + '\x1e' +
                                        render_inject_prompt(prompts, caption, tags));
    rec.injected_tags = std::move(tags);
    rec.template_version = prompts.version;
    rec.seed = seed;
    return rec;
  } catch (const Error& e) {
    // Template defects affect every row; they abort the run.
    if (e.code() == ErrorCode::kRender) throw;
    log::warn("quarantined '{}' (line {}): {}", row.context_id, row.line, e.what());
    return QuarantineEntry{row.context_id, row.line, error_code_name(e.code()), e.what()};
  }
}

}  // namespace

void augment_dataset(std::span<const DatasetRow> rows, LlmClient& llm, const PromptSet& prompts,
                     const AugmentOptions& options,
                     const std::function<void(const AugmentResult&)>& sink) {
  std::vector<std::optional<AugmentResult>> results(rows.size());
  const auto workers = std::clamp<std::size_t>(options.parallelism, 1, std::max<std::size_t>(rows.size(), 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < rows.size(); ++i) sink(augment_row(rows[i], i, llm, prompts, options));
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next++; i < rows.size(); i = next++) {
          try {
            results[i] = augment_row(rows[i], i, llm, prompts, options);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = rows.size();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  for (const auto& r : results) sink(*r);
}

std::string to_jsonl(const AugmentRecord& record) {
  nlohmann::ordered_json j;
  j["context_id"] = record.context_id;
  j["original_caption"] = record.original_caption;
  j["paraphrase"] = record.paraphrase;
  j["injected_tags"] = record.injected_tags;
  j["hallucinated_caption"] = record.hallucinated_caption;
  j["prompt_fingerprint"] = record.prompt_fingerprint;
  j["template_version"] = record.template_version;
  j["seed"] = record.seed;
  return j.dump();
}

std::string to_jsonl(const QuarantineEntry& entry) {
  nlohmann::ordered_json j;
  j["context_id"] = entry.context_id;
  j["line"] = entry.line;
  j["reason"] = entry.reason;
  j["message"] = entry.message;
  return j.dump();
}

}  // namespace faithdec
