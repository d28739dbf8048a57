#include "faithdec/embedding.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "faithdec/lm_backend.hpp"

namespace faithdec {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw Error(ErrorCode::kDimension, "embedding must have positive dim");
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kRange, "embedding values must be finite");
  }
}

bool EmbeddingVector::is_zero() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double cosine_similarity(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::kDimension, "dimension mismatch: " + std::to_string(x.size()) +
                                           " vs " + std::to_string(y.size()));
  }
  // Scale by the max magnitude first so 1e±300 inputs neither overflow nor
  // underflow in the squared norms.
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx = std::max(sx, std::abs(x[i]));
    sy = std::max(sy, std::abs(y[i]));
  }
  if (sx == 0.0 || sy == 0.0) throw Error(ErrorCode::kZeroVector, "cosine of a zero vector");
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = x[i] / sx;
    const double b = y[i] / sy;
    dot += a * b;
    nx += a * a;
    ny += b * b;
  }
  const double c = dot / (std::sqrt(nx) * std::sqrt(ny));
  return std::clamp(c, -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y) {
  return cosine_similarity(x.values(), y.values());
}

double clap_score_at(const EmbeddingProvider& provider, std::string_view text,
                     std::string_view context_id) {
  const auto audio = provider.embed_audio(context_id);
  const auto caption = provider.embed_text(normalize_text(text));
  return cosine_similarity(audio, caption);
}

double clap_score_tt(const EmbeddingProvider& provider, std::string_view a, std::string_view b) {
  const auto ea = provider.embed_text(normalize_text(a));
  const auto eb = provider.embed_text(normalize_text(b));
  return cosine_similarity(ea, eb);
}

// FileEmbeddingStore

FileEmbeddingStore::FileEmbeddingStore(
    std::size_t dim, std::map<std::string, EmbeddingVector, std::less<>> text_map,
    std::map<std::string, EmbeddingVector, std::less<>> audio_map)
    : dim_(dim), text_map_(std::move(text_map)), audio_map_(std::move(audio_map)) {
  auto check = [&](const auto& m, const char* kind) {
    for (const auto& [key, v] : m) {
      if (v.dim() != dim_) {
        throw Error(ErrorCode::kDimension, std::string(kind) + " '" + key + "' has dim " +
                                               std::to_string(v.dim()) + ", expected " +
                                               std::to_string(dim_));
      }
      if (v.is_zero()) throw Error(ErrorCode::kZeroVector, std::string(kind) + " '" + key + "' is all-zero");
    }
  };
  check(text_map_, "text");
  check(audio_map_, "audio");
}

EmbeddingVector FileEmbeddingStore::embed_text(std::string_view text) const {
  auto it = text_map_.find(text);
  if (it == text_map_.end()) {
    throw Error(ErrorCode::kNotFound, "no text embedding for '" + std::string(text) + "'");
  }
  return it->second;
}

EmbeddingVector FileEmbeddingStore::embed_audio(std::string_view context_id) const {
  auto it = audio_map_.find(context_id);
  if (it == audio_map_.end()) {
    throw Error(ErrorCode::kNotFound, "no audio embedding for '" + std::string(context_id) + "'");
  }
  return it->second;
}

namespace {

[[noreturn]] void fail_at(std::size_t line, ErrorCode code, const std::string& msg) {
  throw Error(code, "line " + std::to_string(line) + ": " + msg);
}

std::string_view next_field(std::string_view& rest) {
  std::size_t i = 0;
  while (i < rest.size() && (rest[i] == ' ' || rest[i] == '\t')) ++i;
  std::size_t j = i;
  while (j < rest.size() && rest[j] != ' ' && rest[j] != '\t') ++j;
  auto field = rest.substr(i, j - i);
  rest.remove_prefix(j);
  return field;
}

std::vector<double> parse_floats(std::string_view s, std::size_t line) {
  std::vector<double> out;
  for (auto f = next_field(s); !f.empty(); f = next_field(s)) {
    double v{};
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc{} || ptr != f.data() + f.size() || !std::isfinite(v)) {
      fail_at(line, ErrorCode::kParse, "bad number '" + std::string(f) + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

FileEmbeddingStore parse_embedding_store(std::string_view text) {
  std::size_t dim = 0;
  std::map<std::string, EmbeddingVector, std::less<>> text_map, audio_map;
  std::size_t line_no = 0;
  std::size_t pos = 0;

  auto make_vector = [&](std::vector<double> values, const std::string& key) {
    if (values.size() != dim) {
      fail_at(line_no, ErrorCode::kDimension, "'" + key + "' has " + std::to_string(values.size()) +
                                                  " values, expected " + std::to_string(dim));
    }
    EmbeddingVector v(std::move(values));
    if (v.is_zero()) fail_at(line_no, ErrorCode::kZeroVector, "'" + key + "' is all-zero");
    return v;
  };

  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::string_view rest = line;
    const auto kind = next_field(rest);
    if (kind.empty() || kind.starts_with('#')) continue;

    if (kind == "dim") {
      if (dim != 0) fail_at(line_no, ErrorCode::kParse, "duplicate dim header");
      auto values = parse_floats(rest, line_no);
      if (values.size() != 1 || values[0] < 1 || values[0] != std::floor(values[0])) {
        fail_at(line_no, ErrorCode::kParse, "expected 'dim <n>'");
      }
      dim = static_cast<std::size_t>(values[0]);
      continue;
    }
    if (dim == 0) fail_at(line_no, ErrorCode::kParse, "dim header must come first");

    if (kind == "text") {
      const auto bar = rest.find('|');
      if (bar == std::string_view::npos) fail_at(line_no, ErrorCode::kParse, "text entry needs '| <text>'");
      auto key = normalize_text(rest.substr(bar + 1));
      auto v = make_vector(parse_floats(rest.substr(0, bar), line_no), key);
      if (!text_map.emplace(key, std::move(v)).second) {
        fail_at(line_no, ErrorCode::kParse, "duplicate text key '" + key + "'");
      }
    } else if (kind == "audio") {
      auto key = std::string(next_field(rest));
      if (key.empty()) fail_at(line_no, ErrorCode::kParse, "audio entry needs a context id");
      auto v = make_vector(parse_floats(rest, line_no), key);
      if (!audio_map.emplace(key, std::move(v)).second) {
        fail_at(line_no, ErrorCode::kParse, "duplicate audio key '" + key + "'");
      }
    } else {
      fail_at(line_no, ErrorCode::kParse, "unknown directive '" + std::string(kind) + "'");
    }
  }
  if (dim == 0) throw Error(ErrorCode::kParse, "missing dim header");
  return FileEmbeddingStore(dim, std::move(text_map), std::move(audio_map));
}

FileEmbeddingStore load_embedding_store(const std::filesystem::path& path) {
  return parse_embedding_store(read_text_file(path));
}

// BagOfWordsOracle

BagOfWordsOracle::BagOfWordsOracle(VocabInfo vocab,
                                   std::map<std::string, EmbeddingVector, std::less<>> audio_map)
    : vocab_(std::move(vocab)), audio_map_(std::move(audio_map)) {
  vocab_.validate();
  for (TokenId id = 0; id < vocab_.vocab_size; ++id) {
    word_ids_.emplace(normalize_text(vocab_.token_strings[id]), id);
  }
  for (const auto& [key, v] : audio_map_) {
    if (v.dim() != vocab_.vocab_size) {
      throw Error(ErrorCode::kDimension, "audio '" + key + "' must have dim vocab_size");
    }
  }
}

std::vector<double> BagOfWordsOracle::counts(std::string_view text) const {
  std::vector<double> c(vocab_.vocab_size, 0.0);
  for (const auto& w : tokenize_words(text)) {
    if (auto it = word_ids_.find(w); it != word_ids_.end()) c[it->second] += 1.0;
  }
  return c;
}

EmbeddingVector BagOfWordsOracle::embed_text(std::string_view text) const {
  auto c = counts(text);
  double norm = 0.0;
  for (double x : c) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : c) x /= norm;
  }
  return EmbeddingVector(std::move(c));
}

EmbeddingVector BagOfWordsOracle::embed_audio(std::string_view context_id) const {
  auto it = audio_map_.find(context_id);
  if (it == audio_map_.end()) {
    throw Error(ErrorCode::kNotFound, "no audio embedding for '" + std::string(context_id) + "'");
  }
  return it->second;
}

}  // namespace faithdec
