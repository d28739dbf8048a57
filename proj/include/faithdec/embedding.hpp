#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faithdec/core.hpp"

namespace faithdec {

/// A finite real vector in the shared audio-text space. Stored unnormalized.
class EmbeddingVector {
 public:
  /// Throws kDimension when empty and kRange when any value is non-finite.
  explicit EmbeddingVector(std::vector<double> values);

  std::span<const double> values() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }
  bool is_zero() const noexcept;

 private:
  std::vector<double> values_;
};

/// Cosine of the angle between x and y, clamped to [-1, 1].
/// Throws kDimension on mismatched sizes and kZeroVector on an all-zero input.
double cosine_similarity(std::span<const double> x, std::span<const double> y);
double cosine_similarity(const EmbeddingVector& x, const EmbeddingVector& y);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::size_t dim() const = 0;
  /// `text` is expected to be normalize_text output.
  virtual EmbeddingVector embed_text(std::string_view text) const = 0;
  virtual EmbeddingVector embed_audio(std::string_view context_id) const = 0;
};

/// Audio-text similarity of `text` against the clip `context_id`.
double clap_score_at(const EmbeddingProvider& provider, std::string_view text,
                     std::string_view context_id);
/// Text-text similarity.
double clap_score_tt(const EmbeddingProvider& provider, std::string_view a,
                     std::string_view b);

/// Precomputed projections keyed by normalized text and by context id.
class FileEmbeddingStore final : public EmbeddingProvider {
 public:
  FileEmbeddingStore(std::size_t dim, std::map<std::string, EmbeddingVector, std::less<>> text_map,
                     std::map<std::string, EmbeddingVector, std::less<>> audio_map);

  std::size_t dim() const override { return dim_; }
  EmbeddingVector embed_text(std::string_view text) const override;
  EmbeddingVector embed_audio(std::string_view context_id) const override;

  const auto& text_map() const noexcept { return text_map_; }
  const auto& audio_map() const noexcept { return audio_map_; }

 private:
  std::size_t dim_;
  std::map<std::string, EmbeddingVector, std::less<>> text_map_;
  std::map<std::string, EmbeddingVector, std::less<>> audio_map_;
};

FileEmbeddingStore parse_embedding_store(std::string_view text);
FileEmbeddingStore load_embedding_store(const std::filesystem::path& path);

/// Synthetic provider whose text embedding is the L2-normalized token-count
/// vector over a vocabulary. Words outside the vocabulary are ignored, so an
/// all-unknown text embeds to the zero vector.
class BagOfWordsOracle final : public EmbeddingProvider {
 public:
  BagOfWordsOracle(VocabInfo vocab, std::map<std::string, EmbeddingVector, std::less<>> audio_map);

  std::size_t dim() const override { return vocab_.vocab_size; }
  EmbeddingVector embed_text(std::string_view text) const override;
  EmbeddingVector embed_audio(std::string_view context_id) const override;

  /// Token-count vector of `text` before normalization.
  std::vector<double> counts(std::string_view text) const;

 private:
  VocabInfo vocab_;
  std::map<std::string, TokenId, std::less<>> word_ids_;
  std::map<std::string, EmbeddingVector, std::less<>> audio_map_;
};

}  // namespace faithdec
