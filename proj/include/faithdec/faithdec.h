/*
 * C interface to the faithdec library.
 *
 * All objects are opaque handles created by a *_new/_load/_connect call and
 * released with the matching *_free. Every fallible call returns an
 * fd_status; on failure a description is available from fd_last_error()
 * on the calling thread until the next call on that thread.
 *
 * Strings returned through char** out-parameters are owned by the caller
 * and must be released with fd_string_free.
 */
#ifndef FAITHDEC_FAITHDEC_H_
#define FAITHDEC_FAITHDEC_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define FD_API __declspec(dllexport)
#else
#define FD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fd_status {
  FD_OK = 0,
  FD_E_INVALID_ARGUMENT = 1,
  FD_E_RANGE = 2,
  FD_E_PARSE = 3,
  FD_E_NORMALIZATION = 4,
  FD_E_DIMENSION = 5,
  FD_E_NOT_FOUND = 6,
  FD_E_ZERO_VECTOR = 7,
  FD_E_PRECONDITION = 8,
  FD_E_BACKEND_UNAVAILABLE = 9,
  FD_E_BACKEND = 10,
  FD_E_PROTOCOL = 11,
  FD_E_SERVICE = 12,
  FD_E_EMPTY_RESPONSE = 13,
  FD_E_TOO_FEW_TAGS = 14,
  FD_E_RENDER = 15,
  FD_E_IO = 16,
  FD_E_INTERNAL = 17
} fd_status;

typedef struct fd_lm fd_lm;
typedef struct fd_embedder fd_embedder;
typedef struct fd_nbest fd_nbest;
typedef struct fd_eval_set fd_eval_set;
typedef struct fd_llm fd_llm;

FD_API const char* fd_last_error(void);
FD_API const char* fd_status_name(fd_status status);
FD_API void fd_string_free(char* s);

/* ---- core ---- */

typedef struct fd_decode_config {
  uint32_t beam_width;
  double alpha;
  uint32_t max_len;
  uint32_t rollout_max_len;
  uint32_t expansions_per_beam;
  uint64_t seed;
  uint32_t n_best;
  int rollout_cache; /* nonzero enables the per-decode rollout cache */
} fd_decode_config;

/* beam_width 4, alpha 0.8, max_len 20, rollout_max_len 30,
 * expansions_per_beam 8, seed 0, n_best 1, rollout_cache 1. */
FD_API void fd_decode_config_default(fd_decode_config* cfg);
FD_API fd_status fd_decode_config_validate(const fd_decode_config* cfg);

/* Writes normalized text to *out. */
FD_API fd_status fd_normalize_text(const char* text, char** out);

/* ---- language models ---- */

FD_API fd_status fd_lm_load_tabular(const char* path, fd_lm** out);
FD_API fd_status fd_lm_parse_tabular(const char* text, fd_lm** out);
FD_API fd_status fd_lm_connect(const char* host, uint16_t port, fd_lm** out);
FD_API void fd_lm_free(fd_lm* lm);

/* Next-token log-probabilities for (context_id, prefix). `out` must hold
 * out_len >= vocab size entries; *vocab_size receives the vocab size. */
FD_API fd_status fd_lm_next_logprobs(fd_lm* lm, const char* context_id, const uint32_t* prefix,
                                     size_t prefix_len, double* out, size_t out_len,
                                     size_t* vocab_size);

/* ---- embeddings ---- */

FD_API fd_status fd_embedder_load_store(const char* path, fd_embedder** out);
FD_API fd_status fd_embedder_parse_store(const char* text, fd_embedder** out);
/* Bag-of-words provider over the vocabulary of a tabular LM; audio vectors
 * come from the audio entries of an embedding store file. */
FD_API fd_status fd_embedder_bag_of_words(const fd_lm* lm, const char* audio_store_path,
                                          fd_embedder** out);
/* Same as fd_embedder_bag_of_words with the audio vectors of an embedder
 * created by fd_embedder_load_store or fd_embedder_parse_store. */
FD_API fd_status fd_embedder_bag_of_words_store(const fd_lm* lm, const fd_embedder* audio_store,
                                                fd_embedder** out);
FD_API fd_status fd_embedder_connect(const char* host, uint16_t port, fd_embedder** out);
FD_API void fd_embedder_free(fd_embedder* emb);

FD_API fd_status fd_cosine_similarity(const double* x, const double* y, size_t dim, double* out);
FD_API fd_status fd_clap_score_at(const fd_embedder* emb, const char* text,
                                  const char* context_id, double* out);
FD_API fd_status fd_clap_score_tt(const fd_embedder* emb, const char* a, const char* b,
                                  double* out);

/* ---- decoding ---- */

typedef enum fd_decoder_kind { FD_DECODER_BEAM = 0, FD_DECODER_FAITHFUL = 1 } fd_decoder_kind;

FD_API fd_status fd_weighted_score(double p_i, double sim, double alpha, double* out);

/* `emb` may be NULL for FD_DECODER_BEAM. */
FD_API fd_status fd_decode(fd_lm* lm, const fd_embedder* emb, const char* context_id,
                           const fd_decode_config* cfg, fd_decoder_kind kind, fd_nbest** out);
FD_API size_t fd_nbest_size(const fd_nbest* nb);
/* Borrowed pointer valid until fd_nbest_free. */
FD_API const char* fd_nbest_text(const fd_nbest* nb, size_t i);
FD_API double fd_nbest_score(const fd_nbest* nb, size_t i);
FD_API double fd_nbest_logprob(const fd_nbest* nb, size_t i);
FD_API double fd_nbest_faithfulness(const fd_nbest* nb, size_t i);
FD_API size_t fd_nbest_tokens(const fd_nbest* nb, size_t i, const uint32_t** tokens);
FD_API void fd_nbest_free(fd_nbest* nb);

/* ---- metrics ---- */

FD_API fd_eval_set* fd_eval_set_new(void);
FD_API fd_status fd_eval_set_add(fd_eval_set* set, const char* context_id, const char* candidate,
                                 const char* const* references, size_t n_references);
FD_API size_t fd_eval_set_size(const fd_eval_set* set);
FD_API void fd_eval_set_free(fd_eval_set* set);

enum {
  FD_EVAL_MEAN_OVER_REFERENCES = 1, /* default is max over references */
  FD_EVAL_SKIP_FAILED = 2           /* drop instances whose embeddings fail */
};

/* Metric report for one set. `emb` may be NULL (CLAPScore_tt omitted).
 * Either output pointer may be NULL. */
FD_API fd_status fd_eval_report(const fd_eval_set* set, const fd_embedder* emb, const char* label,
                                unsigned flags, char** json, char** table);
/* Reports for two sets plus deltas (second minus first). */
FD_API fd_status fd_eval_compare(const fd_eval_set* first, const char* first_label,
                                 const fd_eval_set* second, const char* second_label,
                                 const fd_embedder* emb, unsigned flags, char** json,
                                 char** table);

/* ---- augmentation ---- */

FD_API fd_status fd_llm_mock_new(fd_llm** out);
typedef struct fd_llm_http_config {
  const char* url;
  const char* model;
  double temperature;
  int max_tokens;
  double timeout_seconds;
  double rate_limit;
} fd_llm_http_config;
FD_API fd_status fd_llm_http_new(const fd_llm_http_config* cfg, fd_llm** out);
FD_API void fd_llm_free(fd_llm* llm);

typedef struct fd_augment_options {
  const char* dataset_path;
  const char* template_dir;
  const char* template_version; /* NULL means "v1" */
  const char* out_path;
  const char* quarantine_path;
  uint64_t seed;
  size_t parallelism;
  int max_attempts;
  uint32_t retry_base_delay_ms;
} fd_augment_options;

typedef struct fd_augment_summary {
  size_t rows;
  size_t records;
  size_t quarantined;
} fd_augment_summary;

FD_API void fd_augment_options_default(fd_augment_options* opts);
FD_API fd_status fd_augment_run(fd_llm* llm, const fd_augment_options* opts,
                                fd_augment_summary* summary);

#ifdef __cplusplus
}
#endif

#endif /* FAITHDEC_FAITHDEC_H_ */
