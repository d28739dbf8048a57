#include "faithdec/faithdec.h"

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "faithdec/augmenter.hpp"
#include "faithdec/decoder.hpp"
#include "faithdec/metrics.hpp"
#include "faithdec/remote.hpp"

using namespace faithdec;

struct fd_lm {
  std::unique_ptr<LmBackend> backend;
  const TabularLM* tabular = nullptr;
  std::mutex mu;
  std::map<std::string, std::unique_ptr<LmSession>, std::less<>> sessions;

  LmSession& session(std::string_view context_id) {
    std::lock_guard lock(mu);
    auto it = sessions.find(context_id);
    if (it == sessions.end()) {
      it = sessions.emplace(std::string(context_id), backend->open_session(context_id)).first;
    }
    return *it->second;
  }
};

struct fd_embedder {
  std::unique_ptr<EmbeddingProvider> provider;
};

struct fd_nbest {
  NBestList list;
};

struct fd_eval_set {
  std::vector<EvalInstance> instances;
};

struct fd_llm {
  std::unique_ptr<LlmClient> client;
};

namespace {

thread_local std::string g_last_error;

fd_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return FD_E_INVALID_ARGUMENT;
    case ErrorCode::kRange: return FD_E_RANGE;
    case ErrorCode::kParse: return FD_E_PARSE;
    case ErrorCode::kNormalization: return FD_E_NORMALIZATION;
    case ErrorCode::kDimension: return FD_E_DIMENSION;
    case ErrorCode::kNotFound: return FD_E_NOT_FOUND;
    case ErrorCode::kZeroVector: return FD_E_ZERO_VECTOR;
    case ErrorCode::kPrecondition: return FD_E_PRECONDITION;
    case ErrorCode::kBackendUnavailable: return FD_E_BACKEND_UNAVAILABLE;
    case ErrorCode::kBackend: return FD_E_BACKEND;
    case ErrorCode::kProtocol: return FD_E_PROTOCOL;
    case ErrorCode::kService: return FD_E_SERVICE;
    case ErrorCode::kEmptyResponse: return FD_E_EMPTY_RESPONSE;
    case ErrorCode::kTooFewTags: return FD_E_TOO_FEW_TAGS;
    case ErrorCode::kRender: return FD_E_RENDER;
    case ErrorCode::kIo: return FD_E_IO;
  }
  return FD_E_INTERNAL;
}

template <typename F>
fd_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return FD_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FD_E_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FD_E_INTERNAL;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

DecodeConfig from_c(const fd_decode_config& c) {
  DecodeConfig cfg;
  cfg.beam_width = c.beam_width;
  cfg.alpha = c.alpha;
  cfg.max_len = c.max_len;
  cfg.rollout_max_len = c.rollout_max_len;
  cfg.expansions_per_beam = c.expansions_per_beam;
  cfg.seed = c.seed;
  cfg.n_best = c.n_best;
  cfg.rollout_cache = c.rollout_cache != 0;
  return cfg;
}

MetricOptions metric_options(unsigned flags) {
  MetricOptions o;
  if (flags & FD_EVAL_MEAN_OVER_REFERENCES) o.clap_aggregation = ReferenceAggregation::kMean;
  o.skip_failed_instances = (flags & FD_EVAL_SKIP_FAILED) != 0;
  return o;
}

}  // namespace

extern "C" {

const char* fd_last_error(void) { return g_last_error.c_str(); }

const char* fd_status_name(fd_status status) {
  switch (status) {
    case FD_OK: return "ok";
    case FD_E_INVALID_ARGUMENT: return "invalid_argument";
    case FD_E_RANGE: return "range";
    case FD_E_PARSE: return "parse";
    case FD_E_NORMALIZATION: return "normalization";
    case FD_E_DIMENSION: return "dimension";
    case FD_E_NOT_FOUND: return "not_found";
    case FD_E_ZERO_VECTOR: return "zero_vector";
    case FD_E_PRECONDITION: return "precondition";
    case FD_E_BACKEND_UNAVAILABLE: return "backend_unavailable";
    case FD_E_BACKEND: return "backend";
    case FD_E_PROTOCOL: return "protocol";
    case FD_E_SERVICE: return "service";
    case FD_E_EMPTY_RESPONSE: return "empty_response";
    case FD_E_TOO_FEW_TAGS: return "too_few_tags";
    case FD_E_RENDER: return "render";
    case FD_E_IO: return "io";
    case FD_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void fd_string_free(char* s) { std::free(s); }

void fd_decode_config_default(fd_decode_config* cfg) {
  if (!cfg) return;
  const DecodeConfig d;
  *cfg = fd_decode_config{d.beam_width, d.alpha, d.max_len, d.rollout_max_len,
                          d.expansions_per_beam, d.seed, d.n_best, d.rollout_cache ? 1 : 0};
}

fd_status fd_decode_config_validate(const fd_decode_config* cfg) {
  return guarded([&] {
    require(cfg, "cfg is null");
    validate_config(from_c(*cfg));
  });
}

fd_status fd_normalize_text(const char* text, char** out) {
  return guarded([&] {
    require(text && out, "null argument");
    *out = dup_string(normalize_text(text));
  });
}

fd_status fd_lm_load_tabular(const char* path, fd_lm** out) {
  return guarded([&] {
    require(path && out, "null argument");
    auto lm = std::make_unique<fd_lm>();
    auto tab = std::make_unique<TabularLM>(load_tabular_lm(path));
    lm->tabular = tab.get();
    lm->backend = std::move(tab);
    *out = lm.release();
  });
}

fd_status fd_lm_parse_tabular(const char* text, fd_lm** out) {
  return guarded([&] {
    require(text && out, "null argument");
    auto lm = std::make_unique<fd_lm>();
    auto tab = std::make_unique<TabularLM>(parse_tabular_lm(text));
    lm->tabular = tab.get();
    lm->backend = std::move(tab);
    *out = lm.release();
  });
}

fd_status fd_lm_connect(const char* host, uint16_t port, fd_lm** out) {
  return guarded([&] {
    require(host && out, "null argument");
    auto lm = std::make_unique<fd_lm>();
    lm->backend = std::make_unique<RemoteBackend>(RemoteBackend::connect(host, port));
    *out = lm.release();
  });
}

void fd_lm_free(fd_lm* lm) { delete lm; }

fd_status fd_lm_next_logprobs(fd_lm* lm, const char* context_id, const uint32_t* prefix,
                              size_t prefix_len, double* out, size_t out_len,
                              size_t* vocab_size) {
  return guarded([&] {
    require(lm && context_id && (prefix || prefix_len == 0), "null argument");
    auto& session = lm->session(context_id);
    if (vocab_size) *vocab_size = session.vocab().vocab_size;
    require(out && out_len >= session.vocab().vocab_size, "output buffer too small");
    const auto lp = session.next_logprobs(std::span<const TokenId>(prefix, prefix_len));
    std::copy(lp.begin(), lp.end(), out);
  });
}

fd_status fd_embedder_load_store(const char* path, fd_embedder** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = new fd_embedder{std::make_unique<FileEmbeddingStore>(load_embedding_store(path))};
  });
}

fd_status fd_embedder_parse_store(const char* text, fd_embedder** out) {
  return guarded([&] {
    require(text && out, "null argument");
    *out = new fd_embedder{std::make_unique<FileEmbeddingStore>(parse_embedding_store(text))};
  });
}

namespace {

fd_embedder* bag_of_words(const fd_lm* lm, const FileEmbeddingStore& store) {
  require(lm->tabular, "bag-of-words embeddings need a tabular LM vocabulary");
  std::map<std::string, EmbeddingVector, std::less<>> audio(store.audio_map().begin(),
                                                            store.audio_map().end());
  return new fd_embedder{std::make_unique<BagOfWordsOracle>(lm->tabular->vocab(), std::move(audio))};
}

}  // namespace

fd_status fd_embedder_bag_of_words(const fd_lm* lm, const char* audio_store_path,
                                   fd_embedder** out) {
  return guarded([&] {
    require(lm && audio_store_path && out, "null argument");
    *out = bag_of_words(lm, load_embedding_store(audio_store_path));
  });
}

fd_status fd_embedder_bag_of_words_store(const fd_lm* lm, const fd_embedder* audio_store,
                                         fd_embedder** out) {
  return guarded([&] {
    require(lm && audio_store && out, "null argument");
    const auto* store = dynamic_cast<const FileEmbeddingStore*>(audio_store->provider.get());
    require(store, "audio vectors must come from an embedding store");
    *out = bag_of_words(lm, *store);
  });
}

fd_status fd_embedder_connect(const char* host, uint16_t port, fd_embedder** out) {
  return guarded([&] {
    require(host && out, "null argument");
    *out = new fd_embedder{RemoteEmbeddingProvider::connect(host, port)};
  });
}

void fd_embedder_free(fd_embedder* emb) { delete emb; }

fd_status fd_cosine_similarity(const double* x, const double* y, size_t dim, double* out) {
  return guarded([&] {
    require(x && y && out, "null argument");
    *out = cosine_similarity(std::span(x, dim), std::span(y, dim));
  });
}

fd_status fd_clap_score_at(const fd_embedder* emb, const char* text, const char* context_id,
                           double* out) {
  return guarded([&] {
    require(emb && text && context_id && out, "null argument");
    *out = clap_score_at(*emb->provider, text, context_id);
  });
}

fd_status fd_clap_score_tt(const fd_embedder* emb, const char* a, const char* b, double* out) {
  return guarded([&] {
    require(emb && a && b && out, "null argument");
    *out = clap_score_tt(*emb->provider, a, b);
  });
}

fd_status fd_weighted_score(double p_i, double sim, double alpha, double* out) {
  return guarded([&] {
    require(out, "null argument");
    *out = weighted_score(p_i, sim, alpha);
  });
}

fd_status fd_decode(fd_lm* lm, const fd_embedder* emb, const char* context_id,
                    const fd_decode_config* cfg, fd_decoder_kind kind, fd_nbest** out) {
  return guarded([&] {
    require(lm && context_id && cfg && out, "null argument");
    const auto valid = validate_config(from_c(*cfg));
    auto& session = lm->session(context_id);
    auto nb = std::make_unique<fd_nbest>();
    if (kind == FD_DECODER_FAITHFUL) {
      require(emb, "faithful decoding needs an embedder");
      nb->list = faithful_beam_search(session, *emb->provider, context_id, valid);
    } else {
      require(kind == FD_DECODER_BEAM, "unknown decoder kind");
      nb->list = standard_beam_search(session, valid);
    }
    *out = nb.release();
  });
}

size_t fd_nbest_size(const fd_nbest* nb) { return nb ? nb->list.hypotheses.size() : 0; }

const char* fd_nbest_text(const fd_nbest* nb, size_t i) {
  if (!nb || i >= nb->list.hypotheses.size()) return nullptr;
  return nb->list.hypotheses[i].text.c_str();
}

double fd_nbest_score(const fd_nbest* nb, size_t i) {
  return nb && i < nb->list.hypotheses.size() ? nb->list.hypotheses[i].score : 0.0;
}

double fd_nbest_logprob(const fd_nbest* nb, size_t i) {
  return nb && i < nb->list.hypotheses.size() ? nb->list.hypotheses[i].hypothesis.logprob() : 0.0;
}

double fd_nbest_faithfulness(const fd_nbest* nb, size_t i) {
  return nb && i < nb->list.hypotheses.size() ? nb->list.hypotheses[i].faithfulness : 0.0;
}

size_t fd_nbest_tokens(const fd_nbest* nb, size_t i, const uint32_t** tokens) {
  if (!nb || i >= nb->list.hypotheses.size()) return 0;
  const auto& t = nb->list.hypotheses[i].hypothesis.tokens();
  if (tokens) *tokens = t.data();
  return t.size();
}

void fd_nbest_free(fd_nbest* nb) { delete nb; }

fd_eval_set* fd_eval_set_new(void) { return new (std::nothrow) fd_eval_set; }

fd_status fd_eval_set_add(fd_eval_set* set, const char* context_id, const char* candidate,
                          const char* const* references, size_t n_references) {
  return guarded([&] {
    require(set && context_id && candidate && (references || n_references == 0), "null argument");
    std::vector<std::string> refs;
    for (size_t i = 0; i < n_references; ++i) {
      require(references[i], "null reference");
      refs.emplace_back(references[i]);
    }
    set->instances.push_back(EvalInstance::make(context_id, candidate, refs));
  });
}

size_t fd_eval_set_size(const fd_eval_set* set) { return set ? set->instances.size() : 0; }

void fd_eval_set_free(fd_eval_set* set) { delete set; }

fd_status fd_eval_report(const fd_eval_set* set, const fd_embedder* emb, const char* label,
                         unsigned flags, char** json, char** table) {
  return guarded([&] {
    require(set && label, "null argument");
    const auto report = evaluate(set->instances, emb ? emb->provider.get() : nullptr, label,
                                 metric_options(flags));
    if (json) *json = dup_string(to_json(report));
    if (table) *table = dup_string(to_table(report));
  });
}

fd_status fd_eval_compare(const fd_eval_set* first, const char* first_label,
                          const fd_eval_set* second, const char* second_label,
                          const fd_embedder* emb, unsigned flags, char** json, char** table) {
  return guarded([&] {
    require(first && second && first_label && second_label, "null argument");
    const auto* provider = emb ? emb->provider.get() : nullptr;
    const auto opts = metric_options(flags);
    const auto report = compare(evaluate(first->instances, provider, first_label, opts),
                                evaluate(second->instances, provider, second_label, opts));
    if (json) *json = dup_string(to_json(report));
    if (table) *table = dup_string(to_table(report));
  });
}

fd_status fd_llm_mock_new(fd_llm** out) {
  return guarded([&] {
    require(out, "null argument");
    *out = new fd_llm{std::make_unique<MarkerMockLlm>()};
  });
}

fd_status fd_llm_http_new(const fd_llm_http_config* cfg, fd_llm** out) {
  return guarded([&] {
    require(cfg && cfg->url && out, "null argument");
    HttpLlmConfig c;
    c.url = cfg->url;
    if (cfg->model) c.model = cfg->model;
    c.temperature = cfg->temperature;
    c.max_tokens = cfg->max_tokens;
    if (cfg->timeout_seconds > 0) c.timeout_seconds = cfg->timeout_seconds;
    c.rate_limit = cfg->rate_limit;
    *out = new fd_llm{std::make_unique<HttpLlmClient>(std::move(c))};
  });
}

void fd_llm_free(fd_llm* llm) { delete llm; }

void fd_augment_options_default(fd_augment_options* opts) {
  if (!opts) return;
  *opts = fd_augment_options{};
  opts->parallelism = 1;
  opts->max_attempts = 3;
  opts->retry_base_delay_ms = 200;
}

fd_status fd_augment_run(fd_llm* llm, const fd_augment_options* opts,
                         fd_augment_summary* summary) {
  return guarded([&] {
    require(llm && opts && opts->dataset_path && opts->template_dir && opts->out_path,
            "null argument");
    const auto rows = load_dataset_jsonl(opts->dataset_path);
    const auto prompts = load_prompt_set(opts->template_dir,
                                         opts->template_version ? opts->template_version : "v1");

    std::ofstream out(opts->out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, std::string("cannot write ") + opts->out_path);
    std::ofstream quarantine;
    if (opts->quarantine_path) {
      quarantine.open(opts->quarantine_path, std::ios::binary | std::ios::trunc);
      if (!quarantine) throw Error(ErrorCode::kIo, std::string("cannot write ") + opts->quarantine_path);
    }

    AugmentOptions o;
    o.seed = opts->seed;
    o.parallelism = opts->parallelism;
    o.retry.max_attempts = opts->max_attempts > 0 ? opts->max_attempts : 3;
    o.retry.base_delay = std::chrono::milliseconds(opts->retry_base_delay_ms);

    fd_augment_summary s{rows.size(), 0, 0};
    augment_dataset(rows, *llm->client, prompts, o, [&](const AugmentResult& r) {
      if (const auto* rec = std::get_if<AugmentRecord>(&r)) {
        out << to_jsonl(*rec) << '\n';
        ++s.records;
      } else {
        const auto& q = std::get<QuarantineEntry>(r);
        if (quarantine.is_open()) quarantine << to_jsonl(q) << '\n';
        ++s.quarantined;
      }
    });
    if (summary) *summary = s;
  });
}

}  // extern "C"
