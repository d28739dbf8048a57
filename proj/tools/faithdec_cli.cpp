// faithdec command-line driver. Talks to the library only through the C
// interface in faithdec/faithdec.h.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "faithdec/faithdec.h"

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitPartial = 4;

struct Failure {
  int exit_code;
  std::string message;
};

[[noreturn]] void config_error(const std::string& msg) { throw Failure{kExitConfig, msg}; }

int exit_code_for(fd_status s) {
  switch (s) {
    case FD_OK: return kExitOk;
    case FD_E_BACKEND_UNAVAILABLE:
    case FD_E_BACKEND:
    case FD_E_PROTOCOL:
    case FD_E_SERVICE:
    case FD_E_EMPTY_RESPONSE:
    case FD_E_INTERNAL:
      return kExitBackend;
    default:
      return kExitConfig;
  }
}

void check(fd_status s, const std::string& context) {
  if (s != FD_OK) {
    throw Failure{exit_code_for(s), context + ": " + fd_status_name(s) + ": " + fd_last_error()};
  }
}

struct LmDeleter { void operator()(fd_lm* p) const { fd_lm_free(p); } };
struct EmbDeleter { void operator()(fd_embedder* p) const { fd_embedder_free(p); } };
struct NBestDeleter { void operator()(fd_nbest* p) const { fd_nbest_free(p); } };
struct EvalDeleter { void operator()(fd_eval_set* p) const { fd_eval_set_free(p); } };
struct LlmDeleter { void operator()(fd_llm* p) const { fd_llm_free(p); } };
struct StrDeleter { void operator()(char* p) const { fd_string_free(p); } };

using LmPtr = std::unique_ptr<fd_lm, LmDeleter>;
using EmbPtr = std::unique_ptr<fd_embedder, EmbDeleter>;
using NBestPtr = std::unique_ptr<fd_nbest, NBestDeleter>;
using EvalPtr = std::unique_ptr<fd_eval_set, EvalDeleter>;
using LlmPtr = std::unique_ptr<fd_llm, LlmDeleter>;
using StrPtr = std::unique_ptr<char, StrDeleter>;

// ---- settings -------------------------------------------------------------

struct Settings {
  std::string backend;
  std::string embeddings;
  std::uint64_t seed = 0;
  std::vector<double> alphas;
  std::string out;
  std::string format = "json";
  std::string decoder = "faithful";
  std::string dataset;
  std::string references;
  std::string candidates;
  std::string quarantine;
  fd_decode_config decode{};

  std::string templates = "templates";
  std::string template_version = "v1";
  std::string llm = "mock";
  std::string model = "vicuna";
  double temperature = 0.7;
  int max_tokens = 128;
  double timeout_seconds = 30.0;
  double rate_limit = 0.0;
  std::size_t parallelism = 1;
  int max_attempts = 3;
  std::uint32_t retry_base_delay_ms = 200;

  bool mean_over_references = false;
  bool skip_failed = false;
};

// Raw flag values; only the ones given on the command line override the
// config file.
struct Flags {
  std::string config;
  std::string backend, embeddings, out, format, decoder, dataset, references, candidates,
      quarantine, templates, template_version, llm, model;
  std::string alpha;
  std::uint64_t seed = 0;
  std::uint32_t beam_width = 0, max_len = 0, rollout_max_len = 0, expansions = 0, n_best = 0;
  bool no_rollout_cache = false;
  double temperature = 0, rate_limit = 0;
  int max_tokens = 0, max_attempts = 0;
  std::size_t parallelism = 0;
  bool mean_over_references = false, skip_failed = false;
  std::vector<std::string> files;
};

std::vector<double> parse_alpha_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double a = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(a);
    } catch (const std::exception&) {
      config_error("alpha: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) config_error("alpha: list is empty");
  return out;
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

// Spec strings carry a path after "kind:"; relative paths in a config file
// are taken relative to that file.
std::string resolve_spec(const fs::path& base, const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) return spec;
  const auto kind = spec.substr(0, colon);
  if (kind == "remote") return spec;
  return kind + ":" + resolve(base, spec.substr(colon + 1));
}

void apply_config_file(const std::string& path, Settings& s) {
  std::ifstream in(path);
  if (!in) config_error("config: cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    config_error("config: " + std::string(e.what()));
  }
  if (!j.is_object()) config_error("config: top level must be an object");
  const fs::path base = fs::path(path).parent_path();

  static const std::set<std::string> kTop = {
      "backend", "embeddings", "seed", "alpha", "out", "format", "decoder", "dataset",
      "references", "candidates", "quarantine", "decode", "augment", "eval"};
  try {
    for (const auto& [key, value] : j.items()) {
      if (!kTop.count(key)) config_error("config: unknown key '" + key + "'");
      if (key == "backend") s.backend = resolve_spec(base, value.get<std::string>());
      else if (key == "embeddings") s.embeddings = resolve_spec(base, value.get<std::string>());
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "alpha") {
        s.alphas = value.is_array() ? value.get<std::vector<double>>()
                                    : std::vector<double>{value.get<double>()};
      } else if (key == "out") s.out = resolve(base, value.get<std::string>());
      else if (key == "format") s.format = value.get<std::string>();
      else if (key == "decoder") s.decoder = value.get<std::string>();
      else if (key == "dataset") s.dataset = resolve(base, value.get<std::string>());
      else if (key == "references") s.references = resolve(base, value.get<std::string>());
      else if (key == "candidates") s.candidates = resolve(base, value.get<std::string>());
      else if (key == "quarantine") s.quarantine = resolve(base, value.get<std::string>());
      else if (key == "decode") {
        for (const auto& [k, v] : value.items()) {
          if (k == "beam_width") s.decode.beam_width = v.get<std::uint32_t>();
          else if (k == "max_len") s.decode.max_len = v.get<std::uint32_t>();
          else if (k == "rollout_max_len") s.decode.rollout_max_len = v.get<std::uint32_t>();
          else if (k == "expansions_per_beam") s.decode.expansions_per_beam = v.get<std::uint32_t>();
          else if (k == "n_best") s.decode.n_best = v.get<std::uint32_t>();
          else if (k == "rollout_cache") s.decode.rollout_cache = v.get<bool>() ? 1 : 0;
          else config_error("config: unknown key 'decode." + k + "'");
        }
      } else if (key == "augment") {
        for (const auto& [k, v] : value.items()) {
          if (k == "templates") s.templates = resolve(base, v.get<std::string>());
          else if (k == "template_version") s.template_version = v.get<std::string>();
          else if (k == "llm") s.llm = v.get<std::string>();
          else if (k == "model") s.model = v.get<std::string>();
          else if (k == "temperature") s.temperature = v.get<double>();
          else if (k == "max_tokens") s.max_tokens = v.get<int>();
          else if (k == "timeout_seconds") s.timeout_seconds = v.get<double>();
          else if (k == "rate_limit") s.rate_limit = v.get<double>();
          else if (k == "parallelism") s.parallelism = v.get<std::size_t>();
          else if (k == "max_attempts") s.max_attempts = v.get<int>();
          else if (k == "retry_base_delay_ms") s.retry_base_delay_ms = v.get<std::uint32_t>();
          else config_error("config: unknown key 'augment." + k + "'");
        }
      } else if (key == "eval") {
        for (const auto& [k, v] : value.items()) {
          if (k == "mean_over_references") s.mean_over_references = v.get<bool>();
          else if (k == "skip_failed") s.skip_failed = v.get<bool>();
          else config_error("config: unknown key 'eval." + k + "'");
        }
      }
    }
  } catch (const json::exception& e) {
    config_error("config: " + std::string(e.what()));
  }
}

template <typename Given>
Settings build_settings(const Flags& f, Given given) {
  Settings s;
  fd_decode_config_default(&s.decode);
  if (!f.config.empty()) apply_config_file(f.config, s);

  if (given("--backend")) s.backend = f.backend;
  if (given("--embeddings")) s.embeddings = f.embeddings;
  if (given("--seed")) s.seed = f.seed;
  if (given("--alpha")) s.alphas = parse_alpha_list(f.alpha);
  if (given("--out")) s.out = f.out;
  if (given("--format")) s.format = f.format;
  if (given("--decoder")) s.decoder = f.decoder;
  if (given("--dataset")) s.dataset = f.dataset;
  if (given("--references")) s.references = f.references;
  if (given("--candidates")) s.candidates = f.candidates;
  if (given("--quarantine")) s.quarantine = f.quarantine;
  if (given("--beam-width")) s.decode.beam_width = f.beam_width;
  if (given("--max-len")) s.decode.max_len = f.max_len;
  if (given("--rollout-max-len")) s.decode.rollout_max_len = f.rollout_max_len;
  if (given("--expansions")) s.decode.expansions_per_beam = f.expansions;
  if (given("--n-best")) s.decode.n_best = f.n_best;
  if (given("--no-rollout-cache")) s.decode.rollout_cache = 0;
  if (given("--templates")) s.templates = f.templates;
  if (given("--template-version")) s.template_version = f.template_version;
  if (given("--llm")) s.llm = f.llm;
  if (given("--model")) s.model = f.model;
  if (given("--temperature")) s.temperature = f.temperature;
  if (given("--max-tokens")) s.max_tokens = f.max_tokens;
  if (given("--rate-limit")) s.rate_limit = f.rate_limit;
  if (given("--parallelism")) s.parallelism = f.parallelism;
  if (given("--max-attempts")) s.max_attempts = f.max_attempts;
  if (given("--mean-over-references")) s.mean_over_references = true;
  if (given("--skip-failed")) s.skip_failed = true;

  if (s.format != "json" && s.format != "table") config_error("format: expected json or table");
  if (s.alphas.empty()) s.alphas = {s.decode.alpha};
  for (double a : s.alphas) {
    if (!(a >= 0.0 && a <= 1.0)) config_error("alpha: " + std::to_string(a) + " outside [0,1]");
  }
  s.decode.seed = s.seed;
  return s;
}

void require_file(const std::string& field, const std::string& path) {
  if (path.empty()) config_error(field + ": not set");
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) config_error(field + ": no such file " + path);
}

std::pair<std::string, std::uint16_t> parse_host_port(const std::string& field,
                                                      const std::string& rest) {
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos) config_error(field + ": expected remote:HOST:PORT");
  try {
    const int port = std::stoi(rest.substr(colon + 1));
    if (port <= 0 || port > 65535) throw std::out_of_range("port");
    return {rest.substr(0, colon), static_cast<std::uint16_t>(port)};
  } catch (const std::exception&) {
    config_error(field + ": bad port in '" + rest + "'");
  }
}

std::pair<std::string, std::string> split_spec(const std::string& field, const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos) config_error(field + ": expected KIND:VALUE, got '" + spec + "'");
  return {spec.substr(0, colon), spec.substr(colon + 1)};
}

LmPtr open_backend(const std::string& spec) {
  if (spec.empty()) config_error("backend: not set");
  const auto [kind, rest] = split_spec("backend", spec);
  fd_lm* lm = nullptr;
  if (kind == "tabular") {
    require_file("backend", rest);
    check(fd_lm_load_tabular(rest.c_str(), &lm), "backend");
  } else if (kind == "remote") {
    const auto [host, port] = parse_host_port("backend", rest);
    check(fd_lm_connect(host.c_str(), port, &lm), "backend");
  } else {
    config_error("backend: unknown kind '" + kind + "'");
  }
  return LmPtr(lm);
}

EmbPtr open_embeddings(const std::string& spec, const fd_lm* lm) {
  if (spec.empty()) return nullptr;
  const auto [kind, rest] = split_spec("embeddings", spec);
  fd_embedder* emb = nullptr;
  if (kind == "store") {
    require_file("embeddings", rest);
    check(fd_embedder_load_store(rest.c_str(), &emb), "embeddings");
  } else if (kind == "bow") {
    require_file("embeddings", rest);
    if (!lm) config_error("embeddings: bow needs a tabular --backend for its vocabulary");
    check(fd_embedder_bag_of_words(lm, rest.c_str(), &emb), "embeddings");
  } else if (kind == "remote") {
    const auto [host, port] = parse_host_port("embeddings", rest);
    check(fd_embedder_connect(host.c_str(), port, &emb), "embeddings");
  } else {
    config_error("embeddings: unknown kind '" + kind + "'");
  }
  return EmbPtr(emb);
}

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path, std::ios::binary | std::ios::trunc);
      if (!file_) config_error("out: cannot write " + path);
    }
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

 private:
  std::ofstream file_;
};

std::vector<json> read_jsonl(const std::string& field, const std::string& path) {
  require_file(field, path);
  std::ifstream in(path);
  std::vector<json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      config_error(field + ": " + path + " line " + std::to_string(line_no) + ": not a JSON object");
    }
    if (!j.contains("context_id") || !j["context_id"].is_string()) {
      config_error(field + ": " + path + " line " + std::to_string(line_no) + ": missing context_id");
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

std::string format_number(double v) {
  ojson j = v;
  return j.dump();
}

// ---- decode ---------------------------------------------------------------

int run_decode(const Settings& s) {
  const auto rows = read_jsonl("dataset", s.dataset);
  fd_decoder_kind kind;
  if (s.decoder == "faithful") kind = FD_DECODER_FAITHFUL;
  else if (s.decoder == "beam") kind = FD_DECODER_BEAM;
  else config_error("decoder: expected beam or faithful");

  fd_decode_config cfg = s.decode;
  for (double a : s.alphas) {
    cfg.alpha = a;
    check(fd_decode_config_validate(&cfg), "decode");
  }
  auto lm = open_backend(s.backend);
  auto emb = open_embeddings(s.embeddings, lm.get());
  if (kind == FD_DECODER_FAITHFUL && !emb) config_error("embeddings: required by the faithful decoder");

  Output out(s.out);
  std::unique_ptr<std::ofstream> quarantine;
  if (!s.quarantine.empty()) {
    quarantine = std::make_unique<std::ofstream>(s.quarantine, std::ios::binary | std::ios::trunc);
    if (!*quarantine) config_error("quarantine: cannot write " + s.quarantine);
  }

  std::size_t failed = 0;
  for (double a : s.alphas) {
    cfg.alpha = a;
    for (const auto& row : rows) {
      const auto id = row["context_id"].get<std::string>();
      fd_nbest* raw = nullptr;
      const fd_status st = fd_decode(lm.get(), emb.get(), id.c_str(), &cfg, kind, &raw);
      NBestPtr nb(raw);
      if (st != FD_OK) {
        if (exit_code_for(st) == kExitBackend) check(st, "decode '" + id + "'");
        ++failed;
        std::cerr << "faithdec: skipping '" << id << "': " << fd_status_name(st) << ": "
                  << fd_last_error() << "\n";
        if (quarantine) {
          ojson q;
          q["context_id"] = id;
          q["alpha"] = a;
          q["reason"] = fd_status_name(st);
          q["message"] = fd_last_error();
          *quarantine << q.dump() << "\n";
        }
        continue;
      }
      for (std::size_t i = 0; i < fd_nbest_size(nb.get()); ++i) {
        ojson rec;
        rec["context_id"] = id;
        rec["caption"] = fd_nbest_text(nb.get(), i);
        rec["score"] = fd_nbest_score(nb.get(), i);
        rec["alpha"] = a;
        rec["decoder"] = s.decoder;
        if (cfg.n_best > 1) rec["rank"] = i + 1;
        out.stream() << rec.dump() << "\n";
      }
    }
  }
  return failed ? kExitPartial : kExitOk;
}

// ---- eval / compare -------------------------------------------------------

std::map<std::string, std::vector<std::string>> load_references(const std::string& path) {
  std::map<std::string, std::vector<std::string>> refs;
  for (const auto& row : read_jsonl("references", path)) {
    if (!row.contains("references") || !row["references"].is_array()) {
      config_error("references: row '" + row["context_id"].get<std::string>() + "' lacks references");
    }
    refs[row["context_id"].get<std::string>()] = row["references"].get<std::vector<std::string>>();
  }
  return refs;
}

void add_instance(fd_eval_set* set, const std::string& id, const std::string& candidate,
                  const std::vector<std::string>& refs) {
  std::vector<const char*> ptrs;
  for (const auto& r : refs) ptrs.push_back(r.c_str());
  check(fd_eval_set_add(set, id.c_str(), candidate.c_str(), ptrs.data(), ptrs.size()),
        "instance '" + id + "'");
}

unsigned eval_flags(const Settings& s) {
  return (s.mean_over_references ? FD_EVAL_MEAN_OVER_REFERENCES : 0u) |
         (s.skip_failed ? FD_EVAL_SKIP_FAILED : 0u);
}

void emit_report(const Settings& s, char* json_raw, char* table_raw) {
  StrPtr j(json_raw), t(table_raw);
  Output out(s.out);
  if (s.format == "json") {
    out.stream() << j.get() << "\n";
  } else {
    out.stream() << t.get();
  }
}

bool report_has_errors(const char* json_text) {
  const auto j = json::parse(json_text);
  auto scan = [](const json& report) {
    for (const auto& inst : report["instances"]) {
      if (inst.contains("error")) return true;
    }
    return false;
  };
  if (j.contains("reports")) return scan(j["reports"][0]) || scan(j["reports"][1]);
  return scan(j);
}

int run_eval(const Settings& s) {
  const auto rows = read_jsonl("candidates", s.candidates);
  if (rows.empty()) config_error("candidates: no rows in " + s.candidates);
  std::map<std::string, std::vector<std::string>> refs;
  if (!s.references.empty()) refs = load_references(s.references);

  LmPtr lm;
  if (!s.backend.empty()) lm = open_backend(s.backend);
  auto emb = open_embeddings(s.embeddings, lm.get());

  EvalPtr hallucinated(fd_eval_set_new()), clean(fd_eval_set_new()), all(fd_eval_set_new());
  bool split = false;
  for (const auto& row : rows) {
    const auto id = row["context_id"].get<std::string>();
    std::string candidate;
    if (row.contains("candidate")) candidate = row["candidate"].get<std::string>();
    else if (row.contains("caption")) candidate = row["caption"].get<std::string>();
    else config_error("candidates: row '" + id + "' has neither candidate nor caption");
    std::vector<std::string> r;
    if (row.contains("references")) {
      r = row["references"].get<std::vector<std::string>>();
    } else if (auto it = refs.find(id); it != refs.end()) {
      r = it->second;
    } else {
      config_error("references: none for '" + id + "'");
    }
    if (row.contains("split")) {
      split = true;
      const auto label = row["split"].get<std::string>();
      if (label == "hallucinated") add_instance(hallucinated.get(), id, candidate, r);
      else if (label == "non_hallucinated") add_instance(clean.get(), id, candidate, r);
      else config_error("candidates: unknown split '" + label + "' for '" + id + "'");
    }
    add_instance(all.get(), id, candidate, r);
  }

  char* j = nullptr;
  char* t = nullptr;
  fd_status st;
  if (split) {
    if (!fd_eval_set_size(hallucinated.get()) || !fd_eval_set_size(clean.get())) {
      config_error("candidates: both hallucinated and non_hallucinated rows are needed");
    }
    st = fd_eval_compare(hallucinated.get(), "hallucinated", clean.get(), "non_hallucinated",
                         emb.get(), eval_flags(s), &j, &t);
  } else {
    st = fd_eval_report(all.get(), emb.get(), "none", eval_flags(s), &j, &t);
  }
  if (st != FD_OK) {
    throw Failure{kExitBackend, std::string("eval: ") + fd_status_name(st) + ": " + fd_last_error()};
  }
  const bool partial = report_has_errors(j);
  emit_report(s, j, t);
  return partial ? kExitPartial : kExitOk;
}

struct DecodeRun {
  std::string label;
  std::map<std::string, std::string> captions;
};

DecodeRun load_decode_run(const std::string& field, const std::string& path,
                          const std::optional<double>& alpha) {
  std::vector<json> rows;
  std::set<double> alphas;
  for (auto& row : read_jsonl(field, path)) {
    if (!row.contains("caption")) config_error(field + ": row without caption in " + path);
    if (row.contains("rank") && row["rank"].get<int>() != 1) continue;
    alphas.insert(row.value("alpha", 0.0));
    rows.push_back(std::move(row));
  }
  // A file with a single alpha block is taken whole; the filter picks a
  // block out of a sweep.
  const bool filter = alphas.size() > 1;
  if (filter && !alpha) config_error(field + ": several alpha blocks in " + path + "; pass --alpha");
  DecodeRun run;
  for (const auto& row : rows) {
    if (filter && row.value("alpha", 0.0) != *alpha) continue;
    if (run.label.empty()) run.label = row.value("decoder", std::string("run"));
    const auto id = row["context_id"].get<std::string>();
    if (!run.captions.emplace(id, row["caption"].get<std::string>()).second) {
      config_error(field + ": duplicate context_id '" + id + "' in " + path);
    }
  }
  if (run.captions.empty()) config_error(field + ": no rows in " + path + " for the chosen alpha");
  return run;
}

int run_compare(const Settings& s, const std::vector<std::string>& files,
                const std::optional<double>& alpha) {
  if (files.size() != 2) config_error("compare: expected two decode output files");
  if (s.alphas.size() > 1) config_error("alpha: compare takes a single value");
  auto first = load_decode_run("first", files[0], alpha);
  auto second = load_decode_run("second", files[1], alpha);
  std::vector<std::string> only_first, only_second;
  for (const auto& [id, _] : first.captions) {
    if (!second.captions.count(id)) only_first.push_back(id);
  }
  for (const auto& [id, _] : second.captions) {
    if (!first.captions.count(id)) only_second.push_back(id);
  }
  if (!only_first.empty() || !only_second.empty()) {
    std::string msg = "compare: context_id sets differ;";
    for (const auto& id : only_first) msg += " only in first: " + id + ";";
    for (const auto& id : only_second) msg += " only in second: " + id + ";";
    config_error(msg);
  }
  if (first.label == second.label) {
    first.label += "_1";
    second.label += "_2";
  }

  if (s.references.empty()) config_error("references: not set");
  const auto refs = load_references(s.references);
  LmPtr lm;
  if (!s.backend.empty()) lm = open_backend(s.backend);
  auto emb = open_embeddings(s.embeddings, lm.get());

  EvalPtr a(fd_eval_set_new()), b(fd_eval_set_new());
  for (const auto& [id, caption] : first.captions) {
    auto it = refs.find(id);
    if (it == refs.end()) config_error("references: none for '" + id + "'");
    add_instance(a.get(), id, caption, it->second);
    add_instance(b.get(), id, second.captions.at(id), it->second);
  }
  char* j = nullptr;
  char* t = nullptr;
  const fd_status st = fd_eval_compare(a.get(), first.label.c_str(), b.get(), second.label.c_str(),
                                       emb.get(), eval_flags(s), &j, &t);
  if (st != FD_OK) {
    throw Failure{kExitBackend, std::string("compare: ") + fd_status_name(st) + ": " + fd_last_error()};
  }
  const bool partial = report_has_errors(j);
  emit_report(s, j, t);
  return partial ? kExitPartial : kExitOk;
}

// ---- augment --------------------------------------------------------------

int run_augment(const Settings& s) {
  require_file("dataset", s.dataset);
  if (s.out.empty()) config_error("out: required for augment");
  std::error_code ec;
  if (!fs::is_directory(s.templates, ec)) config_error("templates: no such directory " + s.templates);

  fd_llm* raw = nullptr;
  if (s.llm == "mock") {
    check(fd_llm_mock_new(&raw), "llm");
  } else {
    fd_llm_http_config http{s.llm.c_str(), s.model.c_str(), s.temperature,
                            s.max_tokens,  s.timeout_seconds, s.rate_limit};
    check(fd_llm_http_new(&http, &raw), "llm");
  }
  LlmPtr llm(raw);

  fd_augment_options opts;
  fd_augment_options_default(&opts);
  opts.dataset_path = s.dataset.c_str();
  opts.template_dir = s.templates.c_str();
  opts.template_version = s.template_version.c_str();
  opts.out_path = s.out.c_str();
  opts.quarantine_path = s.quarantine.empty() ? nullptr : s.quarantine.c_str();
  opts.seed = s.seed;
  opts.parallelism = s.parallelism;
  opts.max_attempts = s.max_attempts;
  opts.retry_base_delay_ms = s.retry_base_delay_ms;
  fd_augment_summary summary{};
  check(fd_augment_run(llm.get(), &opts, &summary), "augment");
  std::cerr << "faithdec: " << summary.records << " records, " << summary.quarantined
            << " quarantined of " << summary.rows << " rows\n";
  return summary.quarantined ? kExitPartial : kExitOk;
}

// ---- selftest -------------------------------------------------------------

constexpr const char* kSteeringLm =
    "vocab 4 bos 0 eos 1\n"
    "token 0 <s>\ntoken 1 </s>\ntoken 2 siren\ntoken 3 dog\n"
    "row * - 0 0 0.6 0.4\nrow * 2 0 1 0 0\nrow * 3 0 1 0 0\n";
constexpr const char* kSteeringAudio = "dim 4\naudio clip 0 0 0 1\n";
constexpr const char* kChainLm =
    "vocab 5 bos 0 eos 1\n"
    "token 0 <s>\ntoken 1 </s>\ntoken 2 horse\ntoken 3 trots\ntoken 4 dog\n"
    "row clip - 0 0.05 0.6 0.1 0.25\nrow clip 2 0 0.1 0.1 0.7 0.1\n"
    "row clip 2,3 0 0.8 0.05 0.05 0.1\n";
constexpr const char* kChainAudio = "dim 5\naudio clip 0 0 0.2 0.1 1\n";

struct SelfTest {
  int failures = 0;
  void report(bool ok, const std::string& name, const std::string& detail = "") {
    std::cout << (ok ? "PASS " : "FAIL ") << name << (detail.empty() ? "" : ": " + detail) << "\n";
    failures += ok ? 0 : 1;
  }
};

std::vector<std::string> decode_texts(fd_lm* lm, const fd_embedder* emb, fd_decode_config cfg,
                                      fd_decoder_kind kind) {
  fd_nbest* raw = nullptr;
  check(fd_decode(lm, emb, "clip", &cfg, kind, &raw), "selftest decode");
  NBestPtr nb(raw);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < fd_nbest_size(nb.get()); ++i) out.emplace_back(fd_nbest_text(nb.get(), i));
  return out;
}

int run_selftest() {
  SelfTest t;

  double w = 0;
  check(fd_weighted_score(0.5, 0.6, 0.8, &w), "weighted_score");
  double w0 = 0, w1 = 0;
  check(fd_weighted_score(0.37, 0.9, 0.0, &w0), "weighted_score");
  check(fd_weighted_score(0.37, 0.9, 1.0, &w1), "weighted_score");
  t.report(std::abs(w - 0.58) <= 1e-12 && w0 == 0.37 && w1 == 0.9, "weighted score arithmetic",
           format_number(w));

  const double x[] = {1, 1}, y[] = {1, 0};
  double c = 0, cs = 0;
  check(fd_cosine_similarity(x, y, 2, &c), "cosine");
  check(fd_cosine_similarity(y, x, 2, &cs), "cosine");
  t.report(std::abs(c - 0.70710678) <= 1e-8 && c == cs, "cosine similarity", format_number(c));

  fd_lm* raw_lm = nullptr;
  check(fd_lm_parse_tabular(kSteeringLm, &raw_lm), "steering lm");
  LmPtr steering(raw_lm);
  fd_embedder* raw_store = nullptr;
  check(fd_embedder_parse_store(kSteeringAudio, &raw_store), "steering audio");
  EmbPtr steering_store(raw_store);
  fd_embedder* raw_emb = nullptr;
  check(fd_embedder_bag_of_words_store(steering.get(), steering_store.get(), &raw_emb), "steering bow");
  EmbPtr steering_emb(raw_emb);

  fd_decode_config cfg;
  fd_decode_config_default(&cfg);
  cfg.beam_width = 1;
  cfg.expansions_per_beam = 2;
  cfg.max_len = 4;
  cfg.rollout_max_len = 4;
  cfg.alpha = 0.8;
  const auto high = decode_texts(steering.get(), steering_emb.get(), cfg, FD_DECODER_FAITHFUL);
  cfg.alpha = 0.1;
  const auto low = decode_texts(steering.get(), steering_emb.get(), cfg, FD_DECODER_FAITHFUL);
  t.report(high.at(0) == "dog" && low.at(0) == "siren", "steering",
           "alpha 0.8 -> " + high.at(0) + ", alpha 0.1 -> " + low.at(0));

  check(fd_lm_parse_tabular(kChainLm, &raw_lm), "chain lm");
  LmPtr chain(raw_lm);
  check(fd_embedder_parse_store(kChainAudio, &raw_store), "chain audio");
  EmbPtr chain_store(raw_store);
  check(fd_embedder_bag_of_words_store(chain.get(), chain_store.get(), &raw_emb), "chain bow");
  EmbPtr chain_emb(raw_emb);

  fd_decode_config_default(&cfg);
  cfg.beam_width = 1;
  cfg.max_len = 6;
  cfg.rollout_max_len = 6;
  const auto greedy = decode_texts(chain.get(), nullptr, cfg, FD_DECODER_BEAM);
  t.report(greedy.at(0) == "horse trots", "greedy chain", greedy.at(0));

  bool same = true;
  for (std::uint32_t beam = 1; beam <= 3; ++beam) {
    for (std::uint32_t len = 2; len <= 6; ++len) {
      fd_decode_config_default(&cfg);
      cfg.beam_width = beam;
      cfg.n_best = beam;
      cfg.expansions_per_beam = 3;
      cfg.max_len = len;
      cfg.rollout_max_len = len;
      cfg.alpha = 0.0;
      for (fd_lm* lm : {steering.get(), chain.get()}) {
        const fd_embedder* emb = lm == chain.get() ? chain_emb.get() : steering_emb.get();
        same = same && decode_texts(lm, emb, cfg, FD_DECODER_FAITHFUL) ==
                           decode_texts(lm, nullptr, cfg, FD_DECODER_BEAM);
      }
    }
  }
  t.report(same, "alpha zero matches beam search");

  EvalPtr set(fd_eval_set_new());
  add_instance(set.get(), "b", "a b c", {"a b d"});
  char* j = nullptr;
  check(fd_eval_report(set.get(), nullptr, "none", 0, &j, nullptr), "bleu");
  const auto bleu = json::parse(StrPtr(j).get())["corpus"]["bleu1"].get<double>();
  t.report(std::abs(bleu - 2.0 / 3.0) <= 1e-12, "bleu1 clipped counts", format_number(bleu));

  EvalPtr set2(fd_eval_set_new());
  add_instance(set2.get(), "r", "a b c d", {"a c d"});
  check(fd_eval_report(set2.get(), nullptr, "none", 0, &j, nullptr), "rouge");
  const auto rouge = json::parse(StrPtr(j).get())["corpus"]["rouge_l"].get<double>();
  t.report(std::abs(rouge - 2.44 * 0.75 / (1.0 + 1.44 * 0.75)) <= 1e-12, "rouge_l lcs",
           format_number(rouge));

  std::cout << (t.failures ? "selftest failed" : "selftest passed") << "\n";
  return t.failures ? kExitPartial : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Faithfulness-guided caption decoding, evaluation and augmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Flags f;

  app.add_option("--config", f.config, "JSON run configuration; flags override it");
  app.add_option("--seed", f.seed, "Top-level seed");
  app.add_option("--alpha", f.alpha, "Comma-separated alpha values");
  app.add_option("--backend", f.backend, "tabular:PATH or remote:HOST:PORT");
  app.add_option("--embeddings", f.embeddings, "store:PATH, bow:AUDIO_STORE or remote:HOST:PORT");
  app.add_option("--out", f.out, "Output path (default stdout)");
  app.add_option("--format", f.format, "json or table");
  app.add_option("--references", f.references, "JSONL of {context_id, references}");
  app.add_flag("--mean-over-references", f.mean_over_references,
               "Average CLAPScore_tt over references instead of taking the max");
  app.add_flag("--skip-failed", f.skip_failed, "Drop instances whose embeddings fail");

  auto* decode = app.add_subcommand("decode", "Decode every dataset row");
  decode->add_option("--dataset", f.dataset, "JSONL of {context_id, ...}");
  decode->add_option("--decoder", f.decoder, "beam or faithful");
  decode->add_option("--beam-width", f.beam_width);
  decode->add_option("--max-len", f.max_len);
  decode->add_option("--rollout-max-len", f.rollout_max_len);
  decode->add_option("--expansions", f.expansions, "Expansions per beam");
  decode->add_option("--n-best", f.n_best);
  decode->add_flag("--no-rollout-cache", f.no_rollout_cache);
  decode->add_option("--quarantine", f.quarantine, "JSONL of rows that failed");

  auto* compare = app.add_subcommand("compare", "Metric tables for two decode outputs");
  compare->add_option("files", f.files, "FIRST SECOND decode outputs")->expected(2);

  auto* eval = app.add_subcommand("eval", "Metric report for candidate captions");
  eval->add_option("--candidates", f.candidates, "JSONL of {context_id, candidate|caption, ...}");

  auto* augment = app.add_subcommand("augment", "Generate hallucinated captions");
  augment->add_option("--dataset", f.dataset, "JSONL of {context_id, captions, tags}");
  augment->add_option("--templates", f.templates, "Prompt template directory");
  augment->add_option("--template-version", f.template_version);
  augment->add_option("--llm", f.llm, "mock or http://HOST:PORT/PATH");
  augment->add_option("--model", f.model);
  augment->add_option("--temperature", f.temperature);
  augment->add_option("--max-tokens", f.max_tokens);
  augment->add_option("--rate-limit", f.rate_limit, "Requests per second, 0 for none");
  augment->add_option("--parallelism", f.parallelism);
  augment->add_option("--max-attempts", f.max_attempts);
  augment->add_option("--quarantine", f.quarantine, "JSONL of rows that failed");

  auto* selftest = app.add_subcommand("selftest", "Run the embedded toy fixtures");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (selftest->parsed()) return run_selftest();
    CLI::App* sub = app.get_subcommands().front();
    auto given = [&](const char* name) {
      for (const CLI::App* a : {static_cast<const CLI::App*>(&app), static_cast<const CLI::App*>(sub)}) {
        if (const CLI::Option* opt = a->get_option_no_throw(name); opt && opt->count() > 0) return true;
      }
      return false;
    };
    const Settings s = build_settings(f, given);
    if (decode->parsed()) return run_decode(s);
    if (compare->parsed()) {
      return run_compare(s, f.files,
                         given("--alpha") ? std::optional<double>(s.alphas.at(0)) : std::nullopt);
    }
    if (eval->parsed()) return run_eval(s);
    if (augment->parsed()) return run_augment(s);
    return kExitConfig;
  } catch (const Failure& e) {
    std::cerr << "faithdec: " << e.message << "\n";
    return e.exit_code;
  }
}
