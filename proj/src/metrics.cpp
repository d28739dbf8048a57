#include "faithdec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "json.hpp"

namespace faithdec {

EvalInstance EvalInstance::make(std::string context_id, std::string_view candidate,
                                std::span<const std::string> references) {
  if (references.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "instance '" + context_id + "' has no references");
  }
  EvalInstance inst{std::move(context_id), normalize_text(candidate), {}};
  for (const auto& r : references) inst.references.push_back(normalize_text(r));
  return inst;
}

namespace {

void require_nonempty(std::span<const EvalInstance> instances) {
  if (instances.empty()) throw Error(ErrorCode::kInvalidArgument, "metric over an empty corpus");
}

std::map<std::string, std::size_t> word_counts(const std::vector<std::string>& words) {
  std::map<std::string, std::size_t> c;
  for (const auto& w : words) ++c[w];
  return c;
}

struct UnigramStats {
  std::size_t clipped = 0;
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;
};

UnigramStats unigram_stats(const EvalInstance& inst) {
  const auto cand = tokenize_words(inst.candidate);
  std::map<std::string, std::size_t> max_ref;
  std::size_t best_len = 0;
  bool have_best = false;
  for (const auto& ref : inst.references) {
    const auto words = tokenize_words(ref);
    for (const auto& [w, n] : word_counts(words)) max_ref[w] = std::max(max_ref[w], n);
    const auto diff = [&](std::size_t len) {
      return len > cand.size() ? len - cand.size() : cand.size() - len;
    };
    if (!have_best || diff(words.size()) < diff(best_len) ||
        (diff(words.size()) == diff(best_len) && words.size() < best_len)) {
      best_len = words.size();
      have_best = true;
    }
  }
  UnigramStats s;
  s.candidate_len = cand.size();
  s.reference_len = best_len;
  for (const auto& [w, n] : word_counts(cand)) {
    auto it = max_ref.find(w);
    if (it != max_ref.end()) s.clipped += std::min(n, it->second);
  }
  return s;
}

double bleu_from(const UnigramStats& s) {
  if (s.candidate_len == 0) return 0.0;
  const double precision = static_cast<double>(s.clipped) / static_cast<double>(s.candidate_len);
  const double bp = s.candidate_len > s.reference_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(s.reference_len) /
                                             static_cast<double>(s.candidate_len));
  return precision * bp;
}

// Sums in sorted order so corpus means do not depend on instance order.
double order_independent_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double rouge_f(std::size_t lcs, std::size_t cand_len, std::size_t ref_len) {
  if (lcs == 0 || cand_len == 0 || ref_len == 0) return 0.0;
  constexpr double kBeta2 = 1.2 * 1.2;
  const double p = static_cast<double>(lcs) / static_cast<double>(cand_len);
  const double r = static_cast<double>(lcs) / static_cast<double>(ref_len);
  return (1.0 + kBeta2) * p * r / (r + kBeta2 * p);
}

}  // namespace

double bleu1(std::span<const EvalInstance> instances) {
  require_nonempty(instances);
  UnigramStats total;
  for (const auto& inst : instances) {
    const auto s = unigram_stats(inst);
    total.clipped += s.clipped;
    total.candidate_len += s.candidate_len;
    total.reference_len += s.reference_len;
  }
  return bleu_from(total);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> row(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = 0;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = a[i - 1] == b[j - 1] ? diag + 1 : std::max(row[j], row[j - 1]);
      diag = up;
    }
  }
  return row[b.size()];
}

double rouge_l_instance(const EvalInstance& instance) {
  const auto cand = tokenize_words(instance.candidate);
  double best = 0.0;
  for (const auto& ref : instance.references) {
    const auto words = tokenize_words(ref);
    best = std::max(best, rouge_f(lcs_length(cand, words), cand.size(), words.size()));
  }
  return best;
}

double rouge_l(std::span<const EvalInstance> instances) {
  require_nonempty(instances);
  std::vector<double> scores;
  for (const auto& inst : instances) scores.push_back(rouge_l_instance(inst));
  return order_independent_mean(std::move(scores));
}

double clapscore_tt_instance(const EmbeddingProvider& provider, const EvalInstance& instance,
                             ReferenceAggregation aggregation) {
  const auto cand = provider.embed_text(instance.candidate);
  double best = -1.0;
  double sum = 0.0;
  for (const auto& ref : instance.references) {
    const double s = cosine_similarity(cand, provider.embed_text(ref));
    best = std::max(best, s);
    sum += s;
  }
  return aggregation == ReferenceAggregation::kMax
             ? best
             : sum / static_cast<double>(instance.references.size());
}

double clapscore_tt_metric(const EmbeddingProvider& provider,
                           std::span<const EvalInstance> instances, const MetricOptions& options) {
  const auto report = evaluate(instances, &provider, "none", options);
  const auto score = report.corpus_score("clapscore_tt");
  if (!score) throw Error(ErrorCode::kInvalidArgument, "no instance could be embedded");
  return *score;
}

std::optional<double> MetricReport::corpus_score(std::string_view metric) const {
  for (const auto& [name, value] : corpus) {
    if (name == metric) return value;
  }
  return std::nullopt;
}

MetricReport evaluate(std::span<const EvalInstance> instances, const EmbeddingProvider* provider,
                      std::string split, const MetricOptions& options) {
  require_nonempty(instances);
  MetricReport report;
  report.split = std::move(split);

  std::vector<double> clap_scores;
  for (const auto& inst : instances) {
    const EvalInstance one[] = {inst};
    InstanceReport row{inst.context_id, inst.candidate, {}, std::nullopt};
    row.scores.emplace_back("bleu1", bleu1(one));
    row.scores.emplace_back("rouge_l", rouge_l_instance(inst));
    if (provider) {
      try {
        const double s = clapscore_tt_instance(*provider, inst, options.clap_aggregation);
        row.scores.emplace_back("clapscore_tt", s);
        clap_scores.push_back(s);
      } catch (const Error& e) {
        if (!options.skip_failed_instances) {
          throw Error(e.code(), "instance '" + inst.context_id + "': " + e.what());
        }
        row.error = e.what();
      }
    }
    report.instances.push_back(std::move(row));
  }

  report.corpus.emplace_back("bleu1", bleu1(instances));
  report.corpus.emplace_back("rouge_l", rouge_l(instances));
  if (provider && !clap_scores.empty()) {
    report.corpus.emplace_back("clapscore_tt", order_independent_mean(std::move(clap_scores)));
  }
  return report;
}

ComparisonReport compare(MetricReport first, MetricReport second) {
  ComparisonReport out{std::move(first), std::move(second), {}};
  for (const auto& [name, value] : out.first.corpus) {
    if (auto other = out.second.corpus_score(name)) out.deltas.emplace_back(name, *other - value);
  }
  return out;
}

ComparisonReport split_report(std::span<const EvalInstance> hallucinated,
                              std::span<const EvalInstance> clean,
                              const EmbeddingProvider* provider, const MetricOptions& options) {
  return compare(evaluate(hallucinated, provider, "hallucinated", options),
                 evaluate(clean, provider, "non_hallucinated", options));
}

namespace {

using ojson = nlohmann::ordered_json;

ojson scores_json(const MetricScores& scores) {
  ojson o = ojson::object();
  for (const auto& [name, value] : scores) o[name] = value;
  return o;
}

ojson report_json(const MetricReport& report) {
  ojson o;
  o["split"] = report.split;
  o["corpus"] = scores_json(report.corpus);
  o["instances"] = ojson::array();
  for (const auto& inst : report.instances) {
    ojson row;
    row["context_id"] = inst.context_id;
    row["candidate"] = inst.candidate;
    row["scores"] = scores_json(inst.scores);
    if (inst.error) row["error"] = *inst.error;
    o["instances"].push_back(std::move(row));
  }
  return o;
}

std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

std::string table_rows(const std::vector<std::pair<std::string, const MetricScores*>>& rows,
                       const MetricScores& columns) {
  std::size_t label_w = 5;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  label_w += 2;
  std::string out = pad("split", label_w);
  for (const auto& [name, _] : columns) out += pad(name, 14);
  out += "\n";
  for (const auto& [label, scores] : rows) {
    out += pad(label, label_w);
    for (const auto& [name, _] : columns) {
      std::string cell = "-";
      for (const auto& [n, v] : *scores) {
        if (n == name) cell = fmt4(v);
      }
      out += pad(cell, 14);
    }
    out += "\n";
  }
  return out;
}

}  // namespace

std::string to_json(const MetricReport& report) { return report_json(report).dump(); }

std::string to_json(const ComparisonReport& report) {
  ojson o;
  o["reports"] = ojson::array({report_json(report.first), report_json(report.second)});
  o["deltas"] = scores_json(report.deltas);
  return o.dump();
}

std::string to_table(const MetricReport& report) {
  return table_rows({{report.split, &report.corpus}}, report.corpus);
}

std::string to_table(const ComparisonReport& report) {
  return table_rows({{report.first.split, &report.first.corpus},
                     {report.second.split, &report.second.corpus},
                     {"delta", &report.deltas}},
                    report.first.corpus);
}

}  // namespace faithdec
