#pragma once

// Loads the hallucination split fixture: eval rows labelled by split and the
// bag-of-words oracle over the fixture vocabulary.

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "faithdec/embedding.hpp"
#include "faithdec/lm_backend.hpp"
#include "faithdec/metrics.hpp"

namespace faithdec::testing {

struct HallucFixture {
  std::vector<EvalInstance> hallucinated;
  std::vector<EvalInstance> clean;
  std::unique_ptr<BagOfWordsOracle> oracle;
};

inline HallucFixture load_halluc_fixture(const std::string& dir) {
  HallucFixture f;
  std::ifstream in(dir + "/halluc_eval.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    const auto refs = j.at("references").get<std::vector<std::string>>();
    auto inst = EvalInstance::make(j.at("context_id"), j.at("candidate").get<std::string>(), refs);
    (j.at("split") == "hallucinated" ? f.hallucinated : f.clean).push_back(std::move(inst));
  }
  const auto lm = load_tabular_lm(dir + "/halluc_vocab.lm");
  f.oracle = std::make_unique<BagOfWordsOracle>(lm.vocab(),
                                                std::map<std::string, EmbeddingVector, std::less<>>{});
  return f;
}

}  // namespace faithdec::testing
