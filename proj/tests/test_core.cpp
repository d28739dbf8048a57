#include <doctest.h>

#include <random>
#include <string>

#include "faithdec/core.hpp"

using namespace faithdec;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kIo;
}

std::string random_text(std::mt19937_64& rng) {
  static const std::string alphabet = "aBc Z\t\n\r  xY.,!-";
  std::uniform_int_distribution<std::size_t> len(0, 24);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::string s;
  for (std::size_t i = len(rng); i > 0; --i) s.push_back(alphabet[pick(rng)]);
  return s;
}

}  // namespace

TEST_CASE("normalize_text examples") {
  CHECK(normalize_text("  Horse  is Trotting. ") == "horse is trotting.");
  CHECK(normalize_text("") == "");
  CHECK(normalize_text("A\tB\nC") == "a b c");
  CHECK(normalize_text(" \t\n ") == "");
}

TEST_CASE("normalize_text is idempotent") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto s = random_text(rng);
    const auto once = normalize_text(s);
    CHECK(normalize_text(once) == once);
    CHECK(once.find("  ") == std::string::npos);
    if (!once.empty()) {
      CHECK(once.front() != ' ');
      CHECK(once.back() != ' ');
    }
  }
}

TEST_CASE("tokenize_words") {
  CHECK(tokenize_words("  A dog  barks ") == std::vector<std::string>{"a", "dog", "barks"});
  CHECK(tokenize_words("   ").empty());
}

TEST_CASE("validate_config examples") {
  DecodeConfig cfg;
  cfg.alpha = 0.8;
  cfg.beam_width = 4;
  cfg.max_len = 20;
  cfg.rollout_max_len = 30;
  const auto v = validate_config(cfg);
  CHECK(v->alpha == 0.8);
  CHECK(v->beam_width == 4u);

  cfg.alpha = 0.0;
  CHECK_NOTHROW(validate_config(cfg));

  cfg.beam_width = 0;
  CHECK(code_of([&] { validate_config(cfg); }) == ErrorCode::kRange);
  try {
    validate_config(cfg);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("beam_width") != std::string::npos);
  }

  cfg = DecodeConfig{};
  cfg.alpha = 1.5;
  try {
    validate_config(cfg);
    FAIL("alpha accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("alpha") != std::string::npos);
  }
}

TEST_CASE("validate_config accepts exactly the valid configs") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::uint32_t> small(0, 6);
  std::uniform_real_distribution<double> a(-0.3, 1.3);
  int accepted = 0;
  for (int i = 0; i < 5000; ++i) {
    DecodeConfig cfg;
    cfg.beam_width = small(rng);
    cfg.alpha = (i % 7 == 0) ? static_cast<double>(i % 2) : a(rng);
    cfg.max_len = small(rng);
    cfg.rollout_max_len = small(rng);
    cfg.expansions_per_beam = small(rng);
    cfg.n_best = small(rng);
    cfg.seed = rng();
    cfg.rollout_cache = (rng() & 1) != 0;
    const bool expected = cfg.beam_width > 0 && cfg.alpha >= 0.0 && cfg.alpha <= 1.0 &&
                          cfg.max_len >= 2 && cfg.rollout_max_len >= cfg.max_len &&
                          cfg.expansions_per_beam > 0 && cfg.n_best > 0 &&
                          cfg.n_best <= cfg.beam_width;
    bool ok = true;
    try {
      const auto v = validate_config(cfg);
      CHECK(v->beam_width == cfg.beam_width);
      CHECK(v->alpha == cfg.alpha);
      CHECK(v->seed == cfg.seed);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kRange);
      ok = false;
    }
    CHECK(ok == expected);
    accepted += ok;
  }
  CHECK(accepted > 50);
}

TEST_CASE("hypothesis invariants") {
  VocabInfo v{4, 0, 1, {"<s>", "</s>", "a", "b"}};
  CHECK_NOTHROW(v.validate());
  const auto root = Hypothesis::root(v);
  CHECK(root.tokens() == std::vector<TokenId>{0});
  CHECK_FALSE(root.completed());

  const auto h = root.extend(2, -0.5, v.eos_id).extend(1, -0.25, v.eos_id);
  CHECK(h.completed());
  CHECK(h.logprob() == -0.75);
  CHECK(h.length_normalized_logprob() == doctest::Approx(-0.375));
  CHECK(code_of([&] { h.extend(2, -1.0, v.eos_id); }) == ErrorCode::kPrecondition);

  CHECK(code_of([&] { Hypothesis({2}, 0.0, v); }) == ErrorCode::kPrecondition);
  CHECK(code_of([&] { Hypothesis({0, 2}, 0.1, v); }) == ErrorCode::kPrecondition);
  CHECK(code_of([&] { Hypothesis({0, 1, 2}, -1.0, v); }) == ErrorCode::kPrecondition);
  CHECK(code_of([&] { Hypothesis({0, 9}, -1.0, v); }) == ErrorCode::kPrecondition);
  CHECK(Hypothesis({0, 2, 1}, -1.0, v).completed());
}

TEST_CASE("vocab validation") {
  CHECK(code_of([] { VocabInfo{3, 0, 0, {"a", "b", "c"}}.validate(); }) == ErrorCode::kRange);
  CHECK(code_of([] { VocabInfo{3, 0, 3, {"a", "b", "c"}}.validate(); }) == ErrorCode::kRange);
  CHECK(code_of([] { VocabInfo{3, 0, 1, {"a", "b"}}.validate(); }) == ErrorCode::kRange);
  CHECK(code_of([] { VocabInfo{0, 0, 1, {}}.validate(); }) == ErrorCode::kRange);
}
