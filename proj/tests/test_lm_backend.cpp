#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "faithdec/lm_backend.hpp"
#include "support/toy_lm.hpp"

using namespace faithdec;

namespace {

const std::string kFixtures = FD_FIXTURE_DIR;

ErrorCode load_error(const std::string& name, std::string* message = nullptr) {
  try {
    load_tabular_lm(kFixtures + "/" + name);
  } catch (const Error& e) {
    if (message) *message = e.what();
    return e.code();
  }
  FAIL("expected load failure for " << name);
  return ErrorCode::kIo;
}

}  // namespace

TEST_CASE("toy LM file round-trips") {
  auto lm = load_tabular_lm(kFixtures + "/toy3.lm");
  CHECK(lm.vocab().vocab_size == 3);
  CHECK(lm.vocab().token_strings[2] == "horse");
  CHECK(lm.row_count() == 1);

  auto session = lm.open_session("c");
  CHECK(session->vocab().vocab_size == 3);
  CHECK(session->context_id() == "c");
  const std::vector<TokenId> bos{0};
  const auto lp = session->next_logprobs(bos);
  REQUIRE(lp.size() == 3);
  CHECK(lp[0] == std::log(0.7));
  CHECK(lp[1] == std::log(0.2));
  CHECK(lp[2] == std::log(0.1));
}

TEST_CASE("fallback applies to unknown contexts and prefixes") {
  auto lm = load_tabular_lm(kFixtures + "/toy3.lm");
  auto session = lm.open_session("clip1");
  CHECK(session->vocab().vocab_size == 3);
  const std::vector<TokenId> bos{0};
  for (double x : session->next_logprobs(bos)) CHECK(x == doctest::Approx(std::log(1.0 / 3.0)));
  auto other = lm.open_session("c");
  const std::vector<TokenId> longer{0, 2, 2};
  for (double x : other->next_logprobs(longer)) CHECK(x == doctest::Approx(std::log(1.0 / 3.0)));
}

TEST_CASE("next_logprobs rejects bad prefixes") {
  auto lm = load_tabular_lm(kFixtures + "/toy3.lm");
  auto session = lm.open_session("c");
  auto code = [&](std::vector<TokenId> prefix) {
    try {
      session->next_logprobs(prefix);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  CHECK(code({0, 1}) == ErrorCode::kPrecondition);
  CHECK(code({}) == ErrorCode::kPrecondition);
  CHECK(code({2}) == ErrorCode::kPrecondition);
  CHECK(code({0, 5}) == ErrorCode::kPrecondition);
}

TEST_CASE("malformed LM files") {
  std::string msg;
  CHECK(load_error("bad_sum.lm", &msg) == ErrorCode::kNormalization);
  CHECK(msg.find("line") != std::string::npos);
  CHECK(load_error("bad_id.lm", &msg) == ErrorCode::kParse);
  CHECK(msg.find("line") != std::string::npos);
  CHECK(load_error("does_not_exist.lm") == ErrorCode::kIo);

  auto parse_code = [](std::string_view text) {
    try {
      parse_tabular_lm(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kIo;
  };
  CHECK(parse_code("token 0 a\n") == ErrorCode::kParse);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\n") == ErrorCode::kParse);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\ntoken 1 b\nrow c - 0.5\n") == ErrorCode::kParse);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\ntoken 1 b\nrow c - 0.5 0.5\nrow c - 0.5 0.5\n") ==
        ErrorCode::kParse);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\ntoken 1 b\nrow c 1 0.5 0.5\n") == ErrorCode::kParse);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\ntoken 1 b\nfallback 0.9 0.2\n") ==
        ErrorCode::kNormalization);
  CHECK(parse_code("vocab 2 bos 0 eos 1\ntoken 0 a\ntoken 1 b\nrow c - -0.5 1.5\n") ==
        ErrorCode::kNormalization);
}

TEST_CASE("wildcard rows and configurable fallback") {
  const auto lm = parse_tabular_lm(
      "vocab 3 bos 0 eos 1\ntoken 0 <s>\ntoken 1 </s>\ntoken 2 x\n"
      "fallback 0 1 0\nrow * - 0 0.5 0.5\nrow a - 0 0.1 0.9\n");
  const std::vector<TokenId> bos{0}, x{0, 2};
  CHECK(lm.distribution("a", bos)[2] == 0.9);
  CHECK(lm.distribution("b", bos)[2] == 0.5);
  CHECK(lm.distribution("a", x)[1] == 1.0);
}

TEST_CASE("distributions sum to one for every prefix") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto toy = testing::random_toy(seed, 4, 5);
    auto session = toy.lm->open_session("clip");
    std::vector<TokenId> prefix{0};
    std::mt19937_64 rng(seed);
    for (int step = 0; step < 4; ++step) {
      const auto lp = session->next_logprobs(prefix);
      double sum = 0.0;
      for (double x : lp) sum += std::exp(x);
      CHECK(std::abs(sum - 1.0) <= 1e-6);
      CHECK(session->next_logprobs(prefix) == lp);
      prefix.push_back(static_cast<TokenId>(2 + rng() % 2));
    }
  }
}

TEST_CASE("table lookups ignore insertion order") {
  auto toy = testing::random_toy(99, 4, 5);
  const auto& v = toy.lm->vocab();
  std::vector<std::pair<TabularLM::Key, std::vector<double>>> entries;
  std::vector<std::vector<TokenId>> prefixes;
  std::function<void(std::vector<TokenId>&)> collect = [&](std::vector<TokenId>& p) {
    prefixes.push_back(p);
    entries.emplace_back(TabularLM::Key{"clip", {p.begin() + 1, p.end()}},
                         toy.lm->distribution("clip", p));
    if (p.size() >= 3) return;
    for (TokenId t = 2; t < v.vocab_size; ++t) {
      p.push_back(t);
      collect(p);
      p.pop_back();
    }
  };
  std::vector<TokenId> root{0};
  collect(root);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(entries.begin(), entries.end(), rng);
    std::string text = "vocab 4 bos 0 eos 1\ntoken 0 <s>\ntoken 1 </s>\ntoken 2 w2\ntoken 3 w3\n";
    for (const auto& [key, probs] : entries) {
      text += "row clip ";
      if (key.second.empty()) {
        text += "-";
      } else {
        for (std::size_t i = 0; i < key.second.size(); ++i) {
          text += (i ? "," : "") + std::to_string(key.second[i]);
        }
      }
      for (double p : probs) {
        char buf[32];
        std::snprintf(buf, sizeof buf, " %.17g", p);
        text += buf;
      }
      text += "\n";
    }
    const auto reparsed = parse_tabular_lm(text);
    std::map<TabularLM::Key, std::vector<double>> direct(entries.begin(), entries.end());
    const TabularLM built(v, {}, std::move(direct));
    for (const auto& p : prefixes) {
      CHECK(reparsed.distribution("clip", p) == toy.lm->distribution("clip", p));
      CHECK(built.distribution("clip", p) == toy.lm->distribution("clip", p));
    }
  }
}
