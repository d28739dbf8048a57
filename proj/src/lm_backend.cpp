#include "faithdec/lm_backend.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace faithdec {

std::vector<double> LmSession::next_logprobs(std::span<const TokenId> prefix) {
  const VocabInfo& v = vocab();
  if (prefix.empty() || prefix.front() != v.bos_id) {
    throw Error(ErrorCode::kPrecondition, "prefix must start with bos");
  }
  for (TokenId id : prefix) {
    if (!v.contains(id)) throw Error(ErrorCode::kPrecondition, "prefix token out of vocabulary");
    if (id == v.eos_id) throw Error(ErrorCode::kPrecondition, "prefix must not contain eos");
  }
  return compute_logprobs(prefix);
}

namespace {

class TabularSession final : public LmSession {
 public:
  TabularSession(const TabularLM& lm, std::string context_id)
      : lm_(lm), context_id_(std::move(context_id)) {}

  const VocabInfo& vocab() const override { return lm_.vocab(); }
  const std::string& context_id() const override { return context_id_; }

 protected:
  std::vector<double> compute_logprobs(std::span<const TokenId> prefix) override {
    const auto& probs = lm_.distribution(context_id_, prefix);
    std::vector<double> out(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) out[i] = std::log(probs[i]);
    return out;
  }

 private:
  const TabularLM& lm_;
  std::string context_id_;
};

std::string describe_key(const TabularLM::Key& key) {
  std::string s = key.first + " [";
  if (key.second.empty()) s += "-";
  for (std::size_t i = 0; i < key.second.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(key.second[i]);
  }
  return s + "]";
}

void check_distribution(const std::vector<double>& p, std::size_t n, const std::string& what) {
  if (p.size() != n) {
    throw Error(ErrorCode::kParse, what + ": expected " + std::to_string(n) + " probabilities");
  }
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) {
      throw Error(ErrorCode::kNormalization, what + ": probabilities must be finite and >= 0");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg.precision(12);
    msg << what << ": probabilities sum to " << sum << ", expected 1";
    throw Error(ErrorCode::kNormalization, msg.str());
  }
}

}  // namespace

TabularLM::TabularLM(VocabInfo vocab, std::vector<double> fallback,
                     std::map<Key, std::vector<double>> rows)
    : vocab_(std::move(vocab)), fallback_(std::move(fallback)) {
  vocab_.validate();
  if (fallback_.empty()) {
    fallback_.assign(vocab_.vocab_size, 1.0 / static_cast<double>(vocab_.vocab_size));
  }
  check_distribution(fallback_, vocab_.vocab_size, "fallback");
  for (auto& [key, probs] : rows) {
    check_distribution(probs, vocab_.vocab_size, "row " + describe_key(key));
    for (TokenId id : key.second) {
      if (!vocab_.contains(id) || id == vocab_.eos_id) {
        throw Error(ErrorCode::kParse, "row " + describe_key(key) + ": invalid prefix id");
      }
    }
    rows_.emplace(key, std::move(probs));
  }
}

std::unique_ptr<LmSession> TabularLM::open_session(std::string_view context_id) {
  return std::make_unique<TabularSession>(*this, std::string(context_id));
}

const std::vector<double>& TabularLM::distribution(std::string_view context_id,
                                                   std::span<const TokenId> prefix) const {
  Key key{std::string(context_id), std::vector<TokenId>(prefix.begin() + 1, prefix.end())};
  if (auto it = rows_.find(key); it != rows_.end()) return it->second;
  key.first = "*";
  if (auto it = rows_.find(key); it != rows_.end()) return it->second;
  return fallback_;
}

namespace {

struct LineCursor {
  std::size_t line_no = 0;

  [[noreturn]] void fail(ErrorCode code, const std::string& msg) const {
    throw Error(code, "line " + std::to_string(line_no) + ": " + msg);
  }
};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view s, const LineCursor& cur, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    cur.fail(ErrorCode::kParse, std::string("bad ") + what + " '" + std::string(s) + "'");
  }
  return value;
}

}  // namespace

TabularLM parse_tabular_lm(std::string_view text) {
  VocabInfo vocab;
  bool have_header = false;
  std::vector<bool> seen_token;
  std::vector<double> fallback;
  std::map<TabularLM::Key, std::vector<double>> rows;
  LineCursor cur;

  auto parse_probs = [&](std::span<const std::string_view> fields) {
    std::vector<double> p;
    p.reserve(fields.size());
    for (auto f : fields) p.push_back(parse_number<double>(f, cur, "probability"));
    if (p.size() != vocab.vocab_size) {
      cur.fail(ErrorCode::kParse, "expected " + std::to_string(vocab.vocab_size) +
                                      " probabilities, got " + std::to_string(p.size()));
    }
    return p;
  };
  auto parse_id = [&](std::string_view s) {
    auto id = parse_number<TokenId>(s, cur, "token id");
    if (id >= vocab.vocab_size) {
      cur.fail(ErrorCode::kParse, "token id " + std::to_string(id) + " >= vocab size");
    }
    return id;
  };

  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++cur.line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    auto fields = split_fields(line);
    if (fields.empty() || fields[0].starts_with('#')) continue;
    const auto kind = fields[0];

    if (kind == "vocab") {
      if (have_header) cur.fail(ErrorCode::kParse, "duplicate vocab header");
      if (fields.size() != 6 || fields[2] != "bos" || fields[4] != "eos") {
        cur.fail(ErrorCode::kParse, "expected 'vocab <n> bos <id> eos <id>'");
      }
      vocab.vocab_size = parse_number<std::size_t>(fields[1], cur, "vocab size");
      if (vocab.vocab_size == 0) cur.fail(ErrorCode::kParse, "vocab size must be positive");
      vocab.bos_id = parse_id(fields[3]);
      vocab.eos_id = parse_id(fields[5]);
      if (vocab.bos_id == vocab.eos_id) cur.fail(ErrorCode::kParse, "bos and eos must differ");
      vocab.token_strings.assign(vocab.vocab_size, {});
      seen_token.assign(vocab.vocab_size, false);
      have_header = true;
      continue;
    }
    if (!have_header) cur.fail(ErrorCode::kParse, "vocab header must come first");

    if (kind == "token") {
      if (fields.size() < 3) cur.fail(ErrorCode::kParse, "expected 'token <id> <string>'");
      const TokenId id = parse_id(fields[1]);
      if (seen_token[id]) cur.fail(ErrorCode::kParse, "duplicate token " + std::to_string(id));
      seen_token[id] = true;
      // The string runs to the end of the line.
      const auto start = static_cast<std::size_t>(fields[2].data() - line.data());
      std::string_view rest = line.substr(start);
      while (!rest.empty() && (rest.back() == ' ' || rest.back() == '\t')) rest.remove_suffix(1);
      vocab.token_strings[id] = std::string(rest);
    } else if (kind == "fallback") {
      if (!fallback.empty()) cur.fail(ErrorCode::kParse, "duplicate fallback");
      fallback = parse_probs(std::span(fields).subspan(1));
      try {
        check_distribution(fallback, vocab.vocab_size, "fallback");
      } catch (const Error& e) {
        cur.fail(e.code(), e.what());
      }
    } else if (kind == "row") {
      if (fields.size() < 3) cur.fail(ErrorCode::kParse, "expected 'row <context> <prefix> <probs>'");
      TabularLM::Key key;
      key.first = std::string(fields[1]);
      if (fields[2] != "-") {
        std::string_view ids = fields[2];
        std::size_t p = 0;
        while (p <= ids.size()) {
          auto comma = ids.find(',', p);
          if (comma == std::string_view::npos) comma = ids.size();
          const TokenId id = parse_id(ids.substr(p, comma - p));
          if (id == vocab.eos_id) cur.fail(ErrorCode::kParse, "prefix must not contain eos");
          key.second.push_back(id);
          p = comma + 1;
        }
      }
      auto probs = parse_probs(std::span(fields).subspan(3));
      try {
        check_distribution(probs, vocab.vocab_size, "row " + describe_key(key));
      } catch (const Error& e) {
        cur.fail(e.code(), e.what());
      }
      if (!rows.emplace(key, std::move(probs)).second) {
        cur.fail(ErrorCode::kParse, "duplicate row " + describe_key(key));
      }
    } else {
      cur.fail(ErrorCode::kParse, "unknown directive '" + std::string(kind) + "'");
    }
  }

  if (!have_header) throw Error(ErrorCode::kParse, "missing vocab header");
  for (std::size_t id = 0; id < seen_token.size(); ++id) {
    if (!seen_token[id]) {
      throw Error(ErrorCode::kParse, "missing token line for id " + std::to_string(id));
    }
  }
  return TabularLM(std::move(vocab), std::move(fallback), std::move(rows));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TabularLM load_tabular_lm(const std::filesystem::path& path) {
  return parse_tabular_lm(read_text_file(path));
}

}  // namespace faithdec
