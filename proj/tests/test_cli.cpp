#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const std::string kCli = FD_CLI_PATH;
const std::string kFixtures = FD_FIXTURE_DIR;
const std::string kTemplates = FD_TEMPLATE_DIR;

struct RunResult {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
RunResult run(const std::string& args) {
  const std::string cmd = "'" + kCli + "' " + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("faithdec_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string steering_args() {
  return "--backend tabular:" + kFixtures + "/steering.lm --embeddings bow:" + kFixtures +
         "/steering_audio.emb --dataset " + kFixtures +
         "/decode_rows.jsonl --beam-width 1 --expansions 2 --max-len 4 --rollout-max-len 4";
}

}  // namespace

TEST_CASE("selftest passes") {
  const auto r = run("selftest");
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("selftest passed") != std::string::npos);
}

TEST_CASE("decode with alpha zero matches plain beam search") {
  TempDir tmp;
  REQUIRE(run("decode " + steering_args() + " --alpha 0 --out " + (tmp / "f.jsonl")).code == 0);
  REQUIRE(run("decode --decoder beam " + steering_args() + " --out " + (tmp / "b.jsonl")).code == 0);
  const auto f = jsonl(tmp / "f.jsonl");
  const auto b = jsonl(tmp / "b.jsonl");
  REQUIRE(f.size() == b.size());
  REQUIRE(f.size() == 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(f[i]["context_id"] == b[i]["context_id"]);
    CHECK(f[i]["caption"] == b[i]["caption"]);
    CHECK(f[i]["decoder"] == "faithful");
    CHECK(b[i]["decoder"] == "beam");
  }
}

TEST_CASE("alpha sweep writes one block per value") {
  TempDir tmp;
  REQUIRE(run("decode " + steering_args() + " --alpha 0.1,0.8 --out " + (tmp / "s.jsonl")).code == 0);
  const auto rows = jsonl(tmp / "s.jsonl");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["alpha"] == 0.1);
  CHECK(rows[0]["caption"] == "siren");
  CHECK(rows[2]["alpha"] == 0.8);
  CHECK(rows[2]["context_id"] == "clip");
  CHECK(rows[2]["caption"] == "dog");
}

TEST_CASE("decode n-best rows carry a rank") {
  TempDir tmp;
  REQUIRE(run("decode " + steering_args() + " --beam-width 2 --n-best 2 --out " + (tmp / "n.jsonl"))
              .code == 0);
  const auto rows = jsonl(tmp / "n.jsonl");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0]["rank"] == 1);
  CHECK(rows[1]["rank"] == 2);
}

TEST_CASE("decode error exit codes") {
  TempDir tmp;
  auto r = run("decode --backend tabular:" + kFixtures + "/missing.lm --dataset " + kFixtures +
               "/decode_rows.jsonl");
  CHECK(r.code == 2);
  CHECK(r.out.find("backend") != std::string::npos);

  r = run("decode " + steering_args() + " --alpha 1.5");
  CHECK(r.code == 2);
  r = run("decode " + steering_args() + " --max-len 1");
  CHECK(r.code == 2);
  r = run("decode --backend remote:127.0.0.1:1 --decoder beam --dataset " + kFixtures +
          "/decode_rows.jsonl");
  CHECK(r.code == 3);

  r = run("decode --backend tabular:" + kFixtures + "/steering.lm --embeddings bow:" + kFixtures +
          "/steering_audio.emb --dataset " + kFixtures + "/decode_rows_missing.jsonl --quarantine " +
          (tmp / "q.jsonl") + " --out " + (tmp / "o.jsonl"));
  CHECK(r.code == 4);
  const auto q = jsonl(tmp / "q.jsonl");
  REQUIRE(q.size() == 1);
  CHECK(q[0]["context_id"] == "clip3");
  CHECK(q[0]["reason"] == "not_found");
  CHECK(jsonl(tmp / "o.jsonl").size() == 1);
}

TEST_CASE("config file with relative paths and flag overrides") {
  TempDir tmp;
  const auto rel = fs::relative(kFixtures, tmp.path).string();
  {
    std::ofstream cfg(tmp / "run.json");
    cfg << json{{"backend", "tabular:" + rel + "/steering.lm"},
                {"embeddings", "bow:" + rel + "/steering_audio.emb"},
                {"dataset", rel + "/decode_rows.jsonl"},
                {"alpha", 0.1},
                {"decode", {{"beam_width", 1}, {"expansions_per_beam", 2}, {"max_len", 4},
                            {"rollout_max_len", 4}}}}
               .dump();
  }
  REQUIRE(run("decode --config " + (tmp / "run.json") + " --out " + (tmp / "a.jsonl")).code == 0);
  CHECK(jsonl(tmp / "a.jsonl")[0]["caption"] == "siren");
  REQUIRE(run("decode --config " + (tmp / "run.json") + " --alpha 0.8 --out " + (tmp / "b.jsonl"))
              .code == 0);
  CHECK(jsonl(tmp / "b.jsonl")[0]["caption"] == "dog");

  {
    std::ofstream cfg(tmp / "bad.json");
    cfg << R"({"backend": "tabular:x.lm", "beam": 3})";
  }
  const auto r = run("decode --config " + (tmp / "bad.json"));
  CHECK(r.code == 2);
  CHECK(r.out.find("unknown key 'beam'") != std::string::npos);
}

TEST_CASE("compare of identical runs has zero deltas") {
  TempDir tmp;
  REQUIRE(run("decode " + steering_args() + " --out " + (tmp / "a.jsonl")).code == 0);
  const auto r = run("compare " + (tmp / "a.jsonl") + " " + (tmp / "a.jsonl") + " --references " +
                     kFixtures + "/decode_rows.jsonl");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["reports"][0]["split"] == "faithful_1");
  CHECK(j["reports"][1]["split"] == "faithful_2");
  for (const auto& [name, delta] : j["deltas"].items()) CHECK(delta.get<double>() == 0.0);
}

TEST_CASE("compare picks an alpha block out of a sweep") {
  TempDir tmp;
  REQUIRE(run("decode " + steering_args() + " --alpha 0,0.8 --out " + (tmp / "s.jsonl")).code == 0);
  REQUIRE(run("decode --decoder beam " + steering_args() + " --out " + (tmp / "b.jsonl")).code == 0);
  auto r = run("compare " + (tmp / "b.jsonl") + " " + (tmp / "s.jsonl") + " --references " +
               kFixtures + "/decode_rows.jsonl");
  CHECK(r.code == 2);
  r = run("compare " + (tmp / "b.jsonl") + " " + (tmp / "s.jsonl") + " --alpha 0.8 --references " +
          kFixtures + "/decode_rows.jsonl");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["reports"][0]["split"] == "beam");
  CHECK(j["reports"][1]["split"] == "faithful");
  // "dog" matches the reference for clip; "siren" does not.
  CHECK(j["deltas"]["bleu1"].get<double>() > 0.0);
}

TEST_CASE("compare rejects disjoint context ids") {
  TempDir tmp;
  {
    std::ofstream a(tmp / "a.jsonl");
    a << R"({"context_id": "clip", "caption": "dog", "alpha": 0.8, "decoder": "beam"})" << "\n";
    std::ofstream b(tmp / "b.jsonl");
    b << R"({"context_id": "clip2", "caption": "dog", "alpha": 0.8, "decoder": "beam"})" << "\n";
  }
  const auto r = run("compare " + (tmp / "a.jsonl") + " " + (tmp / "b.jsonl") + " --references " +
                     kFixtures + "/decode_rows.jsonl");
  CHECK(r.code == 2);
  CHECK(r.out.find("only in first: clip;") != std::string::npos);
  CHECK(r.out.find("only in second: clip2;") != std::string::npos);
}

TEST_CASE("eval split report on the hallucination fixture") {
  const auto r = run("eval --candidates " + kFixtures + "/halluc_eval.jsonl --backend tabular:" +
                     kFixtures + "/halluc_vocab.lm --embeddings bow:" + kFixtures +
                     "/halluc_audio.emb");
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  const auto& h = j["reports"][0]["corpus"];
  const auto& c = j["reports"][1]["corpus"];
  CHECK(h["bleu1"].get<double>() == doctest::Approx(0.425).epsilon(1e-12));
  CHECK(c["bleu1"].get<double>() == doctest::Approx(0.91428571428571426).epsilon(1e-12));
  CHECK(h["clapscore_tt"].get<double>() == doctest::Approx(0.43782928567670587).epsilon(1e-12));
  CHECK(c["clapscore_tt"].get<double>() == doctest::Approx(0.83163915459899362).epsilon(1e-12));

  const auto t = run("eval --format table --candidates " + kFixtures + "/halluc_eval.jsonl");
  REQUIRE(t.code == 0);
  CHECK(t.out.find("non_hallucinated") != std::string::npos);
  CHECK(t.out.find("clapscore_tt") == std::string::npos);
}

TEST_CASE("eval input errors") {
  TempDir tmp;
  { std::ofstream(tmp / "empty.jsonl"); }
  CHECK(run("eval --candidates " + (tmp / "empty.jsonl")).code == 2);
  {
    std::ofstream o(tmp / "norefs.jsonl");
    o << R"({"context_id": "x", "candidate": "dog"})" << "\n";
  }
  CHECK(run("eval --candidates " + (tmp / "norefs.jsonl")).code == 2);
  const auto r = run("eval --candidates " + (tmp / "norefs.jsonl") + " --references " + kFixtures +
                     "/decode_rows.jsonl");
  CHECK(r.code == 2);
  CHECK(r.out.find("'x'") != std::string::npos);
}

TEST_CASE("augment reproduces the golden file") {
  TempDir tmp;
  const auto r = run("augment --dataset " + kFixtures + "/augment_rows.jsonl --templates " +
                     kTemplates + " --seed 1 --parallelism 3 --out " + (tmp / "a.jsonl"));
  REQUIRE(r.code == 0);
  CHECK(slurp(tmp / "a.jsonl") == slurp(kFixtures + "/augment_golden.jsonl"));
}

TEST_CASE("augment quarantine and parse errors") {
  TempDir tmp;
  auto r = run("augment --dataset " + kFixtures + "/augment_with_short.jsonl --templates " +
               kTemplates + " --seed 1 --out " + (tmp / "a.jsonl") + " --quarantine " +
               (tmp / "q.jsonl"));
  CHECK(r.code == 4);
  const auto q = jsonl(tmp / "q.jsonl");
  REQUIRE(q.size() == 1);
  CHECK(q[0]["context_id"] == "clotho_short");

  r = run("augment --dataset " + kFixtures + "/augment_bad.jsonl --templates " + kTemplates +
          " --out " + (tmp / "b.jsonl"));
  CHECK(r.code == 2);
  CHECK(r.out.find("line 2") != std::string::npos);

  r = run("augment --dataset " + kFixtures + "/augment_rows.jsonl --templates " + kTemplates +
          " --template-version v9 --out " + (tmp / "c.jsonl"));
  CHECK(r.code == 2);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run("").code == 2);
  CHECK(run("decode --no-such-flag").code == 2);
  CHECK(run("--help").code == 0);
}
