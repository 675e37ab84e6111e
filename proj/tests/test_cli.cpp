#include <doctest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "moepp_test_cli";

struct Run {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run cli(const std::string& args) {
  fs::create_directories(kRoot);
  const auto out = kRoot / "stdout.txt", err = kRoot / "stderr.txt";
  const std::string cmd = std::string(MOEPP_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

fs::path write_config(const std::string& name, const std::string& body) {
  fs::create_directories(kRoot);
  auto p = kRoot / name;
  std::ofstream(p) << body;
  return p;
}

std::string tiny(const std::string& out, const std::string& extra_layer = "", const std::string& extra_train = "") {
  return R"({"model": {"vocab": 12, "hidden": 8, "intermediate": 12, "layers": 2, "heads": 2, "head_dim": 4, "seq_len": 8},
  "layer": {"n_ffn": 4, "n_zero": 1, "n_copy": 1, "n_const": 1)" +
         extra_layer + R"(},
  "train": {"steps": 8, "batch": 4, "warmup_steps": 2, "corpus": {"kind": "pattern", "length": 600})" +
         extra_train + R"(},
  "sim": {"devices": 2, "tau_sweep": [0.1, 0.25, 0.5, 0.75, 1.0]},
  "io": {"output_dir": ")" +
         (kRoot / out).string() + R"(", "trace_batches": 2}})";
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  auto missing = write_config("missing.json", R"({"train": {"corpus": {"kind": "file", "path": "/no/such/corpus.txt"}}})");
  auto r = cli("train --config " + missing.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("/no/such/corpus.txt") != std::string::npos);

  auto typo = write_config("typo.json", R"({"layer": {"tua": 0.5}})");
  r = cli("config-check --config " + typo.string());
  CHECK(r.code == 2);
  CHECK(r.err.find("layer.tua") != std::string::npos);

  r = cli("analyze --trace whatever.jsonl --analysis nonsense");
  CHECK(r.code == 2);
  CHECK(r.err.find("expert-load") != std::string::npos);
  CHECK(r.err.find("routing-scores") != std::string::npos);

  CHECK(cli("train").code == 2);  // --config is required
  CHECK(cli("no-such-command").code == 2);
}

TEST_CASE("config-check fills defaults") {
  auto cfg = write_config("check.json", R"({"layer": {"n_ffn": 16, "n_const": "auto"}})");
  auto r = cli("config-check --config " + cfg.string());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\"n_const\": 2") != std::string::npos);
  CHECK(r.out.find("\"gamma\": 1.1") != std::string::npos);
}

TEST_CASE("sweep-tau writes one row per tau") {
  auto cfg = write_config("sweep.json", tiny("sweep"));
  auto r = cli("sweep-tau --config " + cfg.string());
  REQUIRE(r.code == 0);
  auto csv = slurp(kRoot / "sweep" / "tau_sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  CHECK(csv == r.out);
}

TEST_CASE("train, simulate, analyze") {
  auto cfg = write_config("run.json", tiny("run"));
  auto r = cli("train --config " + cfg.string());
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto dir = kRoot / "run";
  for (const char* f : {"config.json", "metrics.jsonl", "checkpoint.bin", "trace.jsonl"}) CHECK(fs::exists(dir / f));
  const std::string metrics = slurp(dir / "metrics.jsonl");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 8);

  SUBCASE("same seed, same metrics") {
    auto again = write_config("run2.json", tiny("run2"));
    REQUIRE(cli("train --config " + again.string()).code == 0);
    CHECK(slurp(kRoot / "run2" / "metrics.jsonl") == metrics);
    REQUIRE(cli("train --config " + again.string() + " --seed 1").code == 0);
    CHECK(slurp(kRoot / "run2" / "metrics.jsonl") != metrics);
  }
  SUBCASE("eval") {
    auto e = cli("eval --config " + cfg.string());
    REQUIRE(e.code == 0);
    CHECK(e.out.find("\"perplexity\"") != std::string::npos);
  }
  SUBCASE("simulate") {
    auto s = cli("simulate --config " + cfg.string());
    REQUIRE_MESSAGE(s.code == 0, s.err);
    auto report = slurp(dir / "cost_report.txt");
    CHECK(report.find("predicted_ratio 0.5\n") != std::string::npos);
    CHECK(report.find("zc_remote_bytes 0\n") != std::string::npos);
    // a trace from a different expert mix is refused
    auto other = write_config("other.json", tiny("run", R"(, "n_ffn": 8)"));
    CHECK(cli("simulate --config " + other.string()).code == 2);
  }
  SUBCASE("analyze reruns are byte-identical") {
    for (const char* a : {"expert-load", "expert-load-tag", "ffn-per-token", "routing-scores"}) {
      CAPTURE(a);
      const auto out1 = kRoot / "an1", out2 = kRoot / "an2";
      REQUIRE(cli("analyze --trace " + (dir / "trace.jsonl").string() + " --analysis " + a + " --out " + out1.string()).code == 0);
      REQUIRE(cli("analyze --trace " + (dir / "trace.jsonl").string() + " --analysis " + a + " --out " + out2.string()).code == 0);
      for (const char* ext : {".csv", ".svg"}) {
        auto f1 = slurp(out1 / (std::string(a) + ext));
        CHECK(!f1.empty());
        CHECK(f1 == slurp(out2 / (std::string(a) + ext)));
      }
    }
  }
}

TEST_CASE("vanilla trace has complexity ratio one") {
  auto cfg = write_config("vanilla.json", tiny("vanilla", R"(, "n_zero": 0, "n_copy": 0, "n_const": 0, "tau": 1.0, "residuals": false)"));
  REQUIRE(cli("train --config " + cfg.string()).code == 0);
  auto s = cli("simulate --config " + cfg.string());
  REQUIRE_MESSAGE(s.code == 0, s.err);
  auto report = slurp(kRoot / "vanilla" / "cost_report.txt");
  CHECK(report.find("predicted_ratio 1\n") != std::string::npos);
  CHECK(report.find("zc_assignments 0\n") != std::string::npos);
}

TEST_CASE("divergence exits with 3") {
  auto cfg = write_config("nan.json", tiny("nan", "", R"(, "lr": 1e300, "clip_norm": 1e300)"));
  auto r = cli("train --config " + cfg.string());
  CHECK(r.code == 3);
  CHECK(r.err.find("diverged at step") != std::string::npos);
}
