#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include <json.hpp>

#include "doctest.h"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// Runs the CLI binary inside `dir`.
Result run(const fs::path& dir, const std::string& args) {
  const auto err_file = dir / "stderr.txt";
  const std::string cmd =
      "cd '" + dir.string() + "' && '" + std::string(HRT_CLI_PATH) + "' " + args + " 2> '" + err_file.string() + "'";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = slurp(err_file);
  return r;
}

nlohmann::json manifest(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

const char* kSmallModel = "--model-dim 16 --ffn-dim 32 --heads 2 --log-every 5";

fs::path small_corpus(const std::string& name) {
  const auto dir = hrt::testing::temp_dir(name);
  REQUIRE(run(dir, "gen-data --train-size 200 --valid-size 20 --test-size 20 --out-dir data").code == 0);
  return dir;
}

}  // namespace

TEST_CASE("bleu of a file against itself") {
  const auto dir = small_corpus("cli_bleu");
  const auto r = run(dir, "bleu --hyp data/test.tgt --ref data/test.tgt --out score.json");
  CHECK(r.code == 0);
  CHECK(r.out == "100.00\n");
  CHECK(manifest(dir / "score.json")["bleu"] == 100.0);
  CHECK(manifest(dir / "score.json.manifest.json")["subcommand"] == "bleu");
}

TEST_CASE("usage errors exit with one and name the problem") {
  const auto dir = hrt::testing::temp_dir("cli_usage");
  auto r = run(dir, "bleu --hyp a.txt --ref b.txt --colour red");
  CHECK(r.code == 1);
  // The valid flags are listed.
  CHECK(r.err.find("--smooth") != std::string::npos);

  r = run(dir, "bleu --hyp missing_hyp.txt --ref missing_hyp.txt");
  CHECK(r.code == 1);
  CHECK(r.err.find("missing_hyp.txt") != std::string::npos);

  CHECK(run(dir, "").code == 1);
  CHECK(run(dir, "frobnicate").code == 1);
  CHECK(run(dir, "gen-data --task middle --out-dir d").code == 1);
}

TEST_CASE("runtime failures exit with two") {
  const auto dir = hrt::testing::temp_dir("cli_runtime");
  std::ofstream(dir / "bad.ckpt") << "not a checkpoint";
  const auto r = run(dir, "inspect-checkpoint --model bad.ckpt");
  CHECK(r.code == 2);
  CHECK(!r.err.empty());
}

TEST_CASE("help lists every flag with its default") {
  const auto dir = hrt::testing::temp_dir("cli_help");
  for (const char* sub : {"gen-data", "train", "distill", "translate", "bench", "maskexp", "bleu", "grad-check",
                          "inspect-checkpoint"}) {
    const auto r = run(dir, std::string(sub) + " --help");
    REQUIRE(r.code == 0);
    std::istringstream is(r.out);
    std::string line;
    std::size_t flags = 0;
    while (std::getline(is, line)) {
      if (line.rfind("  --", 0) != 0) continue;
      ++flags;
      INFO(sub << ": " << line);
      // Options without a default are required or empty-by-default paths.
      const bool has_default = line.find('[') != std::string::npos;
      CHECK((has_default || line.find("REQUIRED") != std::string::npos || line.find("TEXT") != std::string::npos));
      CHECK((line.find("--seed") == std::string::npos || line.find("[1]") != std::string::npos));
    }
    CHECK(flags >= 3);
  }
  const auto train = run(dir, "train --help").out;
  for (const char* s : {"--steps UINT [10000]", "--p-raw FLOAT [0.5]", "--lambda FLOAT [1]", "--k INT", "[2]",
                        "--mode TEXT [hrt]", "--curriculum BOOLEAN [true]"}) {
    CHECK(train.find(s) != std::string::npos);
  }
  const auto bench = run(dir, "bench --help").out;
  CHECK(bench.find("[[1,8,16,32]]") != std::string::npos);
  CHECK(bench.find("--bat UINT [5]") != std::string::npos);
  CHECK(bench.find("--bnat UINT [1]") != std::string::npos);
  CHECK(bench.find("--iterations UINT [10]") != std::string::npos);
}

TEST_CASE("config layering: defaults < file < flags") {
  const auto dir = small_corpus("cli_layers");
  std::ofstream(dir / "cfg.json") << R"({"mode": "at", "p_raw": 1.0, "steps": 3, "model-dim": 16, "ffn-dim": 32,
                                         "heads": 2, "eval-split": "none"})";
  REQUIRE(run(dir, "train --config cfg.json --data-dir data --steps 2 --out a.ckpt").code == 0);
  const auto m = manifest(dir / "a.ckpt.manifest.json");
  CHECK(m["config"]["steps"] == 2);
  CHECK(m["config"]["mode"] == "at");
  CHECK(m["config"]["model-dim"] == 16);
  CHECK(m["config"]["batch-size"] == 64);
  CHECK(m["results"]["final"]["step"] == 1);

  std::ofstream(dir / "typo.json") << R"({"stepz": 3})";
  const auto r = run(dir, "train --config typo.json --data-dir data --out b.ckpt");
  CHECK(r.code == 1);
  CHECK(r.err.find("stepz") != std::string::npos);
}

TEST_CASE("re-running from a manifest reproduces outputs") {
  const auto dir = small_corpus("cli_rerun");
  const std::string base = std::string("train --data-dir data --mode at --p-raw 1 --steps 4 ") + kSmallModel;
  REQUIRE(run(dir, base + " --out a.ckpt").code == 0);
  REQUIRE(run(dir, "train --config a.ckpt.manifest.json --out b.ckpt").code == 0);
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  CHECK(manifest(dir / "b.ckpt.manifest.json")["config"]["steps"] == 4);

  REQUIRE(run(dir, base + " --seed 2 --out c.ckpt").code == 0);
  CHECK(slurp(dir / "a.ckpt") != slurp(dir / "c.ckpt"));

  REQUIRE(run(dir, "translate --model a.ckpt --src data/test.src --system at --out t1.txt").code == 0);
  REQUIRE(run(dir, "translate --config t1.txt.manifest.json --out t2.txt").code == 0);
  CHECK(slurp(dir / "t1.txt") == slurp(dir / "t2.txt"));
  // A manifest of another subcommand is rejected.
  CHECK(run(dir, "translate --config a.ckpt.manifest.json --out t3.txt").code == 1);
}

TEST_CASE("gen-data honors the seed") {
  const auto dir = hrt::testing::temp_dir("cli_seed");
  const std::string base = "gen-data --train-size 50 --valid-size 5 --test-size 5";
  REQUIRE(run(dir, base + " --out-dir a").code == 0);
  REQUIRE(run(dir, base + " --out-dir b").code == 0);
  REQUIRE(run(dir, base + " --seed 9 --out-dir c").code == 0);
  CHECK(slurp(dir / "a/train.src") == slurp(dir / "b/train.src"));
  CHECK(slurp(dir / "a/train.src") != slurp(dir / "c/train.src"));
  CHECK(manifest(dir / "c/manifest.json")["seed"] == 9);
}

TEST_CASE("zero-step fine-tune emits the initial checkpoint") {
  const auto dir = small_corpus("cli_zero");
  REQUIRE(run(dir, std::string("train --data-dir data --mode at --p-raw 1 --steps 3 --eval-split none ") + kSmallModel +
                       " --out at.ckpt")
              .code == 0);
  REQUIRE(run(dir, "distill --model at.ckpt --src data/train.src --out dist.txt").code == 0);
  const auto dm = manifest(dir / "dist.txt.manifest.json");
  CHECK(dm["results"]["lines"] == 200);
  REQUIRE(run(dir, std::string("train --data-dir data --mode hrt --k 2 --steps 0 --distilled dist.txt --init at.ckpt ") +
                       kSmallModel + " --out hrt.ckpt")
              .code == 0);
  CHECK(slurp(dir / "at.ckpt") == slurp(dir / "hrt.ckpt"));
  CHECK(manifest(dir / "hrt.ckpt.manifest.json")["results"]["unchanged_copy"] == true);

  // p_raw < 1 without distilled targets is a usage error.
  CHECK(run(dir, std::string("train --data-dir data --steps 1 ") + kSmallModel + " --out x.ckpt").code == 1);
}

TEST_CASE("ablation switches change the recorded config") {
  const auto dir = small_corpus("cli_ablate");
  REQUIRE(run(dir, std::string("train --data-dir data --mode at --p-raw 1 --steps 2 --eval-split none ") + kSmallModel +
                       " --out at.ckpt")
              .code == 0);
  REQUIRE(run(dir, "distill --model at.ckpt --src data/train.src --out dist.txt").code == 0);
  const std::string base =
      std::string("train --data-dir data --distilled dist.txt --init at.ckpt --steps 2 ") + kSmallModel;
  nlohmann::json seen = nlohmann::json::array();
  for (const char* a : {"none", "no-ft", "no-md", "no-cl"}) {
    const auto r = run(dir, base + " --ablation " + a + " --out " + a + ".ckpt");
    REQUIRE(r.code == 0);
    const auto m = manifest(dir / (std::string(a) + ".ckpt.manifest.json"));
    CHECK(m["results"]["eval"]["bleu"].is_number());
    const nlohmann::json key{m["results"]["train"], m["results"]["init"]};
    for (const auto& s : seen) CHECK(s != key);
    seen.push_back(key);
  }
  CHECK(manifest(dir / "no-ft.ckpt.manifest.json")["results"]["init"] == "random");
  CHECK(manifest(dir / "no-md.ckpt.manifest.json")["results"]["train"]["p_raw"] == 0.0);
  CHECK(manifest(dir / "no-cl.ckpt.manifest.json")["results"]["train"]["curriculum"] == false);
  CHECK(run(dir, base + " --ablation no-xy --out y.ckpt").code == 1);
}

TEST_CASE("translate, bench, maskexp and inspect write machine-readable outputs") {
  const auto dir = small_corpus("cli_pipeline");
  REQUIRE(run(dir, std::string("train --data-dir data --mode at --p-raw 1 --steps 3 --eval-split none ") +
                       kSmallModel + " --out at.ckpt")
              .code == 0);
  REQUIRE(run(dir, std::string("train --data-dir data --mode cmlm --p-raw 1 --steps 3 --eval-split none ") +
                       kSmallModel + " --out cmlm.ckpt")
              .code == 0);
  auto r = run(dir, "translate --model at.ckpt --src data/test.src --ref data/test.tgt --system hrt --out h.txt");
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("BLEU ", 0) == 0);
  CHECK(manifest(dir / "h.txt.manifest.json")["results"]["sentences"] == 20);
  CHECK(run(dir, "translate --model at.ckpt --src data/test.src --system hrt --bat 1 --bnat 2 --out z.txt").code == 1);

  r = run(dir, "bench --at at.ckpt --hrt at.ckpt --cmlm cmlm.ckpt --src data/test.src --runs 1 --batch-sizes 1 4 "
               "--efficiency-lengths 1 4 --out-dir bench");
  REQUIRE(r.code == 0);
  const auto report = manifest(dir / "bench/report.json");
  CHECK(report["cells"].size() == 6);
  CHECK(report["efficiency"].size() == 4);
  CHECK(r.out.find("avg alpha") != std::string::npos);
  CHECK(run(dir, "bench --at at.ckpt --src data/test.src --thread-profiles 2 --out-dir b2").code == 1);

  r = run(dir, "maskexp --cmlm cmlm.ckpt --at at.ckpt --src data/test.src --ref data/test.tgt --rates 0.5 1.0 "
               "--out-dir mask");
  REQUIRE(r.code == 0);
  const auto m = manifest(dir / "mask/manifest.json");
  CHECK(m["results"]["random_seeds"] == nlohmann::json::array({1, 2, 3}));
  CHECK(m["results"]["by_rate"].contains("0.50"));
  CHECK(fs::exists(dir / "mask/curve.csv"));

  r = run(dir, "inspect-checkpoint --model cmlm.ckpt --out info.json");
  REQUIRE(r.code == 0);
  CHECK(manifest(dir / "info.json")["config"]["length_head"] == true);
}
