#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"

using testutil::slurp;
using testutil::tmp_path;

namespace {

// Runs the installed binary; returns the shell exit code.
int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPANPARSE_CLI_PATH) + " " + args +
                          " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

int run_cli_capture(const std::string& args, const std::string& out_path) {
  const std::string cmd = std::string(SPANPARSE_CLI_PATH) + " " + args + " >" +
                          out_path + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("exit codes: success, data error, usage error") {
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("gen-data --help") == 0);
  CHECK(run_cli("") == 2);                        // a subcommand is required
  CHECK(run_cli("no-such-command") == 2);
  CHECK(run_cli("stats --no-such-flag x") == 2);
  CHECK(run_cli("stats") == 2);                   // missing required --in
  CHECK(run_cli("stats --in /nonexistent.tsv") == 1);
  CHECK(run_cli("spis --in /nonexistent.tsv --out /tmp/x.tsv") == 1);
}

TEST_CASE("gen-data is deterministic per seed") {
  const std::string a = tmp_path("gen-a.tsv");
  const std::string b = tmp_path("gen-b.tsv");
  const std::string c = tmp_path("gen-c.tsv");
  REQUIRE(run_cli("gen-data --out " + a + " --n 40 --seed 5") == 0);
  REQUIRE(run_cli("gen-data --out " + b + " --n 40 --seed 5") == 0);
  REQUIRE(run_cli("gen-data --out " + c + " --n 40 --seed 6") == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("transform round trips every form back to canonical") {
  const std::string base = tmp_path("orig.tsv");
  REQUIRE(run_cli("gen-data --out " + base + " --n 30 --seed 8") == 0);
  for (const std::string form : {"span", "index"}) {
    const std::string enc = tmp_path("enc-" + form + ".tsv");
    const std::string back = tmp_path("back-" + form + ".tsv");
    REQUIRE(run_cli("transform --in " + base + " --form " + form + " --out " +
                    enc) == 0);
    REQUIRE(run_cli("transform --in " + enc + " --in-form " + form +
                    " --form canonical --out " + back) == 0);
    CHECK(slurp(base) == slurp(back));
  }
}

TEST_CASE("spis runs are byte identical for one seed") {
  const std::string base = tmp_path("spis-in.tsv");
  REQUIRE(run_cli("gen-data --out " + base + " --n 80 --seed 2") == 0);
  const std::string a = tmp_path("spis-a.tsv");
  const std::string b = tmp_path("spis-b.tsv");
  REQUIRE(run_cli("spis --in " + base + " --k 10 --seed 7 --out " + a) == 0);
  REQUIRE(run_cli("spis --in " + base + " --k 10 --seed 7 --out " + b) == 0);
  CHECK(slurp(a) == slurp(b));
}

TEST_CASE("config files provide defaults that flags override") {
  const std::string cfg = tmp_path("gen.cfg");
  std::ofstream(cfg) << "n=7\nseed=3\n";
  const std::string a = tmp_path("cfg-a.tsv");
  const std::string b = tmp_path("cfg-b.tsv");

  REQUIRE(run_cli("gen-data --out " + a + " --config " + cfg) == 0);
  std::ifstream in(a);
  size_t lines = 0;
  std::string line;
  while (std::getline(in, line)) ++lines;
  CHECK(lines == 7);

  REQUIRE(run_cli("gen-data --out " + b + " --config " + cfg + " --n 9") == 0);
  std::ifstream in2(b);
  lines = 0;
  while (std::getline(in2, line)) ++lines;
  CHECK(lines == 9);
}

TEST_CASE("stats prints one row per form") {
  const std::string base = tmp_path("stats-in.tsv");
  REQUIRE(run_cli("gen-data --out " + base + " --n 25 --seed 4") == 0);
  const std::string out = tmp_path("stats.out");
  REQUIRE(run_cli_capture("stats --in " + base, out) == 0);
  const std::string text = slurp(out);
  CHECK(text.find("canonical") != std::string::npos);
  CHECK(text.find("index") != std::string::npos);
  CHECK(text.find("span") != std::string::npos);
}

TEST_CASE("train, predict and eval drive the library end to end") {
  const std::string data = tmp_path("e2e.tsv");
  REQUIRE(run_cli("gen-data --out " + data + " --n 30 --seed 12") == 0);
  const std::string ckpt = tmp_path("e2e.ckpt");
  // 30 examples at batch 5 is 6 steps per epoch; stretch the plateau patience
  // so the lr survives until the model converges
  REQUIRE(run_cli("train --train " + data + " --out " + ckpt +
                  " --form span --seed 1 --d-model 32 --n-heads 2 --d-ff 64"
                  " --epochs 200 --lr 2e-3 --batch-size 5"
                  " --plateau-patience 50 --stop-at-dev-em 100") == 0);
  CHECK(std::ifstream(ckpt + ".epochs.jsonl").good());
  CHECK(std::ifstream(ckpt + ".summary.json").good());

  const std::string preds = tmp_path("e2e-preds.jsonl");
  REQUIRE(run_cli("predict --model " + ckpt + " --in " + data + " --k 2" +
                  " --out " + preds) == 0);

  const std::string eval_out = tmp_path("e2e-eval.out");
  REQUIRE(run_cli_capture(
              "eval --pred " + preds + " --gold " + data, eval_out) == 0);
  CHECK(slurp(eval_out).find("\"em\":100.0") != std::string::npos);

  REQUIRE(run_cli_capture("eval --model " + ckpt + " --in " + data + " --k 1",
                          eval_out) == 0);
  CHECK(slurp(eval_out).find("\"em\":100.0") != std::string::npos);
}

}  // TEST_SUITE
