#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "spanparse/bench.hpp"

using namespace spanparse;
using testutil::tiny_grammar;
using testutil::tmp_path;

TEST_SUITE("bench") {

TEST_CASE("benchmark rows are internally consistent") {
  Corpus c = generate_synthetic(tiny_grammar(51), 12);
  ModelConfig mc = testutil::small_model_config();
  Model nar = make_model(mc, Regime::NAR, Form::Span, build_vocab(c));

  const BenchRow row = bench_model(nar, c, 3, 2);
  CHECK(row.n == 12);
  CHECK(row.p50_ms > 0.0);
  CHECK(row.p99_ms >= row.p50_ms);
  CHECK(row.mean_ms > 0.0);
  CHECK(row.total_s > 0.0);
  CHECK(row.examples_per_sec > 0.0);
  CHECK(row.peak_bytes > 0);
  CHECK(row.label.find("nar") != std::string::npos);
}

TEST_CASE("one-shot decoding allocates less than beam search, and faster") {
  Corpus c = generate_synthetic(tiny_grammar(53), 10);
  ModelConfig mc = testutil::small_model_config();
  Model nar = make_model(mc, Regime::NAR, Form::Span, build_vocab(c));
  Model ar = make_model(mc, Regime::AR, Form::Span, build_vocab(c));

  const BenchRow fast = bench_model(nar, c, 5, 2);
  const BenchRow slow = bench_model(ar, c, 5, 2);
  CHECK(fast.peak_bytes < slow.peak_bytes);
  CHECK(fast.p99_ms < slow.p99_ms);
}

TEST_CASE("report table and record file") {
  Corpus c = generate_synthetic(tiny_grammar(55), 6);
  ModelConfig mc = testutil::small_model_config();
  Model m = make_model(mc, Regime::NAR, Form::Span, build_vocab(c));

  BenchReport report;
  report.hardware = hardware_summary();
  report.threads = 1;
  report.rows.push_back(bench_model(m, c, 2, 1));
  CHECK(!report.hardware.empty());

  std::ostringstream table;
  print_table(table, report);
  CHECK(table.str().find("p99") != std::string::npos);
  CHECK(table.str().find("nar") != std::string::npos);

  const std::string path = tmp_path("bench.jsonl");
  write_report_jsonl(report, path);
  std::ifstream in(path);
  std::string line;
  size_t metas = 0, rows = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.at("record") == "meta") {
      ++metas;
      CHECK(j.at("threads") == 1);
    } else {
      ++rows;
      CHECK(j.at("n") == 6);
      CHECK(j.at("p99_ms").get<double>() >= j.at("p50_ms").get<double>());
    }
  }
  CHECK(metas == 1);
  CHECK(rows == 1);
}

TEST_CASE("thread cap") {
  CHECK_THROWS_AS(apply_thread_cap(0), Error);
  apply_thread_cap(1);  // single-core target: must be accepted
}

}  // TEST_SUITE
