#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "spanparse/model.hpp"

namespace spanparse {

struct BenchRow {
  std::string label;
  size_t n = 0;          // timed examples
  double p50_ms = 0;     // per-example end-to-end decode latency
  double p99_ms = 0;
  double mean_ms = 0;
  double total_s = 0;
  double examples_per_sec = 0;
  size_t peak_bytes = 0;  // high-water activation bytes, worst single decode
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::string hardware;
  int threads = 1;
};

// Times one decode per example in corpus order: tokenization, encoder and
// decoder passes, and frame reconstruction all inside the timed region. One
// example is in flight at a time; the first min(warmup, n) examples run
// untimed beforehand.
BenchRow bench_model(Model& m, const Corpus& corpus, int k, int warmup);

std::string hardware_summary();
void apply_thread_cap(int threads);

void print_table(std::ostream& out, const BenchReport& report);
void write_report_jsonl(const BenchReport& report, const std::string& path);

}  // namespace spanparse
