#include "spanparse/bench.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "spanparse/inference.hpp"

namespace spanparse {

namespace {

using Clock = std::chrono::steady_clock;

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  const auto idx = static_cast<size_t>(std::max(0.0, std::ceil(q * n) - 1.0));
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace

BenchRow bench_model(Model& m, const Corpus& corpus, int k, int warmup) {
  BenchRow row;
  {
    std::ostringstream label;
    label << to_string(m.regime) << "/" << to_string(m.form) << " k=" << k;
    row.label = label.str();
  }

  // One request in flight at a time; each timing covers tokenization,
  // the forward pass(es), and frame reconstruction.
  auto run_one = [&](const Example& ex, bool timed, std::vector<double>& ms,
                     size_t& peak) {
    const std::string raw_text = ex.utterance.text();
    memmeter::reset_peak();
    const size_t base = memmeter::current();
    const auto t0 = Clock::now();
    const Utterance u = whitespace_tokenize(raw_text);
    const Prediction p = m.regime == Regime::NAR ? predict(m, u, k)
                                                 : ar_predict(m, u, k);
    (void)p;
    const auto t1 = Clock::now();
    if (timed) {
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      peak = std::max(peak, memmeter::peak() - base);
    }
  };

  std::vector<double> ms;
  ms.reserve(corpus.size());
  size_t peak = 0;
  const size_t w = std::min<size_t>(static_cast<size_t>(std::max(warmup, 0)),
                                    corpus.size());
  for (size_t i = 0; i < w; ++i) run_one(corpus.examples[i], false, ms, peak);

  const auto total0 = Clock::now();
  for (const auto& ex : corpus.examples) run_one(ex, true, ms, peak);
  const auto total1 = Clock::now();

  row.n = ms.size();
  row.p50_ms = percentile(ms, 0.50);
  row.p99_ms = percentile(ms, 0.99);
  row.mean_ms =
      ms.empty() ? 0
                 : std::accumulate(ms.begin(), ms.end(), 0.0) /
                       static_cast<double>(ms.size());
  row.total_s = std::chrono::duration<double>(total1 - total0).count();
  row.examples_per_sec =
      row.total_s > 0 ? static_cast<double>(row.n) / row.total_s : 0;
  row.peak_bytes = peak;
  return row;
}

std::string hardware_summary() {
  std::string cpu = "unknown cpu";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    const auto pos = line.find("model name");
    if (pos == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        cpu = line.substr(colon + 1);
        const auto first = cpu.find_first_not_of(' ');
        if (first != std::string::npos) cpu = cpu.substr(first);
      }
      break;
    }
  }
  std::ostringstream out;
  out << cpu << ", " << std::thread::hardware_concurrency()
      << " hw threads";
  return out.str();
}

void apply_thread_cap(int threads) {
  if (threads < 1)
    fail(ErrorKind::ConfigError, "thread cap must be >= 1");
  Eigen::setNbThreads(threads);
}

void print_table(std::ostream& out, const BenchReport& report) {
  out << "hardware: " << report.hardware << "\n";
  out << "threads:  " << report.threads << "\n";
  out << std::left << std::setw(28) << "config" << std::right << std::setw(8)
      << "n" << std::setw(12) << "p50 ms" << std::setw(12) << "p99 ms"
      << std::setw(12) << "mean ms" << std::setw(12) << "ex/s" << std::setw(14)
      << "peak MiB" << "\n";
  for (const auto& r : report.rows) {
    out << std::left << std::setw(28) << r.label << std::right << std::setw(8)
        << r.n << std::fixed << std::setprecision(3) << std::setw(12)
        << r.p50_ms << std::setw(12) << r.p99_ms << std::setw(12) << r.mean_ms
        << std::setprecision(1) << std::setw(12) << r.examples_per_sec
        << std::setprecision(3) << std::setw(14)
        << static_cast<double>(r.peak_bytes) / (1024.0 * 1024.0) << "\n";
    out.unsetf(std::ios::fixed);
  }
}

void write_report_jsonl(const BenchReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path);
  {
    nlohmann::json meta;
    meta["record"] = "meta";
    meta["hardware"] = report.hardware;
    meta["threads"] = report.threads;
    out << meta.dump() << '\n';
  }
  for (const auto& r : report.rows) {
    nlohmann::json j;
    j["record"] = "row";
    j["label"] = r.label;
    j["n"] = r.n;
    j["p50_ms"] = r.p50_ms;
    j["p99_ms"] = r.p99_ms;
    j["mean_ms"] = r.mean_ms;
    j["total_s"] = r.total_s;
    j["examples_per_sec"] = r.examples_per_sec;
    j["peak_bytes"] = r.peak_bytes;
    out << j.dump() << '\n';
  }
  if (!out) fail(ErrorKind::IoError, "write failed for " + path);
}

}  // namespace spanparse
