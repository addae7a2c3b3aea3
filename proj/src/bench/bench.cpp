#include "hrt/bench/bench.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "hrt/common/parallel.hpp"

namespace hrt::bench {

using decode::System;

void BenchConfig::validate() const {
  if (systems.empty()) throw std::invalid_argument("bench needs at least one system");
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  if (batch_sizes.empty()) throw std::invalid_argument("bench needs at least one batch size");
  for (auto b : batch_sizes) {
    if (b == 0) throw std::invalid_argument("batch sizes must be positive");
  }
  if (thread_profiles.empty()) throw std::invalid_argument("bench needs at least one thread profile");
  for (int t : thread_profiles) {
    if (t < 1) throw std::invalid_argument("thread counts must be positive");
  }
  bool has_reference = false;
  for (const auto& s : systems) {
    s.config.validate();
    has_reference = has_reference || s.name == reference;
  }
  if (!has_reference) throw std::invalid_argument("reference system '" + reference + "' is not in the system list");
}

nlohmann::ordered_json BenchConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& s : systems) {
    j["systems"].push_back({{"name", s.name},
                            {"decoder", decode::to_string(s.system)},
                            {"k", s.config.k},
                            {"b_at", s.config.b_at},
                            {"b_nat", s.config.b_nat},
                            {"beam", s.config.beam},
                            {"iterations", s.config.iterations},
                            {"length_beam", s.config.length_beam}});
  }
  j["batch_sizes"] = batch_sizes;
  j["thread_profiles"] = thread_profiles;
  j["runs"] = runs;
  j["unstable_threshold"] = unstable_threshold;
  j["reference"] = reference;
  return j;
}

std::vector<SystemSpec> default_systems() {
  decode::DecodeConfig at;
  at.beam = 5;
  decode::DecodeConfig cmlm;
  cmlm.iterations = 10;
  decode::DecodeConfig hrt;
  hrt.k = 2;
  hrt.b_at = 5;
  hrt.b_nat = 1;
  return {{"AT", System::AT, at}, {"CMLM10", System::CMLM, cmlm}, {"HRT", System::HRT, hrt}};
}

const model::Transformer<float>& BenchModels::for_system(System s) const {
  const model::Transformer<float>* m = s == System::AT ? at : s == System::HRT ? hrt : cmlm;
  if (m == nullptr) throw std::invalid_argument("no model loaded for decoder " + decode::to_string(s));
  return *m;
}

const Cell& BenchReport::cell(const std::string& system, std::size_t batch, int threads) const {
  for (const auto& c : cells) {
    if (c.system == system && c.batch == batch && c.threads == threads) return c;
  }
  throw std::out_of_range(fmt::format("no bench cell {} B={} threads={}", system, batch, threads));
}

nlohmann::ordered_json BenchReport::to_json() const {
  nlohmann::ordered_json j;
  j["config"] = config;
  j["sentences"] = sentences;
  for (const auto& c : cells) {
    j["cells"].push_back({{"system", c.system},
                          {"batch", c.batch},
                          {"threads", c.threads},
                          {"samples_ms", c.samples_ms},
                          {"mean_ms", c.mean_ms},
                          {"median_ms", c.median_ms},
                          {"stddev_ms", c.stddev_ms},
                          {"unstable", c.unstable},
                          {"alpha", c.alpha},
                          {"mean_length", c.mean_length},
                          {"calls",
                           {{"sentences", c.calls.sentences},
                            {"mean", c.calls.mean_calls},
                            {"violations", c.calls.violations},
                            {"forced", c.calls.forced},
                            {"exact", c.calls.exact()}}}});
  }
  for (const auto& e : efficiency) {
    j["efficiency"].push_back({{"batch", e.batch},
                               {"length", e.length},
                               {"threads", e.threads},
                               {"time_1_ms", e.time_1_ms},
                               {"time_n_ms", e.time_n_ms},
                               {"efficiency", e.efficiency}});
  }
  return j;
}

std::string BenchReport::table() const {
  std::vector<std::string> systems;
  std::vector<std::size_t> batches;
  std::vector<int> profiles;
  for (const auto& c : cells) {
    if (std::find(systems.begin(), systems.end(), c.system) == systems.end()) systems.push_back(c.system);
    if (std::find(batches.begin(), batches.end(), c.batch) == batches.end()) batches.push_back(c.batch);
    if (std::find(profiles.begin(), profiles.end(), c.threads) == profiles.end()) profiles.push_back(c.threads);
  }
  std::string out;
  for (int t : profiles) {
    out += fmt::format("threads={}\n{:<10}", t, "system");
    for (auto b : batches) out += fmt::format(" | B={:<3} {:>10} {:>6}", b, "time(ms)", "alpha");
    out += " | avg alpha\n";
    for (const auto& s : systems) {
      out += fmt::format("{:<10}", s);
      double sum = 0.0;
      for (auto b : batches) {
        const auto& c = cell(s, b, t);
        sum += c.alpha;
        out += fmt::format(" | {:<5} {:>10.1f} {:>6.2f}{}", "", c.mean_ms, c.alpha, c.unstable ? "*" : "");
      }
      out += fmt::format(" | {:.2f}\n", sum / static_cast<double>(batches.size()));
    }
    out += "\n";
  }
  if (std::any_of(cells.begin(), cells.end(), [](const Cell& c) { return c.unstable; })) {
    out += "* unstable cell (run-to-run spread above threshold)\n";
  }
  return out;
}

CallCheck check_calls(System system, const decode::DecodeConfig& config,
                      std::span<const decode::Translation> translations) {
  CallCheck check;
  double total = 0.0;
  for (const auto& t : translations) {
    ++check.sentences;
    total += static_cast<double>(t.calls.decoder_calls);
    if (system != System::CMLM && t.best.forced) {
      ++check.forced;
      continue;
    }
    bool ok = true;
    switch (system) {
      case System::AT:
        ok = t.calls.decoder_calls == t.output.size() + 1;
        break;
      case System::HRT:
        ok = t.calls.decoder_calls == t.length + 2;
        break;
      case System::CMLM:
        ok = t.calls.decoder_calls <= config.iterations;
        break;
    }
    if (!ok) ++check.violations;
  }
  if (check.sentences > 0) check.mean_calls = total / static_cast<double>(check.sentences);
  return check;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

class ThreadBudget {
 public:
  explicit ThreadBudget(int n) : previous_(num_threads()) { set_num_threads(n); }
  ~ThreadBudget() { set_num_threads(previous_); }
  ThreadBudget(const ThreadBudget&) = delete;
  ThreadBudget& operator=(const ThreadBudget&) = delete;

 private:
  int previous_;
};

std::vector<decode::Translation> translate_all(const SystemSpec& spec, const model::Transformer<float>& model,
                                               std::span<const TokenSeq> sources, std::size_t batch) {
  std::vector<decode::Translation> out;
  out.reserve(sources.size());
  for (std::size_t lo = 0; lo < sources.size(); lo += batch) {
    const std::size_t n = std::min(batch, sources.size() - lo);
    auto part = decode::translate_batch(spec.system, model, sources.subspan(lo, n), spec.config);
    for (auto& t : part) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

BenchReport run_bench(const BenchConfig& config, const BenchModels& models, std::span<const TokenSeq> sources) {
  config.validate();
  if (sources.empty()) throw std::invalid_argument("bench corpus is empty");
  BenchReport report;
  report.config = config.to_json();
  report.sentences = sources.size();
  using Clock = std::chrono::steady_clock;
  for (int threads : config.thread_profiles) {
    ThreadBudget budget(threads);
    // cells[system][batch]; timed runs rotate across systems so host drift
    // spreads evenly instead of landing on one decoder.
    std::vector<std::vector<Cell>> cells(config.systems.size(), std::vector<Cell>(config.batch_sizes.size()));
    for (std::size_t bi = 0; bi < config.batch_sizes.size(); ++bi) {
      const auto batch = config.batch_sizes[bi];
      for (std::size_t si = 0; si < config.systems.size(); ++si) {
        const auto& spec = config.systems[si];
        Cell& cell = cells[si][bi];
        cell.system = spec.name;
        cell.batch = batch;
        cell.threads = threads;
        // Warmup run; its translations feed the counters and lengths.
        const auto warm = translate_all(spec, models.for_system(spec.system), sources, batch);
        cell.calls = check_calls(spec.system, spec.config, warm);
        double length = 0.0;
        for (const auto& t : warm) length += static_cast<double>(t.output.size());
        cell.mean_length = length / static_cast<double>(warm.size());
      }
      for (std::size_t r = 0; r < config.runs; ++r) {
        for (std::size_t si = 0; si < config.systems.size(); ++si) {
          const auto& spec = config.systems[si];
          const auto start = Clock::now();
          const auto out = translate_all(spec, models.for_system(spec.system), sources, batch);
          cells[si][bi].samples_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
        }
      }
    }
    for (auto& row : cells) {
      for (auto& cell : row) {
        const double n = static_cast<double>(cell.samples_ms.size());
        cell.mean_ms = std::accumulate(cell.samples_ms.begin(), cell.samples_ms.end(), 0.0) / n;
        cell.median_ms = median(cell.samples_ms);
        double var = 0.0;
        for (double v : cell.samples_ms) var += (v - cell.mean_ms) * (v - cell.mean_ms);
        cell.stddev_ms = cell.samples_ms.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
        cell.unstable = cell.stddev_ms > config.unstable_threshold * cell.mean_ms;
        report.cells.push_back(std::move(cell));
      }
    }
  }
  for (auto& c : report.cells) {
    const auto& ref = report.cell(config.reference, c.batch, c.threads);
    c.alpha = c.system == config.reference ? 1.0 : ref.mean_ms / c.mean_ms;
  }
  return report;
}

std::vector<EfficiencyCell> measure_parallel_efficiency(const model::Transformer<float>& model,
                                                        std::span<const std::size_t> batches,
                                                        std::span<const std::size_t> lengths, int threads,
                                                        std::size_t runs) {
  if (runs < 1) throw std::invalid_argument("runs must be >= 1");
  ThreadBudget budget(threads);
  using Clock = std::chrono::steady_clock;
  const std::size_t src_len = 10;
  const std::size_t content = model.config().vocab_size - corpus::kReserved;
  auto time_forward = [&](std::size_t batch, std::size_t length) {
    std::vector<TokenSeq> sources(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < src_len; ++i) {
        sources[b].push_back(static_cast<std::int32_t>(corpus::kReserved + (b + i) % content));
      }
    }
    const auto memory = model.encode(sources);
    model::DecoderBatch input;
    input.mode = model::DecoderMode::FULL;
    TokenSeq ids(length, corpus::kMask);
    std::vector<std::int32_t> positions(length);
    std::iota(positions.begin(), positions.end(), 1);
    for (std::size_t b = 0; b < batch; ++b) input.add(ids, positions, b);
    model.decode(input, memory);
    std::vector<double> samples;
    for (std::size_t r = 0; r < runs; ++r) {
      const auto start = Clock::now();
      model.decode(input, memory);
      samples.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    }
    return median(samples);
  };
  std::vector<EfficiencyCell> out;
  for (auto b : batches) {
    const double t1 = time_forward(b, 1);
    for (auto n : lengths) {
      EfficiencyCell e;
      e.batch = b;
      e.length = n;
      e.threads = threads;
      e.time_1_ms = t1;
      e.time_n_ms = n == 1 ? t1 : time_forward(b, n);
      e.efficiency = e.time_1_ms / e.time_n_ms;
      out.push_back(e);
    }
  }
  return out;
}

}  // namespace hrt::bench
