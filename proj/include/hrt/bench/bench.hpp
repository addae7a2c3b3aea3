#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hrt/decode/decoder.hpp"

namespace hrt::bench {

using corpus::TokenSeq;

struct SystemSpec {
  std::string name;
  decode::System system = decode::System::AT;
  decode::DecodeConfig config;
};

struct BenchConfig {
  std::vector<SystemSpec> systems;
  std::vector<std::size_t> batch_sizes{1, 8, 16, 32};
  std::vector<int> thread_profiles{1};
  std::size_t runs = 5;
  // Cells whose sample standard deviation exceeds this fraction of the mean
  // are flagged unstable.
  double unstable_threshold = 0.2;
  // System every alpha is measured against.
  std::string reference = "AT";

  void validate() const;
  nlohmann::ordered_json to_json() const;
};

// AT, CMLM_10 and HRT (k = 2) with the default beams.
std::vector<SystemSpec> default_systems();

// Checkpoint used by each decoder kind.
struct BenchModels {
  const model::Transformer<float>* at = nullptr;
  const model::Transformer<float>* hrt = nullptr;
  const model::Transformer<float>* cmlm = nullptr;

  const model::Transformer<float>& for_system(decode::System s) const;
};

struct CallCheck {
  std::size_t sentences = 0;
  // Sentences whose counter differs from the closed form (AT: N+1,
  // HRT: m+2, CMLM: at most I).
  std::size_t violations = 0;
  // Sentences stopped by the step cap; their closed form does not apply.
  std::size_t forced = 0;
  double mean_calls = 0.0;

  bool exact() const { return violations == 0; }
};

struct Cell {
  std::string system;
  std::size_t batch = 1;
  int threads = 1;
  std::vector<double> samples_ms;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double stddev_ms = 0.0;
  bool unstable = false;
  double alpha = 0.0;
  // Mean output length.
  double mean_length = 0.0;
  CallCheck calls;
};

struct EfficiencyCell {
  std::size_t batch = 1;
  std::size_t length = 1;
  int threads = 1;
  double time_1_ms = 0.0;
  double time_n_ms = 0.0;
  // time_1 / time_n.
  double efficiency = 1.0;
};

struct BenchReport {
  nlohmann::ordered_json config;
  std::size_t sentences = 0;
  std::vector<Cell> cells;
  std::vector<EfficiencyCell> efficiency;

  const Cell& cell(const std::string& system, std::size_t batch, int threads) const;
  nlohmann::ordered_json to_json() const;
  // Time and alpha per batch size and the average alpha, one block per
  // thread profile.
  std::string table() const;
};

// Counter check for one system's translations.
CallCheck check_calls(decode::System system, const decode::DecodeConfig& config,
                      std::span<const decode::Translation> translations);

BenchReport run_bench(const BenchConfig& config, const BenchModels& models, std::span<const TokenSeq> sources);

// Times one unmasked-mode decoder forward over `batch` rows of length 1 and
// of each length in `lengths`; median of `runs` after a warmup.
std::vector<EfficiencyCell> measure_parallel_efficiency(const model::Transformer<float>& model,
                                                        std::span<const std::size_t> batches,
                                                        std::span<const std::size_t> lengths, int threads,
                                                        std::size_t runs = 5);

}  // namespace hrt::bench
