#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "hrt/common/rng.hpp"
#include "hrt/model/checkpoint.hpp"
#include "hrt/model/transformer.hpp"
#include "hrt/tasks/tasks.hpp"

namespace hrt::train {

using corpus::TokenSeq;

enum class TrainMode { AT_ONLY, CMLM_ONLY, HRT };
std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);

struct TrainConfig {
  TrainMode mode = TrainMode::HRT;
  // 0 runs no update (the initial parameters are returned unchanged).
  std::uint64_t total_steps = 10000;
  double lambda = 1.0;
  double p_raw = 0.5;
  std::size_t batch_size = 64;
  double peak_lr = 1e-3;
  std::uint64_t warmup_steps = 1000;
  double label_smoothing = 0.1;
  std::uint64_t seed = 1;
  int k = 2;
  // Ablation switch: false fixes p_k = 1 for the whole run.
  bool curriculum = true;
  tasks::SkipCmlmLayout layout = tasks::SkipCmlmLayout::INFERENCE;
  std::uint64_t log_every = 100;
  // 0 disables intermediate checkpoints.
  std::uint64_t checkpoint_every = 0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainPair {
  TokenSeq src;
  TokenSeq raw;
  std::optional<TokenSeq> distilled;
};

// Raw target with probability p_raw, distilled otherwise.
TokenSeq sample_target(const TrainPair& pair, double p_raw, Rng& rng);

// Throws std::invalid_argument if a distilled target is needed but missing.
void check_pairs(std::span<const TrainPair> pairs, double p_raw);

struct TaskLoss {
  std::size_t tokens = 0;
  double loss = 0.0;

  double mean() const { return tokens == 0 ? 0.0 : loss / static_cast<double>(tokens); }
};

struct LossReport {
  std::uint64_t step = 0;
  double p_k = 0.0;
  double lr = 0.0;
  // Indexed by tasks::Task.
  std::array<TaskLoss, 4> task{};
  // Target-length classification (CMLM_ONLY).
  TaskLoss length;
  // Sum of all losses over all supervised tokens.
  double loss = 0.0;
  std::size_t tokens = 0;

  nlohmann::ordered_json to_json() const;
};

// Adam with bias-corrected moments kept in double precision.
template <typename T>
class Adam {
 public:
  Adam(std::vector<tensor::Tensor<T>> params, double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9);

  // Applies one update with learning rate lr, scaling gradients by grad_scale,
  // then clears the gradients.
  void step(double lr, double grad_scale = 1.0);
  std::uint64_t updates() const { return t_; }

 private:
  std::vector<tensor::Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// peak * min(s / warmup, sqrt(warmup / s)) with s = step + 1.
double learning_rate(const TrainConfig& config, std::uint64_t step);

template <typename T>
class Trainer {
 public:
  Trainer(model::Transformer<T>& model, TrainConfig config);

  // Builds every sub-batch for `batch`, sums the token losses and performs
  // exactly one optimizer update. Throws std::runtime_error on a non-finite
  // loss and std::invalid_argument on an empty batch.
  LossReport train_step(std::span<const TrainPair> batch, const tasks::CurriculumState& state);

  // Curriculum state used for the next step of run().
  tasks::CurriculumState curriculum(std::uint64_t step) const;

  using StepHook = std::function<void(const LossReport&)>;
  // Runs the remaining steps up to config.total_steps over shuffled epochs of
  // `data`.
  void run(std::span<const TrainPair> data, const StepHook& hook = {});

  std::uint64_t step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  std::uint64_t updates() const { return optimizer_.updates(); }

 private:
  model::Transformer<T>& model_;
  TrainConfig config_;
  Adam<T> optimizer_;
  Rng rng_;
  std::uint64_t step_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct TrainRun {
  model::Checkpoint checkpoint;
  std::vector<LossReport> reports;
  double seconds = 0.0;
};

struct RunOptions {
  // Fine-tune from these parameters; random init (seeded) when absent.
  const model::Checkpoint* init = nullptr;
  std::string init_path;
  std::ostream* log = nullptr;
  // Directory for periodic checkpoints (config.checkpoint_every).
  std::string checkpoint_dir;
  nlohmann::ordered_json provenance = nlohmann::ordered_json::object();
};

// Builds the model (length head only in CMLM_ONLY mode), trains it and
// returns the final checkpoint. Reports are kept every log_every steps plus
// the last step.
TrainRun run_training(const TrainConfig& config, model::ModelConfig model_config, std::span<const TrainPair> data,
                      const RunOptions& options = {});

std::string format_log_line(const LossReport& report, double tokens_per_second);

}  // namespace hrt::train
