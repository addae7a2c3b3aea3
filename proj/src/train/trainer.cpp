#include "hrt/train/trainer.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "hrt/tensor/ops.hpp"

namespace hrt::train {

using model::DecoderBatch;
using model::DecoderMode;
using tasks::Task;
using tasks::TrainingSample;

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::AT_ONLY:
      return "AT_ONLY";
    case TrainMode::CMLM_ONLY:
      return "CMLM_ONLY";
    case TrainMode::HRT:
      return "HRT";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& name) {
  std::string up;
  for (char c : name) up.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "AT_ONLY" || up == "AT") return TrainMode::AT_ONLY;
  if (up == "CMLM_ONLY" || up == "CMLM") return TrainMode::CMLM_ONLY;
  if (up == "HRT") return TrainMode::HRT;
  throw std::invalid_argument("unknown training mode '" + name + "' (expected AT_ONLY, CMLM_ONLY or HRT)");
}

void TrainConfig::validate() const {
  if (!(p_raw >= 0.0 && p_raw <= 1.0)) throw std::invalid_argument("p_raw must lie in [0, 1]");
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(peak_lr > 0.0)) throw std::invalid_argument("peak learning rate must be positive");
  if (warmup_steps < 1) throw std::invalid_argument("warmup steps must be >= 1");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw std::invalid_argument("label smoothing must lie in [0, 1)");
  if (k < 1 || k > corpus::kMaxChunk) throw std::invalid_argument(fmt::format("chunk size {} outside 1..4", k));
  if (log_every < 1) throw std::invalid_argument("log interval must be >= 1");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["total_steps"] = total_steps;
  j["lambda"] = lambda;
  j["p_raw"] = p_raw;
  j["batch_size"] = batch_size;
  j["peak_lr"] = peak_lr;
  j["warmup_steps"] = warmup_steps;
  j["label_smoothing"] = label_smoothing;
  j["seed"] = seed;
  j["k"] = k;
  j["curriculum"] = curriculum;
  j["layout"] = tasks::to_string(layout);
  j["log_every"] = log_every;
  j["checkpoint_every"] = checkpoint_every;
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw std::invalid_argument("training config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto& key = it.key();
    const auto& v = it.value();
    if (key == "mode") c.mode = parse_train_mode(v.get<std::string>());
    else if (key == "total_steps") c.total_steps = v.get<std::uint64_t>();
    else if (key == "lambda") c.lambda = v.get<double>();
    else if (key == "p_raw") c.p_raw = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (key == "peak_lr") c.peak_lr = v.get<double>();
    else if (key == "warmup_steps") c.warmup_steps = v.get<std::uint64_t>();
    else if (key == "label_smoothing") c.label_smoothing = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "k") c.k = v.get<int>();
    else if (key == "curriculum") c.curriculum = v.get<bool>();
    else if (key == "layout") c.layout = tasks::parse_skip_cmlm_layout(v.get<std::string>());
    else if (key == "log_every") c.log_every = v.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::uint64_t>();
    else throw std::invalid_argument("unknown training config key '" + key + "'");
  }
  c.validate();
  return c;
}

TokenSeq sample_target(const TrainPair& pair, double p_raw, Rng& rng) {
  if (p_raw >= 1.0) return pair.raw;
  if (!pair.distilled) throw std::invalid_argument("pair has no distilled target but p_raw < 1");
  return rng.bernoulli(p_raw) ? pair.raw : *pair.distilled;
}

void check_pairs(std::span<const TrainPair> pairs, double p_raw) {
  if (p_raw >= 1.0) return;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!pairs[i].distilled) {
      throw std::invalid_argument(fmt::format("pair {} has no distilled target but p_raw = {}", i, p_raw));
    }
  }
}

nlohmann::ordered_json LossReport::to_json() const {
  nlohmann::ordered_json j;
  j["step"] = step;
  j["p_k"] = p_k;
  j["lr"] = lr;
  for (int t = 0; t < 4; ++t) {
    j["tasks"][tasks::to_string(static_cast<Task>(t))] = {{"tokens", task[t].tokens}, {"loss", task[t].mean()}};
  }
  if (length.tokens > 0) j["tasks"]["LENGTH"] = {{"tokens", length.tokens}, {"loss", length.mean()}};
  j["loss"] = tokens == 0 ? 0.0 : loss / static_cast<double>(tokens);
  j["tokens"] = tokens;
  return j;
}

template <typename T>
Adam<T>::Adam(std::vector<tensor::Tensor<T>> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(double lr, double grad_scale) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * grad_scale;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double update = lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - update);
    }
    p.zero_grad();
  }
}

double learning_rate(const TrainConfig& config, std::uint64_t step) {
  const double s = static_cast<double>(step + 1);
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

template <typename T>
Trainer<T>::Trainer(model::Transformer<T>& model, TrainConfig config)
    : model_(model), config_(std::move(config)), optimizer_(model.parameters()), rng_(config_.seed) {
  config_.validate();
  if (config_.mode == TrainMode::CMLM_ONLY && !model.config().length_head) {
    throw std::invalid_argument("CMLM_ONLY training needs a model with a length head");
  }
  model_.set_requires_grad(true);
}

template <typename T>
tasks::CurriculumState Trainer<T>::curriculum(std::uint64_t step) const {
  tasks::CurriculumState s{step, config_.total_steps, config_.lambda};
  // p_k = (T/T)^lambda = 1 for every step.
  if (!config_.curriculum) s.t = config_.total_steps;
  return s;
}

namespace {

struct PackedLoss {
  DecoderBatch batch;
  std::vector<std::int32_t> targets;
  std::vector<Task> row_task;
};

void pack(PackedLoss& out, const TrainingSample& s, std::size_t memory) {
  out.batch.add(s.dec_input, s.positions, memory);
  out.targets.insert(out.targets.end(), s.targets.begin(), s.targets.end());
  out.row_task.insert(out.row_task.end(), s.targets.size(), s.task);
}

}  // namespace

template <typename T>
LossReport Trainer<T>::train_step(std::span<const TrainPair> batch, const tasks::CurriculumState& state) {
  if (batch.empty()) throw std::invalid_argument("empty training batch");
  LossReport report;
  report.step = state.t;
  report.p_k = state.p_k();
  report.lr = learning_rate(config_, step_);

  std::vector<tasks::Pair> pairs;
  pairs.reserve(batch.size());
  for (const auto& p : batch) pairs.push_back({p.src, sample_target(p, config_.p_raw, rng_)});

  std::vector<TrainingSample> samples;
  switch (config_.mode) {
    case TrainMode::AT_ONLY:
      for (const auto& p : pairs) samples.push_back(tasks::build_task_at(p.src, p.tgt));
      break;
    case TrainMode::CMLM_ONLY:
      for (const auto& p : pairs) samples.push_back(tasks::build_task_cmlm(p.src, p.tgt, rng_));
      break;
    case TrainMode::HRT: {
      auto split = tasks::split_batch(pairs, state, config_.k, rng_, config_.layout);
      samples = std::move(split.primary);
      for (auto& s : split.auxiliary) samples.push_back(std::move(s));
      break;
    }
  }

  // Each distinct source is encoded once per step.
  std::vector<corpus::TokenSeq> sources;
  std::map<corpus::TokenSeq, std::size_t> source_index;
  auto memory_of = [&](const corpus::TokenSeq& src) {
    auto [it, inserted] = source_index.emplace(src, sources.size());
    if (inserted) sources.push_back(src);
    return it->second;
  };
  for (const auto& p : pairs) memory_of(p.src);

  PackedLoss causal, full;
  causal.batch.mode = DecoderMode::CAUSAL;
  full.batch.mode = DecoderMode::FULL;
  for (const auto& s : samples) {
    if (s.supervised() == 0) continue;
    pack(tasks::is_causal(s.task) ? causal : full, s, memory_of(s.src));
  }

  const T smoothing = static_cast<T>(config_.label_smoothing);
  tensor::Graph<T> graph;
  tensor::Tensor<T> total;
  {
    tensor::GraphScope<T> scope(graph);
    Rng* dropout = model_.config().dropout > 0.0 ? &rng_ : nullptr;
    const auto memory = model_.encode(sources, dropout);
    auto accumulate = [&](PackedLoss& packed) {
      if (packed.batch.rows() == 0) return;
      std::vector<T> row_loss(packed.targets.size());
      auto loss = tensor::cross_entropy<T>(model_.decode(packed.batch, memory, dropout), packed.targets, smoothing,
                                           std::span<T>(row_loss));
      for (std::size_t r = 0; r < row_loss.size(); ++r) {
        if (packed.targets[r] == tasks::kIgnore) continue;
        auto& tl = report.task[static_cast<std::size_t>(packed.row_task[r])];
        ++tl.tokens;
        tl.loss += static_cast<double>(row_loss[r]);
      }
      total = total.defined() ? tensor::add(total, loss) : loss;
    };
    accumulate(causal);
    accumulate(full);
    if (config_.mode == TrainMode::CMLM_ONLY) {
      std::vector<std::int32_t> length_targets;
      for (const auto& src : sources) {
        // Length class of the first pair using this source.
        for (const auto& p : pairs) {
          if (p.src != src) continue;
          const long offset = static_cast<long>(p.tgt.size()) - static_cast<long>(src.size());
          length_targets.push_back(static_cast<std::int32_t>(
              std::clamp<long>(offset, -model::kLengthRange, model::kLengthRange) + model::kLengthRange));
          break;
        }
      }
      std::vector<T> row_loss(length_targets.size());
      auto loss = tensor::cross_entropy<T>(model_.length_logits(memory), length_targets, T(0), std::span<T>(row_loss));
      report.length.tokens = length_targets.size();
      for (auto v : row_loss) report.length.loss += static_cast<double>(v);
      total = total.defined() ? tensor::add(total, loss) : loss;
    }
  }
  for (const auto& t : report.task) {
    report.tokens += t.tokens;
    report.loss += t.loss;
  }
  report.tokens += report.length.tokens;
  report.loss += report.length.loss;
  if (!total.defined() || report.tokens == 0) throw std::invalid_argument("training batch has no supervised tokens");
  if (!std::isfinite(report.loss)) {
    throw std::runtime_error(fmt::format("non-finite loss at step {} (p_k {:.4f}, lr {:.3g}, {} tokens)", state.t,
                                         report.p_k, report.lr, report.tokens));
  }
  graph.backward(total);
  optimizer_.step(report.lr, 1.0 / static_cast<double>(report.tokens));
  ++step_;
  return report;
}

template <typename T>
void Trainer<T>::run(std::span<const TrainPair> data, const StepHook& hook) {
  if (data.empty()) throw std::invalid_argument("no training data");
  check_pairs(data, config_.p_raw);
  std::vector<TrainPair> batch;
  while (step_ < config_.total_steps) {
    batch.clear();
    while (batch.size() < config_.batch_size) {
      if (cursor_ >= order_.size() || order_.size() != data.size()) {
        order_.resize(data.size());
        std::iota(order_.begin(), order_.end(), 0);
        rng_.shuffle(order_.begin(), order_.end());
        cursor_ = 0;
      }
      batch.push_back(data[order_[cursor_++]]);
    }
    const auto report = train_step(batch, curriculum(step_));
    if (hook) hook(report);
  }
}

std::string format_log_line(const LossReport& r, double tokens_per_second) {
  std::string line = fmt::format("step {} p_k {:.4f} lr {:.3e} loss {:.4f}", r.step, r.p_k, r.lr,
                                 r.tokens == 0 ? 0.0 : r.loss / static_cast<double>(r.tokens));
  for (int t = 0; t < 4; ++t) {
    const auto& tl = r.task[static_cast<std::size_t>(t)];
    if (tl.tokens == 0) continue;
    line += fmt::format(" {} {:.4f}/{}", tasks::to_string(static_cast<Task>(t)), tl.mean(), tl.tokens);
  }
  if (r.length.tokens > 0) line += fmt::format(" LENGTH {:.4f}/{}", r.length.mean(), r.length.tokens);
  line += fmt::format(" tok/s {:.0f}", tokens_per_second);
  return line;
}

TrainRun run_training(const TrainConfig& config, model::ModelConfig model_config, std::span<const TrainPair> data,
                      const RunOptions& options) {
  config.validate();
  model_config.length_head = config.mode == TrainMode::CMLM_ONLY;
  model_config.chunk_size = config.k;
  model_config.validate();
  model::Transformer<float> model(model_config, config.seed);
  nlohmann::ordered_json meta;
  meta["mode"] = to_string(config.mode);
  meta["train"] = config.to_json();
  if (options.init) {
    if (!options.init->config.same_shapes(model_config)) {
      throw std::invalid_argument("initial checkpoint config does not match the model config");
    }
    // A fresh length head is the only thing allowed to be missing.
    model::load_parameters(model, *options.init, model_config.length_head && !options.init->config.length_head);
    meta["init"] = options.init_path.empty() ? "checkpoint" : options.init_path;
    meta["init_step"] = options.init->step;
    if (options.init->meta.contains("train")) meta["init_train"] = options.init->meta["train"];
  } else {
    meta["init"] = "random";
  }
  meta["provenance"] = options.provenance;

  TrainRun run;
  Trainer<float> trainer(model, config);
  const auto start = std::chrono::steady_clock::now();
  auto window_start = start;
  std::size_t window_tokens = 0;
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);
  trainer.run(data, [&](const LossReport& r) {
    window_tokens += r.tokens;
    const bool last = r.step + 1 == config.total_steps || trainer.step() == config.total_steps;
    if ((r.step + 1) % config.log_every == 0 || last) {
      run.reports.push_back(r);
      const auto now = std::chrono::steady_clock::now();
      const double secs = std::chrono::duration<double>(now - window_start).count();
      if (options.log) *options.log << format_log_line(r, secs > 0 ? static_cast<double>(window_tokens) / secs : 0.0) << '\n' << std::flush;
      window_start = now;
      window_tokens = 0;
    }
    if (config.checkpoint_every > 0 && !options.checkpoint_dir.empty() && trainer.step() % config.checkpoint_every == 0) {
      model::save_checkpoint(std::filesystem::path(options.checkpoint_dir) / fmt::format("step{}.ckpt", trainer.step()),
                             model::make_checkpoint(model, trainer.step(), meta));
    }
  });
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  run.checkpoint = model::make_checkpoint(model, trainer.step(), meta);
  return run;
}

template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;

}  // namespace hrt::train
