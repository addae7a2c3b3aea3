#include "hrt/tasks/tasks.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hrt::tasks {

using corpus::kBos;
using corpus::kEos;
using corpus::kMask;

std::string to_string(Task task) {
  switch (task) {
    case Task::AT:
      return "AT";
    case Task::CMLM:
      return "CMLM";
    case Task::SKIP_AT:
      return "SKIP_AT";
    case Task::SKIP_CMLM:
      return "SKIP_CMLM";
  }
  return "?";
}

bool is_causal(Task task) { return task == Task::AT || task == Task::SKIP_AT; }

std::size_t TrainingSample::supervised() const {
  return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](auto t) { return t != kIgnore; }));
}

std::string to_string(SkipCmlmLayout layout) { return layout == SkipCmlmLayout::REFERENCE ? "reference" : "inference"; }

SkipCmlmLayout parse_skip_cmlm_layout(const std::string& name) {
  if (name == "reference") return SkipCmlmLayout::REFERENCE;
  if (name == "inference") return SkipCmlmLayout::INFERENCE;
  throw std::invalid_argument("unknown Skip-CMLM layout '" + name + "' (expected reference or inference)");
}

namespace {
void require_target(const TokenSeq& tgt) {
  if (tgt.empty()) throw std::invalid_argument("target must contain at least one token");
}
void require_k(int k) {
  if (k < 1 || k > corpus::kMaxChunk) throw std::invalid_argument(fmt::format("chunk size {} unsupported", k));
}
}  // namespace

TrainingSample build_task_at(const TokenSeq& src, const TokenSeq& tgt) {
  require_target(tgt);
  TrainingSample s;
  s.task = Task::AT;
  s.src = src;
  s.dec_input.push_back(kBos);
  s.dec_input.insert(s.dec_input.end(), tgt.begin(), tgt.end());
  s.positions.resize(s.dec_input.size());
  std::iota(s.positions.begin(), s.positions.end(), 0);
  s.targets = tgt;
  s.targets.push_back(kEos);
  return s;
}

TrainingSample build_task_cmlm(const TokenSeq& src, const TokenSeq& tgt, Rng& rng,
                               std::span<const std::size_t> forced_masks) {
  require_target(tgt);
  const std::size_t n = tgt.size();
  TrainingSample s;
  s.task = Task::CMLM;
  s.src = src;
  s.dec_input = tgt;
  s.dec_input.push_back(kEos);
  s.positions.resize(n + 1);
  std::iota(s.positions.begin(), s.positions.end(), 1);
  s.targets.assign(n + 1, kIgnore);

  std::vector<std::size_t> masked;
  if (!forced_masks.empty()) {
    masked.assign(forced_masks.begin(), forced_masks.end());
  } else {
    const std::size_t count = 1 + rng.uniform_int(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{1});
    // Partial Fisher-Yates: the first `count` entries are a uniform subset.
    for (std::size_t i = 0; i < count; ++i) std::swap(order[i], order[i + rng.uniform_int(n - i)]);
    masked.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  }
  for (auto p : masked) {
    if (p < 1 || p > n) throw std::invalid_argument(fmt::format("mask position {} outside 1..{}", p, n));
    s.targets[p - 1] = tgt[p - 1];
    s.dec_input[p - 1] = kMask;
  }
  return s;
}

TrainingSample build_task_skip_at(const TokenSeq& src, const TokenSeq& tgt, int k) {
  require_target(tgt);
  require_k(k);
  const auto kk = static_cast<std::size_t>(k);
  const std::size_t m = tgt.size() / kk;
  TrainingSample s;
  s.task = Task::SKIP_AT;
  s.src = src;
  s.dec_input.push_back(corpus::bos_k(k));
  s.positions.push_back(0);
  for (std::size_t i = 1; i <= m; ++i) {
    const auto z = tgt[i * kk - 1];
    s.dec_input.push_back(z);
    s.positions.push_back(static_cast<std::int32_t>(i * kk));
    s.targets.push_back(z);
  }
  s.targets.push_back(kEos);
  return s;
}

TrainingSample build_task_skip_cmlm(const TokenSeq& src, const TokenSeq& tgt, int k, SkipCmlmLayout layout) {
  require_target(tgt);
  require_k(k);
  const std::size_t n = tgt.size();
  const auto kk = static_cast<std::size_t>(k);
  TrainingSample s;
  s.task = Task::SKIP_CMLM;
  s.src = src;
  for (std::size_t p = 1; p <= n; ++p) {
    if (p % kk == 0) {
      s.dec_input.push_back(tgt[p - 1]);
      s.targets.push_back(kIgnore);
    } else {
      s.dec_input.push_back(kMask);
      s.targets.push_back(tgt[p - 1]);
    }
  }
  if (layout == SkipCmlmLayout::INFERENCE) {
    // Pad the final chunk with masks so EOS lands on a multiple of k, as in
    // the decoding-time construction; those slots must predict EOS.
    while ((s.dec_input.size() + 1) % kk != 0) {
      s.dec_input.push_back(kMask);
      s.targets.push_back(kEos);
    }
  }
  s.dec_input.push_back(kEos);
  s.targets.push_back(kIgnore);
  s.positions.resize(s.dec_input.size());
  std::iota(s.positions.begin(), s.positions.end(), 1);
  return s;
}

double CurriculumState::p_k() const {
  if (total == 0) throw std::invalid_argument("curriculum needs T >= 1");
  const double ratio = std::clamp(static_cast<double>(t) / static_cast<double>(total), 0.0, 1.0);
  return std::pow(ratio, lambda);
}

SplitBatch split_batch(std::span<const Pair> batch, const CurriculumState& state, int k, Rng& rng,
                       SkipCmlmLayout layout) {
  require_k(k);
  SplitBatch out;
  const auto n = batch.size();
  out.primary_pairs = static_cast<std::size_t>(std::floor(static_cast<double>(n) * state.p_k()));
  out.primary_pairs = std::min(out.primary_pairs, n);
  const auto kk = static_cast<std::size_t>(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& pair = batch[i];
    if (i < out.primary_pairs) {
      if (pair.tgt.size() >= kk) {
        out.primary.push_back(build_task_skip_at(pair.src, pair.tgt, k));
      } else {
        out.auxiliary.push_back(build_task_at(pair.src, pair.tgt));
      }
      auto skip_cmlm = build_task_skip_cmlm(pair.src, pair.tgt, k, layout);
      if (k > 1 && skip_cmlm.supervised() > 0) {
        out.primary.push_back(std::move(skip_cmlm));
      } else {
        out.auxiliary.push_back(build_task_cmlm(pair.src, pair.tgt, rng));
      }
    } else {
      out.auxiliary.push_back(build_task_at(pair.src, pair.tgt));
      out.auxiliary.push_back(build_task_cmlm(pair.src, pair.tgt, rng));
    }
  }
  return out;
}

}  // namespace hrt::tasks
