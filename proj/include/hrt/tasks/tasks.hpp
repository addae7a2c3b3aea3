#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hrt/common/rng.hpp"
#include "hrt/corpus/vocab.hpp"

namespace hrt::tasks {

using corpus::TokenSeq;

inline constexpr std::int32_t kIgnore = -1;

enum class Task { AT, CMLM, SKIP_AT, SKIP_CMLM };
std::string to_string(Task task);
// AT and SKIP_AT decode causally; the others see the whole input.
bool is_causal(Task task);

struct TrainingSample {
  Task task = Task::AT;
  TokenSeq src;
  TokenSeq dec_input;
  std::vector<std::int32_t> positions;
  // kIgnore marks positions without supervision.
  std::vector<std::int32_t> targets;

  std::size_t supervised() const;
};

// How the Skip-CMLM input ends when k divides N. REFERENCE keeps the ground-truth
// layout (no mask before EOS); INFERENCE mirrors the decoding-time
// construction, which always has k-1 masks before EOS, and supervises those
// extra slots with EOS.
enum class SkipCmlmLayout { REFERENCE, INFERENCE };
std::string to_string(SkipCmlmLayout layout);
SkipCmlmLayout parse_skip_cmlm_layout(const std::string& name);

TrainingSample build_task_at(const TokenSeq& src, const TokenSeq& tgt);
// Masks n positions, n uniform on 1..N. `forced_masks` (1-based) overrides the draw.
TrainingSample build_task_cmlm(const TokenSeq& src, const TokenSeq& tgt, Rng& rng,
                               std::span<const std::size_t> forced_masks = {});
TrainingSample build_task_skip_at(const TokenSeq& src, const TokenSeq& tgt, int k);
TrainingSample build_task_skip_cmlm(const TokenSeq& src, const TokenSeq& tgt, int k,
                                    SkipCmlmLayout layout = SkipCmlmLayout::REFERENCE);

struct CurriculumState {
  std::uint64_t t = 0;
  std::uint64_t total = 1;
  double lambda = 1.0;

  // (t/T)^lambda clamped to [0, 1].
  double p_k() const;
};

struct Pair {
  TokenSeq src, tgt;
};

struct SplitBatch {
  std::vector<TrainingSample> primary, auxiliary;
  std::size_t primary_pairs = 0;
};

// The first floor(n * p_k) pairs become SKIP_AT + SKIP_CMLM samples, the rest
// AT + CMLM samples. Degenerate skip samples (k > N, or k = 1 for
// SKIP_CMLM) are replaced by their auxiliary counterparts.
SplitBatch split_batch(std::span<const Pair> batch, const CurriculumState& state, int k, Rng& rng,
                       SkipCmlmLayout layout = SkipCmlmLayout::REFERENCE);

}  // namespace hrt::tasks
