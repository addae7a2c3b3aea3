#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hrt/corpus/vocab.hpp"
#include "hrt/model/transformer.hpp"

namespace hrt::decode {

using corpus::TokenSeq;
using model::Transformer;

enum class LengthMode { PREDICTED, ORACLE };
enum class System { AT, HRT, CMLM };

std::string to_string(System system);
System parse_system(const std::string& name);

struct DecodeConfig {
  int k = 2;
  std::size_t b_at = 5;
  std::size_t b_nat = 1;
  // Plain AT beam width.
  std::size_t beam = 5;
  // Cap on decoding steps; 0 selects src-length + 8 (AT) or
  // ceil((src-length + 8) / k) (Skip-AT).
  std::size_t max_steps = 0;
  // Mask-predict iterations and number of length candidates.
  std::size_t iterations = 10;
  std::size_t length_beam = 1;
  LengthMode length_mode = LengthMode::PREDICTED;
  // Divides hypothesis scores by length^alpha when ranking; 0 disables.
  double length_penalty = 0.0;

  // Throws std::invalid_argument (e.g. b_at < b_nat).
  void validate() const;
};

struct Hypothesis {
  // For Skip-AT this is the sparse sequence z_1..z_m followed by EOS; after
  // Stage II it is the full untruncated construction.
  TokenSeq tokens;
  double score_at = 0.0;
  double score_nat = 0.0;
  bool finished = false;
  // Hit the step cap; EOS was appended without being scored.
  bool forced = false;

  double score() const { return score_at + score_nat; }
};

// Per-sentence decoder forward counts. One batched forward counts once for
// every sentence taking part in it.
struct CallStats {
  std::size_t decoder_calls = 0;
  std::size_t stage1_calls = 0;
  std::size_t stage2_calls = 0;
};

struct Translation {
  // Final output: truncated at the first EOS, specials removed.
  TokenSeq output;
  Hypothesis best;
  std::vector<Hypothesis> candidates;
  CallStats calls;
  // Skip-AT length m (HRT) or mask-predict target length (CMLM).
  std::size_t length = 0;
};

// Left-to-right beam search from `start` with positions 0, stride, 2*stride, ...
// Returns hypotheses ranked best first (score desc, then lower token ids,
// then shorter).
template <typename T>
std::vector<std::vector<Hypothesis>> causal_beam_search(const Transformer<T>& model, const model::Memory<T>& memory,
                                                        std::int32_t start, int stride, std::size_t beam,
                                                        std::span<const std::size_t> max_steps,
                                                        std::vector<CallStats>* calls = nullptr,
                                                        double length_penalty = 0.0);

template <typename T>
std::vector<Hypothesis> beam_search_at(const Transformer<T>& model, const TokenSeq& src, std::size_t beam,
                                       std::size_t max_len, CallStats* calls = nullptr,
                                       std::int32_t start = corpus::kBos);

template <typename T>
std::vector<Hypothesis> skip_at_stage(const Transformer<T>& model, const model::Memory<T>& memory, int k,
                                      std::size_t b_at, std::size_t max_steps, CallStats* calls = nullptr);

struct NatInput {
  TokenSeq ids;
  std::vector<std::int32_t> positions;
};

// (M^(k-1), z_1, ..., M^(k-1), z_m) at positions 1..k*m for z = (z_1..z_m).
NatInput build_nat_input(std::span<const std::int32_t> sparse, int k);

// Fills every MASK of each input with its argmax in one unmasked-mode
// forward over all inputs. Inputs i reads encoded source memory_index[i].
template <typename T>
std::vector<Hypothesis> skip_cmlm_fill(const Transformer<T>& model, const model::Memory<T>& memory,
                                       std::span<const NatInput> inputs, std::span<const std::size_t> memory_index);

// Truncates at the first EOS and removes specials.
TokenSeq finalize_output(std::span<const std::int32_t> tokens);

template <typename T>
std::vector<Translation> hrt_translate_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                             const DecodeConfig& config);
template <typename T>
Translation hrt_translate(const Transformer<T>& model, const TokenSeq& src, const DecodeConfig& config);

template <typename T>
std::vector<Translation> at_translate_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                            const DecodeConfig& config);

// Re-mask count for iteration i of I on a length-N hypothesis.
std::size_t remask_count(std::size_t n, std::size_t iterations, std::size_t i);

// `oracle_lengths` is consulted in ORACLE mode.
template <typename T>
std::vector<Translation> cmlm_mask_predict_batch(const Transformer<T>& model, std::span<const TokenSeq> sources,
                                                 const DecodeConfig& config,
                                                 std::span<const std::size_t> oracle_lengths = {});
template <typename T>
Translation cmlm_mask_predict(const Transformer<T>& model, const TokenSeq& src, const DecodeConfig& config,
                              std::optional<std::size_t> oracle_length = std::nullopt);

template <typename T>
std::vector<Translation> translate_batch(System system, const Transformer<T>& model, std::span<const TokenSeq> sources,
                                         const DecodeConfig& config);

// Teacher-forced recomputation of a hypothesis' two score components.
template <typename T>
double teacher_forced_skip_at_score(const Transformer<T>& model, const TokenSeq& src, const Hypothesis& sparse, int k);
template <typename T>
double teacher_forced_nat_score(const Transformer<T>& model, const TokenSeq& src, const NatInput& input,
                                const TokenSeq& filled);

}  // namespace hrt::decode
