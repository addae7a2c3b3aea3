#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hrt/common/rng.hpp"
#include "hrt/corpus/vocab.hpp"
#include "hrt/model/transformer.hpp"

namespace hrt::masking {

using corpus::TokenSeq;

enum class MaskStrategy { HEAD, TAIL, RANDOM, CHUNK };
std::string to_string(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

struct MaskSpec {
  MaskStrategy strategy = MaskStrategy::RANDOM;
  // Ignored by CHUNK.
  double p_mask = 0.5;
  // CHUNK only.
  int k = 2;
  // RANDOM only.
  std::uint64_t seed = 1;
};

// max(1, floor(n * p_mask)), capped at n.
std::size_t mask_count(std::size_t n, double p_mask);

struct MaskedTokens {
  TokenSeq tokens;
  // 1-based, ascending.
  std::vector<std::size_t> positions;
};

// RANDOM draws its subset from `rng`; the other strategies ignore it.
MaskedTokens apply_mask(const TokenSeq& tokens, const MaskSpec& spec, Rng& rng);

// One unmasked-mode pass per batch: input (tokens, EOS) at positions
// 1..N+1, every MASK replaced by its argmax content token.
template <typename T>
std::vector<TokenSeq> fill_masks(const model::Transformer<T>& model, std::span<const TokenSeq> sources,
                                 std::span<const TokenSeq> masked, std::size_t batch_size = 64);

struct Grid {
  std::vector<double> rates{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<int> chunk_sizes{2, 3, 4};
  std::vector<std::uint64_t> random_seeds{1, 2, 3};
};

struct CurvePoint {
  MaskStrategy strategy = MaskStrategy::HEAD;
  // Nominal rate: p_mask, or 1 - 1/k for CHUNK.
  double rate = 0.0;
  // Masked tokens over all hypothesis tokens.
  double effective_rate = 0.0;
  int k = 0;
  std::uint64_t seed = 0;
  double bleu = 0.0;
};

// Masks the AT hypotheses under every grid point, fills them with the CMLM
// model and scores corpus BLEU against `refs`. Throws std::invalid_argument
// on line-count mismatch.
template <typename T>
std::vector<CurvePoint> fill_and_score(const model::Transformer<T>& cmlm, std::span<const TokenSeq> sources,
                                       std::span<const TokenSeq> at_hyps, std::span<const TokenSeq> refs,
                                       const Grid& grid);

// Mean BLEU of the points matching strategy and rate (RANDOM over seeds).
double mean_bleu(std::span<const CurvePoint> points, MaskStrategy strategy, double rate);

// strategy,rate,effective_rate,k,seed,bleu
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points);
// One block per strategy (seed-averaged), blank-line separated.
void write_curve_tsv(const std::filesystem::path& path, std::span<const CurvePoint> points);

}  // namespace hrt::masking
