#include "hrt/masking/masking.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "hrt/corpus/bleu.hpp"
#include "hrt/tensor/ops.hpp"

namespace hrt::masking {

using corpus::kEos;
using corpus::kMask;

std::string to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::HEAD:
      return "HEAD";
    case MaskStrategy::TAIL:
      return "TAIL";
    case MaskStrategy::RANDOM:
      return "RANDOM";
    case MaskStrategy::CHUNK:
      return "CHUNK";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  std::string up;
  for (char c : name) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  if (up == "HEAD") return MaskStrategy::HEAD;
  if (up == "TAIL") return MaskStrategy::TAIL;
  if (up == "RANDOM") return MaskStrategy::RANDOM;
  if (up == "CHUNK") return MaskStrategy::CHUNK;
  throw std::invalid_argument("unknown mask strategy '" + name + "'");
}

std::size_t mask_count(std::size_t n, double p_mask) {
  // The epsilon keeps products like 10 * 0.7 from landing one below.
  const auto raw = static_cast<std::size_t>(std::floor(static_cast<double>(n) * p_mask + 1e-9));
  return std::min(n, std::max<std::size_t>(1, raw));
}

MaskedTokens apply_mask(const TokenSeq& tokens, const MaskSpec& spec, Rng& rng) {
  MaskedTokens out{tokens, {}};
  const std::size_t n = tokens.size();
  if (n == 0) return out;
  switch (spec.strategy) {
    case MaskStrategy::HEAD:
      for (std::size_t i = 1; i <= mask_count(n, spec.p_mask); ++i) out.positions.push_back(i);
      break;
    case MaskStrategy::TAIL:
      for (std::size_t i = n - mask_count(n, spec.p_mask) + 1; i <= n; ++i) out.positions.push_back(i);
      break;
    case MaskStrategy::RANDOM: {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 1);
      const std::size_t m = mask_count(n, spec.p_mask);
      for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
        std::swap(all[i], all[j]);
      }
      out.positions.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
      std::sort(out.positions.begin(), out.positions.end());
      break;
    }
    case MaskStrategy::CHUNK: {
      if (spec.k < 1) throw std::invalid_argument("chunk size must be >= 1");
      const auto k = static_cast<std::size_t>(spec.k);
      for (std::size_t i = 1; i <= n; ++i) {
        if ((i - 1) % k != 0) out.positions.push_back(i);
      }
      break;
    }
  }
  for (auto p : out.positions) out.tokens[p - 1] = kMask;
  return out;
}

template <typename T>
std::vector<TokenSeq> fill_masks(const model::Transformer<T>& model, std::span<const TokenSeq> sources,
                                 std::span<const TokenSeq> masked, std::size_t batch_size) {
  if (sources.size() != masked.size()) throw std::invalid_argument("sources and masked hypotheses differ in count");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  std::vector<TokenSeq> out(masked.begin(), masked.end());
  const std::size_t vocab = model.config().vocab_size;
  for (std::size_t lo = 0; lo < sources.size(); lo += batch_size) {
    const std::size_t hi = std::min(sources.size(), lo + batch_size);
    std::vector<std::size_t> rows;
    model::DecoderBatch batch;
    batch.mode = model::DecoderMode::FULL;
    std::vector<TokenSeq> batch_sources(sources.begin() + static_cast<std::ptrdiff_t>(lo),
                                        sources.begin() + static_cast<std::ptrdiff_t>(hi));
    for (std::size_t i = lo; i < hi; ++i) {
      TokenSeq input = masked[i];
      input.push_back(kEos);
      std::vector<std::int32_t> positions(input.size());
      std::iota(positions.begin(), positions.end(), 1);
      batch.add(input, positions, i - lo);
      rows.push_back(i);
    }
    const auto memory = model.encode(batch_sources);
    const auto lp = tensor::log_softmax_lastdim(model.decode(batch, memory));
    for (std::size_t s = 0; s < rows.size(); ++s) {
      auto& seq = out[rows[s]];
      for (std::size_t p = 0; p < seq.size(); ++p) {
        if (seq[p] != kMask) continue;
        const T* row = lp.data() + (batch.offset[s] + p) * vocab;
        std::int32_t best = -1;
        for (std::size_t v = 0; v < vocab; ++v) {
          const auto id = static_cast<std::int32_t>(v);
          if (corpus::is_special(id)) continue;
          if (best < 0 || row[v] > row[best]) best = id;
        }
        seq[p] = best;
      }
    }
  }
  return out;
}

template <typename T>
std::vector<CurvePoint> fill_and_score(const model::Transformer<T>& cmlm, std::span<const TokenSeq> sources,
                                       std::span<const TokenSeq> at_hyps, std::span<const TokenSeq> refs,
                                       const Grid& grid) {
  if (sources.size() != at_hyps.size() || sources.size() != refs.size()) {
    throw std::invalid_argument(fmt::format("line counts differ: {} sources, {} hypotheses, {} references",
                                            sources.size(), at_hyps.size(), refs.size()));
  }
  const std::vector<TokenSeq> ref_vec(refs.begin(), refs.end());
  std::size_t total_tokens = 0;
  for (const auto& h : at_hyps) total_tokens += h.size();

  auto score = [&](const MaskSpec& spec) {
    Rng rng(spec.seed);
    std::vector<TokenSeq> masked;
    std::size_t n_masked = 0;
    for (const auto& h : at_hyps) {
      auto m = apply_mask(h, spec, rng);
      n_masked += m.positions.size();
      masked.push_back(std::move(m.tokens));
    }
    const auto filled = fill_masks(cmlm, sources, masked);
    CurvePoint p;
    p.strategy = spec.strategy;
    p.rate = spec.strategy == MaskStrategy::CHUNK ? 1.0 - 1.0 / spec.k : spec.p_mask;
    p.effective_rate = total_tokens == 0 ? 0.0 : static_cast<double>(n_masked) / static_cast<double>(total_tokens);
    p.k = spec.strategy == MaskStrategy::CHUNK ? spec.k : 0;
    p.seed = spec.strategy == MaskStrategy::RANDOM ? spec.seed : 0;
    p.bleu = corpus::corpus_bleu_ids(filled, ref_vec);
    return p;
  };

  std::vector<CurvePoint> points;
  for (double rate : grid.rates) {
    points.push_back(score({MaskStrategy::HEAD, rate, 0, 0}));
    points.push_back(score({MaskStrategy::TAIL, rate, 0, 0}));
    for (auto seed : grid.random_seeds) points.push_back(score({MaskStrategy::RANDOM, rate, 0, seed}));
  }
  for (int k : grid.chunk_sizes) points.push_back(score({MaskStrategy::CHUNK, 0.0, k, 0}));
  return points;
}

double mean_bleu(std::span<const CurvePoint> points, MaskStrategy strategy, double rate) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& p : points) {
    if (p.strategy == strategy && std::abs(p.rate - rate) < 1e-9) {
      sum += p.bleu;
      ++n;
    }
  }
  if (n == 0) throw std::invalid_argument(fmt::format("no {} point at rate {}", to_string(strategy), rate));
  return sum / static_cast<double>(n);
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> points) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "strategy,rate,effective_rate,k,seed,bleu\n";
  for (const auto& p : points) {
    os << fmt::format("{},{:.4f},{:.4f},{},{},{:.2f}\n", to_string(p.strategy), p.rate, p.effective_rate, p.k, p.seed,
                      p.bleu);
  }
}

void write_curve_tsv(const std::filesystem::path& path, std::span<const CurvePoint> points) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (auto s : {MaskStrategy::HEAD, MaskStrategy::TAIL, MaskStrategy::RANDOM, MaskStrategy::CHUNK}) {
    std::map<double, std::pair<double, std::size_t>> by_rate;
    for (const auto& p : points) {
      if (p.strategy != s) continue;
      auto& [sum, n] = by_rate[p.rate];
      sum += p.bleu;
      ++n;
    }
    if (by_rate.empty()) continue;
    os << "# " << to_string(s) << "\n";
    for (const auto& [rate, acc] : by_rate) {
      os << fmt::format("{:.4f}\t{:.2f}\n", rate, acc.first / static_cast<double>(acc.second));
    }
    os << "\n\n";
  }
}

template std::vector<TokenSeq> fill_masks<float>(const model::Transformer<float>&, std::span<const TokenSeq>,
                                                 std::span<const TokenSeq>, std::size_t);
template std::vector<TokenSeq> fill_masks<double>(const model::Transformer<double>&, std::span<const TokenSeq>,
                                                  std::span<const TokenSeq>, std::size_t);
template std::vector<CurvePoint> fill_and_score<float>(const model::Transformer<float>&, std::span<const TokenSeq>,
                                                       std::span<const TokenSeq>, std::span<const TokenSeq>,
                                                       const Grid&);
template std::vector<CurvePoint> fill_and_score<double>(const model::Transformer<double>&, std::span<const TokenSeq>,
                                                        std::span<const TokenSeq>, std::span<const TokenSeq>,
                                                        const Grid&);

}  // namespace hrt::masking
