#include <algorithm>
#include <set>

#include "doctest.h"
#include "hrt/corpus/vocab.hpp"
#include "hrt/masking/masking.hpp"
#include "hrt/tensor/ops.hpp"
#include "test_util.hpp"

using namespace hrt;
using namespace hrt::masking;
using corpus::kMask;

namespace {

TokenSeq iota_seq(std::size_t n) {
  TokenSeq t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<std::int32_t>(corpus::kReserved + i % 5);
  return t;
}

model::ModelConfig tiny_model() {
  model::ModelConfig c;
  c.vocab_size = corpus::kReserved + 6;
  c.model_dim = 8;
  c.ffn_dim = 16;
  c.heads = 2;
  c.max_position = 64;
  return c;
}

}  // namespace

TEST_CASE("mask examples") {
  Rng rng(1);
  auto m = apply_mask(iota_seq(10), {MaskStrategy::HEAD, 0.3}, rng);
  CHECK(m.positions == std::vector<std::size_t>{1, 2, 3});
  CHECK(m.tokens[0] == kMask);
  CHECK(m.tokens[3] != kMask);
  CHECK(mask_count(5, 0.1) == 1);
  m = apply_mask(iota_seq(5), {MaskStrategy::CHUNK, 0.0, 2}, rng);
  CHECK(m.positions == std::vector<std::size_t>{2, 4});
  m = apply_mask(iota_seq(10), {MaskStrategy::TAIL, 0.3}, rng);
  CHECK(m.positions == std::vector<std::size_t>{8, 9, 10});
  CHECK(parse_mask_strategy("chunk") == MaskStrategy::CHUNK);
  CHECK_THROWS_AS(parse_mask_strategy("middle"), std::invalid_argument);
}

TEST_CASE("mask counts follow the clamp formula exhaustively") {
  Rng rng(7);
  for (std::size_t n = 1; n <= 32; ++n) {
    const auto tokens = iota_seq(n);
    for (int j = 1; j <= 10; ++j) {
      const double p = j / 10.0;
      const std::size_t expected = std::max<std::size_t>(1, n * static_cast<std::size_t>(j) / 10);
      for (auto s : {MaskStrategy::HEAD, MaskStrategy::TAIL, MaskStrategy::RANDOM}) {
        const auto m = apply_mask(tokens, {s, p}, rng);
        REQUIRE(m.positions.size() == expected);
        const std::set<std::size_t> unique(m.positions.begin(), m.positions.end());
        CHECK(unique.size() == expected);
        CHECK(*unique.begin() >= 1);
        CHECK(*unique.rbegin() <= n);
        if (s == MaskStrategy::HEAD) CHECK(m.positions.back() == expected);
        if (s == MaskStrategy::TAIL) CHECK(m.positions.front() == n - expected + 1);
        for (std::size_t i = 0; i < n; ++i) {
          CHECK((m.tokens[i] == kMask) == static_cast<bool>(unique.count(i + 1)));
        }
      }
    }
  }
}

TEST_CASE("chunk masking rate approaches 1 - 1/k") {
  Rng rng(1);
  for (int k = 2; k <= 4; ++k) {
    const auto m = apply_mask(iota_seq(1000), {MaskStrategy::CHUNK, 0.0, k}, rng);
    const double rate = static_cast<double>(m.positions.size()) / 1000.0;
    CHECK(std::abs(rate - (1.0 - 1.0 / k)) < 0.01);
    for (auto p : m.positions) CHECK((p - 1) % static_cast<std::size_t>(k) != 0);
  }
}

TEST_CASE("fill keeps unmasked tokens and takes row argmax at masks") {
  model::Transformer<double> m(tiny_model(), 12);
  const std::vector<TokenSeq> sources{{8, 9, 10}, {11, 12, 13, 8, 9}};
  const std::vector<TokenSeq> masked{{8, kMask, 10, kMask}, {kMask, 12}};
  const auto filled = fill_masks(m, std::span<const TokenSeq>(sources), std::span<const TokenSeq>(masked), 1);
  REQUIRE(filled.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    TokenSeq input = masked[s];
    input.push_back(corpus::kEos);
    std::vector<std::int32_t> pos(input.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<std::int32_t>(i + 1);
    std::vector<TokenSeq> one{sources[s]};
    const auto lp = tensor::log_softmax_lastdim(m.decode_step(input, pos, m.encode(one), model::DecoderMode::FULL));
    const std::size_t vocab = m.config().vocab_size;
    for (std::size_t i = 0; i < masked[s].size(); ++i) {
      if (masked[s][i] != kMask) {
        CHECK(filled[s][i] == masked[s][i]);
        continue;
      }
      std::size_t best = corpus::kReserved;
      for (std::size_t v = corpus::kReserved; v < vocab; ++v) {
        if (lp.values()[i * vocab + v] > lp.values()[i * vocab + best]) best = v;
      }
      CHECK(filled[s][i] == static_cast<std::int32_t>(best));
    }
  }
}

TEST_CASE("grid scoring") {
  model::Transformer<double> m(tiny_model(), 13);
  Rng rng(5);
  std::vector<TokenSeq> sources, hyps;
  for (int i = 0; i < 12; ++i) {
    TokenSeq s(3 + static_cast<std::size_t>(i % 5));
    for (auto& t : s) t = static_cast<std::int32_t>(corpus::kReserved + rng.uniform_int(6));
    sources.push_back(s);
    hyps.push_back(s);
  }
  Grid grid;
  grid.rates = {0.01, 0.5, 1.0};
  const auto points = fill_and_score(m, std::span<const TokenSeq>(sources), std::span<const TokenSeq>(hyps),
                                     std::span<const TokenSeq>(sources), grid);
  CHECK(points.size() == 3 * 5 + 3);
  std::size_t total = 0;
  for (const auto& h : hyps) total += h.size();
  const double full = mean_bleu(points, MaskStrategy::HEAD, 1.0);
  CHECK(mean_bleu(points, MaskStrategy::TAIL, 1.0) == full);
  CHECK(mean_bleu(points, MaskStrategy::RANDOM, 1.0) == full);
  for (const auto& p : points) {
    if (p.rate == 1.0) CHECK(p.effective_rate == 1.0);
    // The clamp masks exactly one token per sentence.
    if (p.rate == 0.01) CHECK(p.effective_rate == doctest::Approx(12.0 / static_cast<double>(total)));
    if (p.strategy == MaskStrategy::CHUNK) CHECK(p.rate == doctest::Approx(1.0 - 1.0 / p.k));
  }

  const auto dir = hrt::testing::temp_dir("masking");
  write_curve_csv(dir / "curve.csv", points);
  write_curve_tsv(dir / "curve.tsv", points);
  const auto lines = corpus::read_lines(dir / "curve.csv");
  CHECK(lines.size() == points.size() + 1);
  CHECK(lines[0] == "strategy,rate,effective_rate,k,seed,bleu");

  std::vector<TokenSeq> short_refs(sources.begin(), sources.end() - 1);
  CHECK_THROWS_AS(fill_and_score(m, std::span<const TokenSeq>(sources), std::span<const TokenSeq>(hyps),
                                 std::span<const TokenSeq>(short_refs), grid),
                  std::invalid_argument);
}
