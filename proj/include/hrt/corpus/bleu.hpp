#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace hrt::corpus {

using Sentence = std::vector<std::string>;

// Sufficient statistics of corpus BLEU-4.
struct BleuStats {
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;

  void add(const Sentence& hyp, const Sentence& ref);
  BleuStats& operator+=(const BleuStats& o);
  // Score in [0, 100]. With `smooth`, orders >= 2 use (matched+1)/(total+1).
  double score(bool smooth = false) const;
};

// Throws std::invalid_argument on line-count mismatch or an empty reference corpus.
double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, bool smooth = false);
double corpus_bleu(const std::vector<std::string>& hyp_lines, const std::vector<std::string>& ref_lines,
                   bool smooth = false);
// Token-id sequences, compared id by id.
double corpus_bleu_ids(const std::vector<std::vector<std::int32_t>>& hyps,
                       const std::vector<std::vector<std::int32_t>>& refs, bool smooth = false);
double bleu_files(const std::filesystem::path& hyp, const std::filesystem::path& ref, bool smooth = false);

}  // namespace hrt::corpus
