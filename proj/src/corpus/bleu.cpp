#include "hrt/corpus/bleu.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "hrt/corpus/vocab.hpp"

namespace hrt::corpus {

namespace {
std::map<std::vector<std::string>, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[std::vector<std::string>(s.begin() + static_cast<std::ptrdiff_t>(i),
                                      s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}
}  // namespace

void BleuStats::add(const Sentence& hyp, const Sentence& ref) {
  hyp_length += hyp.size();
  ref_length += ref.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    if (hyp.size() >= n) total[n - 1] += hyp.size() - n + 1;
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) matched[n - 1] += std::min(count, it->second);
    }
  }
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matched[n] += o.matched[n];
    total[n] += o.total[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

double BleuStats::score(bool smooth) const {
  if (hyp_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(matched[n]);
    double t = static_cast<double>(total[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0 || t == 0.0) return 0.0;
    log_sum += std::log(m / t);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_length) / static_cast<double>(hyp_length)));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs, bool smooth) {
  if (hyps.size() != refs.size()) {
    throw std::invalid_argument(fmt::format("hypothesis has {} lines but reference has {}", hyps.size(), refs.size()));
  }
  BleuStats stats;
  for (std::size_t i = 0; i < hyps.size(); ++i) stats.add(hyps[i], refs[i]);
  if (stats.ref_length == 0) throw std::invalid_argument("reference corpus is empty");
  return stats.score(smooth);
}

double corpus_bleu(const std::vector<std::string>& hyp_lines, const std::vector<std::string>& ref_lines, bool smooth) {
  std::vector<Sentence> h, r;
  for (const auto& l : hyp_lines) h.push_back(split_tokens(l));
  for (const auto& l : ref_lines) r.push_back(split_tokens(l));
  return corpus_bleu(h, r, smooth);
}

double corpus_bleu_ids(const std::vector<std::vector<std::int32_t>>& hyps,
                       const std::vector<std::vector<std::int32_t>>& refs, bool smooth) {
  auto words = [](const std::vector<std::vector<std::int32_t>>& lines) {
    std::vector<Sentence> out;
    out.reserve(lines.size());
    for (const auto& l : lines) {
      Sentence s;
      for (auto id : l) s.push_back(std::to_string(id));
      out.push_back(std::move(s));
    }
    return out;
  };
  return corpus_bleu(words(hyps), words(refs), smooth);
}

double bleu_files(const std::filesystem::path& hyp, const std::filesystem::path& ref, bool smooth) {
  return corpus_bleu(read_lines(hyp), read_lines(ref), smooth);
}

}  // namespace hrt::corpus
