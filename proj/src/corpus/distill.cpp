#include "hrt/corpus/distill.hpp"

#include <algorithm>
#include <stdexcept>

#include "hrt/common/parallel.hpp"
#include "hrt/decode/decoder.hpp"

namespace hrt::corpus {

template <typename T>
DistillResult distill(const model::Transformer<T>& model, std::span<const TokenSeq> sources, std::size_t beam,
                      std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  decode::DecodeConfig config;
  config.beam = beam;
  config.validate();
  DistillResult out;
  out.targets.resize(sources.size());
  const std::size_t batches = (sources.size() + batch_size - 1) / batch_size;
  parallel_for(batches, 1, [&](std::size_t begin, std::size_t end) {
    for (std::size_t b = begin; b < end; ++b) {
      const std::size_t lo = b * batch_size;
      const std::size_t hi = std::min(sources.size(), lo + batch_size);
      auto tr = decode::at_translate_batch(model, sources.subspan(lo, hi - lo), config);
      for (std::size_t i = lo; i < hi; ++i) out.targets[i] = std::move(tr[i - lo].output);
    }
  });
  for (std::size_t i = 0; i < out.targets.size(); ++i) {
    if (out.targets[i].empty()) out.empty_lines.push_back(i);
  }
  return out;
}

void write_distilled(const std::filesystem::path& path, const Vocab& vocab, const DistillResult& result) {
  std::vector<std::string> lines;
  lines.reserve(result.targets.size());
  for (const auto& t : result.targets) lines.push_back(t.empty() ? vocab.token(kEos) : vocab.decode(t));
  write_lines(path, lines);
}

std::vector<TokenSeq> read_distilled(const std::filesystem::path& path, const Vocab& vocab) {
  auto lines = read_token_file(path, vocab);
  for (auto& l : lines) std::erase(l, kEos);
  return lines;
}

template DistillResult distill<float>(const model::Transformer<float>&, std::span<const TokenSeq>, std::size_t,
                                      std::size_t);
template DistillResult distill<double>(const model::Transformer<double>&, std::span<const TokenSeq>, std::size_t,
                                       std::size_t);

}  // namespace hrt::corpus
