#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "hrt/corpus/vocab.hpp"
#include "hrt/model/transformer.hpp"

namespace hrt::corpus {

struct DistillResult {
  std::vector<TokenSeq> targets;
  // Lines whose translation came out empty; written as a lone EOS.
  std::vector<std::size_t> empty_lines;
};

// Beam-search translation of every source with an AT model, line-aligned.
template <typename T>
DistillResult distill(const model::Transformer<T>& model, std::span<const TokenSeq> sources, std::size_t beam,
                      std::size_t batch_size = 64);

void write_distilled(const std::filesystem::path& path, const Vocab& vocab, const DistillResult& result);
// Reads a distilled file; a lone EOS line yields an empty target.
std::vector<TokenSeq> read_distilled(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace hrt::corpus
