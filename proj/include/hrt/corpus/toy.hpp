#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hrt/corpus/vocab.hpp"

namespace hrt::corpus {

enum class ToyKind { COPY, REVERSE, CIPHER_BLOCKSWAP };

std::string to_string(ToyKind kind);
ToyKind parse_toy_kind(const std::string& name);

struct ToyTaskSpec {
  ToyKind kind = ToyKind::CIPHER_BLOCKSWAP;
  std::size_t vocab_size = 64;  // content tokens
  std::size_t min_length = 4;
  std::size_t max_length = 20;
  std::size_t train_size = 50000;
  std::size_t valid_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ParallelCorpus {
  std::vector<TokenSeq> src, tgt;
  std::size_t size() const { return src.size(); }
};

struct ToyCorpus {
  Vocab vocab;
  // Substitution over content ids (index = source id - kReserved).
  std::vector<std::int32_t> cipher;
  ParallelCorpus train, valid, test;
};

// Deterministic source -> target mapping of a task.
TokenSeq apply_task(ToyKind kind, const TokenSeq& src, const std::vector<std::int32_t>& cipher);

ToyCorpus generate_corpus(const ToyTaskSpec& spec);

// Writes {train,valid,test}.{src,tgt} and vocab.txt under `dir`.
void write_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir);
ParallelCorpus read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt, const Vocab& vocab);

}  // namespace hrt::corpus
