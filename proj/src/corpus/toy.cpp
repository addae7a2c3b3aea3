#include "hrt/corpus/toy.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>

#include "hrt/common/rng.hpp"

namespace hrt::corpus {

std::string to_string(ToyKind kind) {
  switch (kind) {
    case ToyKind::COPY:
      return "copy";
    case ToyKind::REVERSE:
      return "reverse";
    case ToyKind::CIPHER_BLOCKSWAP:
      return "cipher_blockswap";
  }
  return "?";
}

ToyKind parse_toy_kind(const std::string& name) {
  if (name == "copy") return ToyKind::COPY;
  if (name == "reverse") return ToyKind::REVERSE;
  if (name == "cipher_blockswap" || name == "cipher") return ToyKind::CIPHER_BLOCKSWAP;
  throw std::invalid_argument("unknown task '" + name + "' (expected copy, reverse or cipher_blockswap)");
}

void ToyTaskSpec::validate() const {
  if (vocab_size < 2) {
    throw std::invalid_argument(fmt::format("vocab size {} is below the reserved count {} + 2", vocab_size, kReserved));
  }
  if (min_length < 1 || min_length > max_length) throw std::invalid_argument("invalid length range");
  if (train_size == 0) throw std::invalid_argument("training split must be non-empty");
}

TokenSeq apply_task(ToyKind kind, const TokenSeq& src, const std::vector<std::int32_t>& cipher) {
  TokenSeq out = src;
  switch (kind) {
    case ToyKind::COPY:
      break;
    case ToyKind::REVERSE:
      std::reverse(out.begin(), out.end());
      break;
    case ToyKind::CIPHER_BLOCKSWAP:
      for (auto& t : out) {
        const auto idx = static_cast<std::size_t>(t - kReserved);
        if (t < kReserved || idx >= cipher.size()) throw std::invalid_argument("token outside cipher domain");
        t = cipher[idx];
      }
      for (std::size_t i = 0; i + 1 < out.size(); i += 2) std::swap(out[i], out[i + 1]);
      break;
  }
  return out;
}

ToyCorpus generate_corpus(const ToyTaskSpec& spec) {
  spec.validate();
  const std::size_t v = spec.vocab_size;
  Rng rng(spec.seed);
  ToyCorpus corpus{Vocab::numbered(v), {}, {}, {}, {}};
  corpus.cipher.resize(v);
  std::iota(corpus.cipher.begin(), corpus.cipher.end(), kReserved);
  Rng cipher_rng = rng.split(1);
  cipher_rng.shuffle(corpus.cipher.begin(), corpus.cipher.end());

  const std::size_t total = spec.train_size + spec.valid_size + spec.test_size;
  // Count distinct sequences available so deduplication can terminate.
  double capacity = 0;
  for (std::size_t len = spec.min_length; len <= spec.max_length && capacity < 1e18; ++len) {
    capacity += std::pow(static_cast<double>(v), static_cast<double>(len));
  }
  if (capacity < static_cast<double>(total)) {
    throw std::invalid_argument(fmt::format("only {:.0f} distinct sources exist for {} requested", capacity, total));
  }

  Rng data_rng = rng.split(2);
  std::set<TokenSeq> seen;
  std::vector<TokenSeq> sources;
  sources.reserve(total);
  while (sources.size() < total) {
    const auto len = static_cast<std::size_t>(data_rng.uniform_range(static_cast<std::int64_t>(spec.min_length),
                                                                     static_cast<std::int64_t>(spec.max_length)));
    TokenSeq s(len);
    for (auto& t : s) t = kReserved + static_cast<std::int32_t>(data_rng.uniform_int(v));
    if (seen.insert(s).second) sources.push_back(std::move(s));
  }
  auto fill = [&](ParallelCorpus& split, std::size_t begin, std::size_t count) {
    for (std::size_t i = begin; i < begin + count; ++i) {
      split.tgt.push_back(apply_task(spec.kind, sources[i], corpus.cipher));
      split.src.push_back(std::move(sources[i]));
    }
  };
  fill(corpus.train, 0, spec.train_size);
  fill(corpus.valid, spec.train_size, spec.valid_size);
  fill(corpus.test, spec.train_size + spec.valid_size, spec.test_size);
  return corpus;
}

namespace {
void write_split(const ParallelCorpus& split, const Vocab& vocab, const std::filesystem::path& stem) {
  std::vector<std::string> src, tgt;
  for (std::size_t i = 0; i < split.size(); ++i) {
    src.push_back(vocab.decode(split.src[i]));
    tgt.push_back(vocab.decode(split.tgt[i]));
  }
  write_lines(stem.string() + ".src", src);
  write_lines(stem.string() + ".tgt", tgt);
}
}  // namespace

void write_corpus(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  corpus.vocab.save(dir / "vocab.txt");
  write_split(corpus.train, corpus.vocab, dir / "train");
  write_split(corpus.valid, corpus.vocab, dir / "valid");
  write_split(corpus.test, corpus.vocab, dir / "test");
}

ParallelCorpus read_parallel(const std::filesystem::path& src, const std::filesystem::path& tgt, const Vocab& vocab) {
  ParallelCorpus out;
  out.src = read_token_file(src, vocab);
  out.tgt = read_token_file(tgt, vocab);
  if (out.src.size() != out.tgt.size()) {
    throw std::runtime_error(fmt::format("{} has {} lines but {} has {}", src.string(), out.src.size(), tgt.string(),
                                         out.tgt.size()));
  }
  return out;
}

}  // namespace hrt::corpus
