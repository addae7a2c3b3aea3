#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hrt::corpus {

using TokenSeq = std::vector<std::int32_t>;

inline constexpr std::int32_t kPad = 0;
inline constexpr std::int32_t kBos = 1;
inline constexpr std::int32_t kEos = 2;
inline constexpr std::int32_t kMask = 3;
inline constexpr std::int32_t kMaxChunk = 4;
inline constexpr std::int32_t kReserved = 4 + kMaxChunk;

// Start symbol of the chunk-k skip decoder, k in 1..kMaxChunk.
std::int32_t bos_k(int k);
bool is_special(std::int32_t id);

class Vocab {
 public:
  // Reserved specials followed by `content` in order.
  explicit Vocab(std::vector<std::string> content);
  // Content tokens t00, t01, ...
  static Vocab numbered(std::size_t content_count);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t content_size() const { return tokens_.size() - kReserved; }
  const std::string& token(std::int32_t id) const;
  // Throws std::invalid_argument for unknown tokens.
  std::int32_t id(std::string_view token) const;
  bool contains(std::string_view token) const;

  TokenSeq encode(std::string_view line) const;
  // Content tokens only; specials are dropped.
  std::string decode(std::span<const std::int32_t> ids) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

std::vector<std::string> split_tokens(std::string_view line);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);
std::vector<TokenSeq> read_token_file(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace hrt::corpus
