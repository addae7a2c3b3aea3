#include "hrt/corpus/vocab.hpp"

#include <fmt/format.h>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hrt::corpus {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<s>", "</s>", "<mask>", "<s1>", "<s2>", "<s3>", "<s4>"};
}

std::int32_t bos_k(int k) {
  if (k < 1 || k > kMaxChunk) throw std::invalid_argument(fmt::format("chunk size {} outside 1..{}", k, kMaxChunk));
  return 4 + (k - 1);
}

bool is_special(std::int32_t id) { return id >= 0 && id < kReserved; }

Vocab::Vocab(std::vector<std::string> content) : tokens_(kSpecials) {
  tokens_.insert(tokens_.end(), content.begin(), content.end());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\n") != std::string::npos) {
      throw std::invalid_argument("invalid vocabulary token '" + tokens_[i] + "'");
    }
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocab Vocab::numbered(std::size_t content_count) {
  std::vector<std::string> content;
  const int width = content_count > 100 ? 3 : 2;
  for (std::size_t i = 0; i < content_count; ++i) content.push_back(fmt::format("t{:0{}}", i, width));
  return Vocab(std::move(content));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.size() < kSpecials.size()) throw std::runtime_error("vocabulary file " + path.string() + " is too short");
  for (std::size_t i = 0; i < kSpecials.size(); ++i) {
    if (lines[i] != kSpecials[i]) {
      throw std::runtime_error(fmt::format("vocabulary file {} line {}: expected {}", path.string(), i + 1, kSpecials[i]));
    }
  }
  return Vocab(std::vector<std::string>(lines.begin() + static_cast<std::ptrdiff_t>(kSpecials.size()), lines.end()));
}

void Vocab::save(const std::filesystem::path& path) const { write_lines(path, tokens_); }

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range(fmt::format("token id {} outside vocabulary of {}", id, tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw std::invalid_argument("unknown token '" + std::string(token) + "'");
  return it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

TokenSeq Vocab::encode(std::string_view line) const {
  TokenSeq out;
  for (const auto& t : split_tokens(line)) out.push_back(id(t));
  return out;
}

std::string Vocab::decode(std::span<const std::int32_t> ids) const {
  std::string out;
  for (auto id : ids) {
    if (is_special(id)) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& l : lines) os << l << '\n';
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

std::vector<TokenSeq> read_token_file(const std::filesystem::path& path, const Vocab& vocab) {
  std::vector<TokenSeq> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(vocab.encode(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(fmt::format("{}:{}: {}", path.string(), n, e.what()));
    }
  }
  return out;
}

}  // namespace hrt::corpus
