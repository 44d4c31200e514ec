#include "depanx/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include "depanx/error.hpp"
#include "depanx/hashing.hpp"

namespace depanx {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(unsigned char c) {
  return c < 0x80 && ((c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) ||
                      (c >= 0x5b && c <= 0x60) || (c >= 0x7b && c <= 0x7e));
}

bool is_word(unsigned char c) { return !is_space(c) && !is_punct(c) && c >= 0x20; }

constexpr std::array<std::string_view, 6> kClitics = {"'s", "'re", "'ve", "'ll", "'d", "'m"};

bool is_clitic(std::string_view s) {
  return std::find(kClitics.begin(), kClitics.end(), s) != kClitics.end();
}

// Length of a clitic that begins at s[pos] (an apostrophe) and runs to the
// end of the word, or 0.
std::size_t clitic_at(std::string_view s, std::size_t pos) {
  std::size_t end = pos + 1;
  while (end < s.size() && is_word(static_cast<unsigned char>(s[end]))) ++end;
  return is_clitic(s.substr(pos, end - pos)) ? end - pos : 0;
}

void split_clitics(std::string word, std::vector<std::string>& out) {
  std::vector<std::string> suffixes;
  for (;;) {
    if (word.size() > 3 && word.ends_with("n't")) {
      suffixes.emplace_back("n't");
      word.resize(word.size() - 3);
      continue;
    }
    bool split = false;
    for (auto clitic : kClitics) {
      if (word.size() > clitic.size() && word.ends_with(clitic)) {
        suffixes.emplace_back(clitic);
        word.resize(word.size() - clitic.size());
        split = true;
        break;
      }
    }
    if (!split) break;
  }
  out.push_back(std::move(word));
  out.insert(out.end(), suffixes.rbegin(), suffixes.rend());
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::string lower(text);
  for (auto& ch : lower) {
    if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
  }
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) split_clitics(std::move(word), out);
    word.clear();
  };
  const std::string_view s = lower;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_word(c)) {
      word.push_back(s[i]);
    } else if (c == '\'') {
      const bool prev_word = !word.empty();
      const bool next_word = i + 1 < s.size() && is_word(static_cast<unsigned char>(s[i + 1]));
      if (prev_word && next_word) {
        word.push_back('\'');
      } else if (!prev_word && next_word && clitic_at(s, i) > 0) {
        word.push_back('\'');
      } else {
        flush();
        out.emplace_back("'");
      }
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, s[i]);
    } else {
      flush();  // whitespace and control bytes
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary()
    : Vocabulary(std::vector<std::string>{std::string(kPadToken), std::string(kUnkToken),
                                          std::string(kBosToken), std::string(kSepToken)}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::vector<std::int64_t> frequencies)
    : tokens_(std::move(tokens)), freq_(std::move(frequencies)) {
  const std::array<std::string_view, kReserved> reserved = {kPadToken, kUnkToken, kBosToken,
                                                            kSepToken};
  if (tokens_.size() < kReserved) {
    throw ValidationError("E_VOCAB", "vocabulary lacks reserved tokens");
  }
  for (std::size_t i = 0; i < kReserved; ++i) {
    if (tokens_[i] != reserved[i]) {
      throw ValidationError("E_VOCAB", "reserved token mismatch at id " + std::to_string(i));
    }
  }
  if (!freq_.empty() && freq_.size() != tokens_.size()) {
    throw ValidationError("E_VOCAB", "frequency table size mismatch");
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw ValidationError("E_VOCAB", "empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("E_VOCAB", "duplicate token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ValidationError("E_TOKEN_ID", "token id " + std::to_string(id) + " out of range [0," +
                                            std::to_string(tokens_.size()) + ")");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id_of(t));
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token_of(id));
  return out;
}

std::string Vocabulary::content_hash() const {
  std::string joined;
  for (const auto& t : tokens_) {
    joined += t;
    joined.push_back('\n');
  }
  return sha256_hex(joined);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string body;
  for (const auto& t : tokens_) {
    body += t;
    body.push_back('\n');
  }
  write_file_atomic(path, body);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeError("E_IO", "cannot open vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

void count_tokens(std::string_view text, std::map<std::string, std::int64_t>& counts) {
  for (auto& t : tokenize(text)) ++counts[std::move(t)];
}

void count_tokens(std::span<const std::string> tokens, std::map<std::string, std::int64_t>& counts) {
  for (const auto& t : tokens) ++counts[t];
}

Vocabulary build_vocab(const std::map<std::string, std::int64_t>& counts,
                       std::int64_t min_freq, std::size_t max_size) {
  if (max_size < Vocabulary::kReserved) {
    throw ValidationError("E_VOCAB_SIZE", "max_size " + std::to_string(max_size) +
                                              " is smaller than the 4 reserved tokens");
  }
  if (counts.empty()) throw ValidationError("E_VOCAB_EMPTY", "cannot build a vocabulary from no tokens");
  std::vector<std::pair<std::string, std::int64_t>> ranked;
  for (const auto& [tok, n] : counts) {
    if (n >= min_freq) ranked.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic, so a stable sort by count
  // keeps the tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = {std::string(kPadToken), std::string(kUnkToken),
                                     std::string(kBosToken), std::string(kSepToken)};
  std::vector<std::int64_t> freq(Vocabulary::kReserved, 0);
  for (auto& [tok, n] : ranked) {
    if (tokens.size() >= max_size) break;
    if (tok == kPadToken || tok == kUnkToken || tok == kBosToken || tok == kSepToken) continue;
    tokens.push_back(tok);
    freq.push_back(n);
  }
  return Vocabulary(std::move(tokens), std::move(freq));
}

}  // namespace depanx
