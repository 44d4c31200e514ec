#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace depanx {

using TokenId = std::int32_t;

/// Word-level tokenizer rules:
///  - ASCII letters are lowercased; bytes >= 0x80 pass through as word bytes.
///  - Whitespace separates chunks.
///  - Every ASCII punctuation character is a standalone token, except an
///    apostrophe that sits between two word characters or that opens a
///    known clitic ('s 're 've 'll 'd 'm).
///  - Clitics are split off the end of a word, "n't" included, repeatedly:
///    "can't" -> "ca" "n't", "i'm" -> "i" "'m".
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces. tokenize(detokenize(tokenize(t))) is
/// tokenize(t) for every input.
std::string detokenize(std::span<const std::string> tokens);

/// Bijective token <-> id map. Ids are dense; 0..3 are reserved.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kReserved = 4;

  /// Reserved tokens only.
  Vocabulary();
  /// Builds from an ordered token list; the first four must be the reserved
  /// tokens and no token may repeat.
  explicit Vocabulary(std::vector<std::string> tokens,
                      std::vector<std::int64_t> frequencies = {});

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  /// Corpus frequency per id (0 for reserved ids, empty for loaded vocabularies).
  const std::vector<std::int64_t>& frequencies() const noexcept { return freq_; }

  TokenId id_of(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token_of(TokenId id) const;  // throws on out-of-range

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const TokenId> ids) const;

  /// SHA-256 over the newline-joined token list.
  std::string content_hash() const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::int64_t> freq_;
  std::unordered_map<std::string, TokenId> index_;
};

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kSepToken = "<sep>";

/// Counts tokens, ranks by frequency (descending) with lexicographic
/// tie-break and keeps those with count >= min_freq, up to max_size ids
/// including the reserved ones.
Vocabulary build_vocab(const std::map<std::string, std::int64_t>& counts,
                       std::int64_t min_freq, std::size_t max_size);

void count_tokens(std::string_view text, std::map<std::string, std::int64_t>& counts);
/// Adds already-tokenized text to the counts.
void count_tokens(std::span<const std::string> tokens, std::map<std::string, std::int64_t>& counts);

}  // namespace depanx
