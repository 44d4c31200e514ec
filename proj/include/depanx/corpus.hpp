#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace depanx {

enum class Condition { Phq, Gad };
enum class Split { Train, Test };

std::string_view to_string(Condition c);
std::string_view to_string(Split s);
Condition parse_condition(std::string_view s);  // "phq" | "gad" (case-insensitive)
Split parse_split(std::string_view s);

inline constexpr int kPhqMax = 24;
inline constexpr int kGadMax = 21;
inline constexpr int kDefaultThreshold = 10;

constexpr int max_score(Condition c) { return c == Condition::Phq ? kPhqMax : kGadMax; }

struct BinaryLabel {
  Condition condition;
  bool positive;
  bool operator==(const BinaryLabel&) const = default;
};

/// Presence of a condition: raw score at or above the threshold.
BinaryLabel binarize(Condition condition, int score, int threshold = kDefaultThreshold);
bool is_positive(int score, int threshold = kDefaultThreshold);

struct Response {
  std::string prompt_id;
  std::string text;
  bool operator==(const Response&) const = default;
};

struct Session {
  std::string session_id;
  std::string speaker_id;
  Split split = Split::Train;
  std::vector<Response> responses;
  int phq8 = 0;
  int gad7 = 0;

  int score(Condition c) const { return c == Condition::Phq ? phq8 : gad7; }
  bool operator==(const Session&) const = default;
};

/// Generation provenance; absent for ingested corpora.
struct CorpusMetadata {
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  bool operator==(const CorpusMetadata&) const = default;
};

struct Corpus {
  std::vector<Session> sessions;
  std::optional<CorpusMetadata> metadata;

  std::vector<const Session*> split(Split which) const;
  bool operator==(const Corpus&) const = default;
};

/// Throws ValidationError when a session breaks a Session invariant.
void validate_session(const Session& session);

enum class ViolationKind { CrossSplit, RepeatInTest };

struct SplitViolation {
  std::string speaker_id;
  ViolationKind kind;
  bool operator==(const SplitViolation&) const = default;
};

std::string_view to_string(ViolationKind k);

/// Speaker-disjointness and repeat-speakers-in-train checks, sorted by
/// speaker id then kind.
std::vector<SplitViolation> validate_split(const Corpus& corpus);

/// Session text for modeling: responses in prompt order, each followed by
/// the separator token.
std::vector<std::string> session_tokens(const Session& session);

std::string session_to_jsonl(const Session& session);
std::string corpus_to_jsonl(const Corpus& corpus);

/// Writes `path` and, when metadata is present, `path` + ".meta.json".
void save_jsonl(const Corpus& corpus, const std::filesystem::path& path);

/// Parses the JSONL corpus format. Errors carry the 1-based line number.
/// An empty file yields an empty corpus and a warning.
Corpus load_jsonl(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr);
Corpus parse_jsonl(std::string_view text, std::vector<std::string>* warnings = nullptr);

}  // namespace depanx
