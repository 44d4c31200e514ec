#include "depanx/corpus.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "depanx/error.hpp"
#include "depanx/hashing.hpp"
#include "depanx/tokenizer.hpp"

namespace depanx {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

}  // namespace

std::string_view to_string(Condition c) { return c == Condition::Phq ? "phq" : "gad"; }
std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::string_view to_string(ViolationKind k) {
  return k == ViolationKind::CrossSplit ? "cross-split" : "repeat-in-test";
}

Condition parse_condition(std::string_view s) {
  const auto v = lower(s);
  if (v == "phq" || v == "phq8") return Condition::Phq;
  if (v == "gad" || v == "gad7") return Condition::Gad;
  throw ValidationError("E_CONDITION", "unknown condition '" + std::string(s) + "' (expected phq|gad)");
}

Split parse_split(std::string_view s) {
  const auto v = lower(s);
  if (v == "train") return Split::Train;
  if (v == "test") return Split::Test;
  throw ValidationError("E_SPLIT", "unknown split '" + std::string(s) + "' (expected train|test)");
}

bool is_positive(int score, int threshold) {
  if (score < 0) {
    throw ValidationError("E_SCORE_RANGE", "negative score " + std::to_string(score));
  }
  return score >= threshold;
}

BinaryLabel binarize(Condition condition, int score, int threshold) {
  return {condition, is_positive(score, threshold)};
}

std::vector<const Session*> Corpus::split(Split which) const {
  std::vector<const Session*> out;
  for (const auto& s : sessions) {
    if (s.split == which) out.push_back(&s);
  }
  return out;
}

void validate_session(const Session& s) {
  if (s.session_id.empty()) throw ValidationError("E_FIELD", "empty session_id");
  if (s.speaker_id.empty()) throw ValidationError("E_FIELD", "empty speaker_id in " + s.session_id);
  if (s.phq8 < 0 || s.phq8 > kPhqMax) {
    throw ValidationError("E_SCORE_RANGE", "field phq8=" + std::to_string(s.phq8) +
                                               " out of range [0,24] in " + s.session_id);
  }
  if (s.gad7 < 0 || s.gad7 > kGadMax) {
    throw ValidationError("E_SCORE_RANGE", "field gad7=" + std::to_string(s.gad7) +
                                               " out of range [0,21] in " + s.session_id);
  }
  if (s.responses.empty()) {
    throw ValidationError("E_FIELD", "field responses is empty in " + s.session_id);
  }
  for (std::size_t i = 0; i < s.responses.size(); ++i) {
    if (tokenize(s.responses[i].text).empty()) {
      throw ValidationError("E_FIELD", "response " + std::to_string(i) +
                                           " has no tokens in " + s.session_id);
    }
  }
}

std::vector<SplitViolation> validate_split(const Corpus& corpus) {
  struct SpeakerInfo {
    bool in_train = false;
    bool in_test = false;
    int sessions = 0;
  };
  std::map<std::string, SpeakerInfo> speakers;
  for (const auto& s : corpus.sessions) {
    auto& info = speakers[s.speaker_id];
    (s.split == Split::Train ? info.in_train : info.in_test) = true;
    ++info.sessions;
  }
  std::vector<SplitViolation> out;
  for (const auto& [id, info] : speakers) {
    if (info.in_train && info.in_test) out.push_back({id, ViolationKind::CrossSplit});
    if (info.sessions > 1 && info.in_test) out.push_back({id, ViolationKind::RepeatInTest});
  }
  return out;
}

std::vector<std::string> session_tokens(const Session& session) {
  std::vector<std::string> out;
  for (const auto& r : session.responses) {
    auto toks = tokenize(r.text);
    out.insert(out.end(), std::make_move_iterator(toks.begin()), std::make_move_iterator(toks.end()));
    out.emplace_back(kSepToken);
  }
  return out;
}

std::string session_to_jsonl(const Session& s) {
  nlohmann::ordered_json j;
  j["session_id"] = s.session_id;
  j["speaker_id"] = s.speaker_id;
  j["split"] = to_string(s.split);
  j["phq8"] = s.phq8;
  j["gad7"] = s.gad7;
  auto responses = nlohmann::ordered_json::array();
  for (const auto& r : s.responses) {
    nlohmann::ordered_json rj;
    rj["prompt_id"] = r.prompt_id;
    rj["text"] = r.text;
    responses.push_back(std::move(rj));
  }
  j["responses"] = std::move(responses);
  return j.dump();
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sessions) {
    out += session_to_jsonl(s);
    out.push_back('\n');
  }
  return out;
}

void save_jsonl(const Corpus& corpus, const std::filesystem::path& path) {
  write_file_atomic(path, corpus_to_jsonl(corpus));
  auto meta_path = path;
  meta_path += ".meta.json";
  if (corpus.metadata) {
    nlohmann::ordered_json meta;
    meta["seed"] = corpus.metadata->seed;
    meta["config"] = corpus.metadata->config;
    write_file_atomic(meta_path, meta.dump(2) + "\n");
  } else {
    std::filesystem::remove(meta_path);
  }
}

namespace {

template <class T>
T field(const nlohmann::json& j, const char* name, std::size_t line) {
  auto it = j.find(name);
  if (it == j.end()) {
    throw ValidationError("E_FIELD", "line " + std::to_string(line) + ": missing field " + name);
  }
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("E_FIELD", "line " + std::to_string(line) + ": field " + name +
                                         " has the wrong type");
  }
}

}  // namespace

Corpus parse_jsonl(std::string_view text, std::vector<std::string>* warnings) {
  Corpus corpus;
  std::set<std::string> seen_ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("E_JSONL_PARSE", "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) {
      throw ValidationError("E_JSONL_PARSE", "line " + std::to_string(line_no) + ": not an object");
    }
    Session s;
    s.session_id = field<std::string>(j, "session_id", line_no);
    s.speaker_id = field<std::string>(j, "speaker_id", line_no);
    try {
      s.split = parse_split(field<std::string>(j, "split", line_no));
    } catch (const ValidationError& e) {
      throw ValidationError(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
    s.phq8 = field<int>(j, "phq8", line_no);
    s.gad7 = field<int>(j, "gad7", line_no);
    if (s.phq8 < 0 || s.phq8 > kPhqMax) {
      throw ValidationError("E_SCORE_RANGE", "line " + std::to_string(line_no) + ": field phq8=" +
                                                 std::to_string(s.phq8) + " out of range [0,24]");
    }
    if (s.gad7 < 0 || s.gad7 > kGadMax) {
      throw ValidationError("E_SCORE_RANGE", "line " + std::to_string(line_no) + ": field gad7=" +
                                                 std::to_string(s.gad7) + " out of range [0,21]");
    }
    const auto& responses = j.find("responses");
    if (responses == j.end() || !responses->is_array()) {
      throw ValidationError("E_FIELD", "line " + std::to_string(line_no) + ": missing field responses");
    }
    for (const auto& r : *responses) {
      if (!r.is_object()) {
        throw ValidationError("E_FIELD", "line " + std::to_string(line_no) + ": malformed response");
      }
      s.responses.push_back({field<std::string>(r, "prompt_id", line_no),
                             field<std::string>(r, "text", line_no)});
    }
    try {
      validate_session(s);
    } catch (const ValidationError& e) {
      throw ValidationError(e.code(), "line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(s.session_id).second) {
      throw ValidationError("E_DUPLICATE", "line " + std::to_string(line_no) +
                                               ": duplicate session_id " + s.session_id);
    }
    corpus.sessions.push_back(std::move(s));
  }
  if (corpus.sessions.empty() && warnings) warnings->push_back("corpus is empty");
  return corpus;
}

Corpus load_jsonl(const std::filesystem::path& path, std::vector<std::string>* warnings) {
  Corpus corpus = parse_jsonl(read_file(path), warnings);
  auto meta_path = path;
  meta_path += ".meta.json";
  if (std::filesystem::exists(meta_path)) {
    auto meta = nlohmann::ordered_json::parse(read_file(meta_path));
    corpus.metadata = CorpusMetadata{meta.at("config"), meta.at("seed").get<std::uint64_t>()};
  }
  return corpus;
}

}  // namespace depanx
