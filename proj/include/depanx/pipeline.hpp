#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "depanx/finetune.hpp"
#include "depanx/metrics.hpp"
#include "depanx/synth.hpp"

namespace depanx {

inline constexpr std::string_view kToolVersion = "0.1.0";

struct TokenizerConfig {
  std::int64_t min_freq = 2;
  std::size_t max_size = 5000;
  bool operator==(const TokenizerConfig&) const = default;
};

struct EvalConfig {
  /// Also fine-tune regression heads; their RMSE fills the "all" rows.
  bool regression = true;
  std::int64_t min_population = 5;
  BucketThreshold bucket_threshold = BucketThreshold::Eer;
  /// Prior for the rebalanced joint subset; defaults to the test split's.
  std::optional<double> rebalance_prior;
  bool dump_traces = false;
  bool operator==(const EvalConfig&) const = default;
};

struct PipelineConfig {
  SynthConfig corpus;
  /// Generic pretraining text; defaults to the corpus settings without cues.
  SynthConfig generic_corpus;
  TokenizerConfig tokenizer;
  LMConfig lm;
  int pretrain_epochs = 4;
  int adapt_epochs = 4;
  FinetuneConfig finetune;
  EvalConfig eval;
  std::uint64_t seed = 1;
  std::string out_dir = "out";

  void validate() const;
  /// SHA-256 of the normalized JSON form, excluding out_dir.
  std::string content_hash() const;

  static PipelineConfig from_json_text(std::string_view text);
  static PipelineConfig load(const std::filesystem::path& path);
};

void to_json(nlohmann::ordered_json& j, const PipelineConfig& c);
/// Strict: unknown keys at any level are rejected.
void from_json(const nlohmann::ordered_json& j, PipelineConfig& c);

enum class Stage { GenData, BuildVocab, Pretrain, Adapt, Finetune, Eval, Analyze, Variability };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);
const std::vector<Stage>& all_stages();

/// Where each stage reads and writes, relative to the output directory.
struct ArtifactLayout {
  std::filesystem::path root;

  std::filesystem::path corpus() const { return root / "data" / "corpus.jsonl"; }
  std::filesystem::path generic_corpus() const { return root / "data" / "generic.jsonl"; }
  std::filesystem::path vocab() const { return root / "vocab.txt"; }
  std::filesystem::path generic_lm() const { return root / "models" / "generic_lm.ehlm"; }
  std::filesystem::path adapted_lm() const { return root / "models" / "adapted_lm.ehlm"; }
  std::filesystem::path classifier(Condition c, HeadMode m) const;
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path plots() const { return root / "plots"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

struct StageRecord {
  std::string name;
  double seconds = 0;
  std::vector<std::pair<std::string, std::string>> outputs;  // relative path, sha256
};

struct RunManifest {
  std::string tool_version;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;  // relative path -> sha256
  std::vector<StageRecord> stages;

  nlohmann::ordered_json to_json() const;
  /// Output hashes only, for rerun comparisons.
  std::map<std::string, std::string> output_hashes() const;
};

/// Runs the requested stages in process order. Each stage reads the
/// artifacts of earlier stages from the output directory and fails with a
/// message naming the stage to run first when they are missing. The
/// manifest is written atomically at the end.
RunManifest run_pipeline(const PipelineConfig& config, std::span<const Stage> stages, unsigned threads = 1,
                         std::ostream* log = nullptr);

// Building blocks shared with the individual subcommands.

/// Generic corpora are generated with every session in the train split.
Corpus make_corpus(const SynthConfig& config, std::uint64_t seed, bool generic, unsigned threads = 1);
Vocabulary build_corpus_vocab(std::span<const Session* const> sessions, const TokenizerConfig& config);
ModelCheckpoint pretrain_lm(const LMConfig& config, const Vocabulary& vocab, const Corpus& corpus,
                            int epochs, std::uint64_t seed);
ModelCheckpoint adapt_lm(const ModelCheckpoint& init, const Corpus& corpus, int epochs, std::uint64_t seed);
std::uint64_t finetune_seed(std::uint64_t seed, Condition c, HeadMode m);

/// Binary-model reports for all, joint and joint-rebalanced subsets of the
/// sessions, with RMSE from the regression model on the "all" row.
std::vector<EvalReport> evaluate_condition(const PredictionModel& binary, const PredictionModel* regression,
                                           std::span<const Session* const> sessions,
                                           const EvalConfig& config, std::uint64_t seed,
                                           unsigned threads = 1);

}  // namespace depanx
