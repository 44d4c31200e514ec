#include "depanx/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>

#include "depanx/analysis.hpp"
#include "depanx/error.hpp"
#include "depanx/hashing.hpp"
#include "depanx/random.hpp"
#include "depanx/report.hpp"
#include "depanx/variability.hpp"

namespace depanx {
namespace {

template <class T>
void read_key(const nlohmann::ordered_json& j, const char* section, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("E_CONFIG", std::string(section) + "." + key + " has the wrong type");
    }
  }
}

void reject_unknown(const nlohmann::ordered_json& j, const char* section, const std::set<std::string>& known) {
  if (!j.is_object()) throw ValidationError("E_CONFIG", std::string(section) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) {
      throw ValidationError("E_CONFIG", std::string("unknown key '") + k + "' in " + section);
    }
  }
}

SynthConfig generic_default(const SynthConfig& corpus) {
  SynthConfig g = corpus;
  g.cue_rate = 0.0;
  return g;
}

std::string artifact_key(const std::filesystem::path& root, const std::filesystem::path& p) {
  return p.lexically_relative(root).generic_string();
}

void require(const std::filesystem::path& path, Stage needed_from, Stage current) {
  if (!std::filesystem::exists(path)) {
    throw RuntimeError("E_PREREQUISITE", "stage '" + std::string(to_string(current)) + "' needs " +
                                             path.string() + "; run stage '" +
                                             std::string(to_string(needed_from)) + "' first");
  }
}

std::vector<const Session*> pointers(const Corpus& c) {
  std::vector<const Session*> out;
  for (const auto& s : c.sessions) out.push_back(&s);
  return out;
}

}  // namespace

void to_json(nlohmann::ordered_json& j, const PipelineConfig& c) {
  nlohmann::ordered_json lm = c.lm;
  lm.erase("vocab_size");
  nlohmann::ordered_json eval = {
      {"regression", c.eval.regression},
      {"min_population", c.eval.min_population},
      {"bucket_threshold", c.eval.bucket_threshold == BucketThreshold::Eer ? "eer" : "half"},
      {"rebalance_prior", c.eval.rebalance_prior ? nlohmann::ordered_json(*c.eval.rebalance_prior)
                                                 : nlohmann::ordered_json(nullptr)},
      {"dump_traces", c.eval.dump_traces},
  };
  j = nlohmann::ordered_json{
      {"corpus", c.corpus},
      {"generic_corpus", c.generic_corpus},
      {"tokenizer", {{"min_freq", c.tokenizer.min_freq}, {"max_size", c.tokenizer.max_size}}},
      {"lm", lm},
      {"pretrain_epochs", c.pretrain_epochs},
      {"adapt_epochs", c.adapt_epochs},
      {"finetune", c.finetune},
      {"eval", eval},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
  };
}

void from_json(const nlohmann::ordered_json& j, PipelineConfig& c) {
  reject_unknown(j, "config", {"corpus", "generic_corpus", "tokenizer", "lm", "pretrain_epochs", "adapt_epochs",
                               "finetune", "eval", "seed", "out_dir"});
  if (auto it = j.find("corpus"); it != j.end()) c.corpus = it->get<SynthConfig>();
  c.generic_corpus = generic_default(c.corpus);
  if (auto it = j.find("generic_corpus"); it != j.end()) from_json(*it, c.generic_corpus);
  if (auto it = j.find("tokenizer"); it != j.end()) {
    reject_unknown(*it, "tokenizer", {"min_freq", "max_size"});
    read_key(*it, "tokenizer", "min_freq", c.tokenizer.min_freq);
    read_key(*it, "tokenizer", "max_size", c.tokenizer.max_size);
  }
  if (auto it = j.find("lm"); it != j.end()) {
    if (it->is_object() && it->contains("vocab_size")) {
      throw ValidationError("E_CONFIG", "lm.vocab_size is set from the built vocabulary");
    }
    from_json(*it, c.lm);
  }
  read_key(j, "config", "pretrain_epochs", c.pretrain_epochs);
  read_key(j, "config", "adapt_epochs", c.adapt_epochs);
  if (auto it = j.find("finetune"); it != j.end()) from_json(*it, c.finetune);
  if (auto it = j.find("eval"); it != j.end()) {
    reject_unknown(*it, "eval", {"regression", "min_population", "bucket_threshold", "rebalance_prior", "dump_traces"});
    read_key(*it, "eval", "regression", c.eval.regression);
    read_key(*it, "eval", "min_population", c.eval.min_population);
    read_key(*it, "eval", "dump_traces", c.eval.dump_traces);
    if (auto b = it->find("bucket_threshold"); b != it->end()) {
      const auto v = b->is_string() ? b->get<std::string>() : "";
      if (v == "eer") {
        c.eval.bucket_threshold = BucketThreshold::Eer;
      } else if (v == "half") {
        c.eval.bucket_threshold = BucketThreshold::Half;
      } else {
        throw ValidationError("E_CONFIG", "eval.bucket_threshold must be eer or half");
      }
    }
    if (auto p = it->find("rebalance_prior"); p != it->end() && !p->is_null()) {
      double v = 0;
      read_key(*it, "eval", "rebalance_prior", v);
      c.eval.rebalance_prior = v;
    }
  }
  read_key(j, "config", "seed", c.seed);
  read_key(j, "config", "out_dir", c.out_dir);
}

void PipelineConfig::validate() const {
  corpus.validate();
  generic_corpus.validate();
  if (tokenizer.min_freq < 1) throw ValidationError("E_CONFIG", "tokenizer.min_freq must be >= 1");
  if (tokenizer.max_size <= Vocabulary::kReserved) {
    throw ValidationError("E_CONFIG", "tokenizer.max_size must exceed the reserved tokens");
  }
  LMConfig probe = lm;
  probe.vocab_size = static_cast<int>(tokenizer.max_size);
  probe.validate();
  if (pretrain_epochs < 0 || adapt_epochs < 0) throw ValidationError("E_CONFIG", "epochs must be >= 0");
  finetune.validate();
  if (eval.min_population < 0) throw ValidationError("E_CONFIG", "eval.min_population must be >= 0");
  if (eval.rebalance_prior && !(*eval.rebalance_prior > 0 && *eval.rebalance_prior < 1)) {
    throw ValidationError("E_CONFIG", "eval.rebalance_prior must lie in (0,1)");
  }
  if (out_dir.empty()) throw ValidationError("E_CONFIG", "out_dir must not be empty");
}

std::string PipelineConfig::content_hash() const {
  nlohmann::ordered_json j = *this;
  j.erase("out_dir");
  return sha256_hex(j.dump());
}

PipelineConfig PipelineConfig::from_json_text(std::string_view text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("E_CONFIG", std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c = j.get<PipelineConfig>();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError("E_CONFIG", "config file " + path.string() + " not found");
  return from_json_text(read_file(path));
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::GenData: return "gen-data";
    case Stage::BuildVocab: return "build-vocab";
    case Stage::Pretrain: return "pretrain";
    case Stage::Adapt: return "adapt";
    case Stage::Finetune: return "finetune";
    case Stage::Eval: return "eval";
    case Stage::Analyze: return "analyze";
    case Stage::Variability: return "variability";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : all_stages()) {
    if (to_string(st) == s) return st;
  }
  throw ValidationError("E_STAGE", "unknown stage '" + std::string(s) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {Stage::GenData, Stage::BuildVocab, Stage::Pretrain, Stage::Adapt,
                                            Stage::Finetune, Stage::Eval, Stage::Analyze, Stage::Variability};
  return stages;
}

std::filesystem::path ArtifactLayout::classifier(Condition c, HeadMode m) const {
  return root / "models" / (std::string(to_string(c)) + "_" + std::string(to_string(m)) + ".ehlm");
}

nlohmann::ordered_json RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["tool_version"] = tool_version;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["inputs"] = inputs;
  auto& st = j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages) {
    nlohmann::ordered_json e;
    e["name"] = s.name;
    e["seconds"] = s.seconds;
    auto& outs = e["outputs"] = nlohmann::ordered_json::array();
    for (const auto& [path, hash] : s.outputs) outs.push_back({{"path", path}, {"sha256", hash}});
    st.push_back(std::move(e));
  }
  return j;
}

std::map<std::string, std::string> RunManifest::output_hashes() const {
  std::map<std::string, std::string> out;
  for (const auto& s : stages) {
    for (const auto& [path, hash] : s.outputs) out[path] = hash;
  }
  return out;
}

Corpus make_corpus(const SynthConfig& config, std::uint64_t seed, bool generic, unsigned threads) {
  if (!generic) return generate_synthetic(config, derive_seed(seed, "corpus"), threads);
  // Pretraining text has no held-out part.
  SynthConfig g = config;
  g.test_fraction = 0.0;
  return generate_synthetic(g, derive_seed(seed, "generic_corpus"), threads);
}

Vocabulary build_corpus_vocab(std::span<const Session* const> sessions, const TokenizerConfig& config) {
  std::map<std::string, std::int64_t> counts;
  for (const auto* s : sessions) count_tokens(session_tokens(*s), counts);
  return build_vocab(counts, config.min_freq, config.max_size);
}

ModelCheckpoint pretrain_lm(const LMConfig& config, const Vocabulary& vocab, const Corpus& corpus, int epochs,
                            std::uint64_t seed) {
  const auto init = init_checkpoint(config, vocab, derive_seed(seed, "pretrain.init"));
  return train_lm(init, lm_stream(corpus, vocab), epochs, derive_seed(seed, "pretrain")).checkpoint;
}

ModelCheckpoint adapt_lm(const ModelCheckpoint& init, const Corpus& corpus, int epochs, std::uint64_t seed) {
  const auto train = corpus.split(Split::Train);
  return train_lm(init, lm_stream(train, init.vocab), epochs, derive_seed(seed, "adapt")).checkpoint;
}

std::uint64_t finetune_seed(std::uint64_t seed, Condition c, HeadMode m) {
  return derive_seed(seed, "finetune." + std::string(to_string(c)) + "." + std::string(to_string(m)));
}

std::vector<EvalReport> evaluate_condition(const PredictionModel& binary, const PredictionModel* regression,
                                           std::span<const Session* const> sessions, const EvalConfig& config,
                                           std::uint64_t seed, unsigned threads) {
  const auto scores = predict_sessions(binary, sessions, threads);
  std::vector<EvalReport> out;
  for (Subset subset : {Subset::All, Subset::JointOnly, Subset::JointRebalanced}) {
    SubsetSpec spec{subset, config.rebalance_prior,
                    derive_seed(seed, "eval.rebalance", static_cast<std::uint64_t>(binary.condition))};
    out.push_back(evaluate_scores(scores, sessions, binary.condition, spec, false, config.bucket_threshold));
  }
  if (regression) {
    const auto est = predict_sessions(*regression, sessions, threads);
    std::vector<int> raw;
    for (const auto* s : sessions) raw.push_back(s->score(binary.condition));
    out.front().rmse = rmse(est, raw);
  }
  return out;
}

RunManifest run_pipeline(const PipelineConfig& config, std::span<const Stage> requested, unsigned threads,
                         std::ostream* log) {
  config.validate();
  std::vector<Stage> stages(requested.begin(), requested.end());
  std::sort(stages.begin(), stages.end());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

  const ArtifactLayout at{config.out_dir};
  const std::filesystem::path root = at.root;
  RunManifest manifest;
  manifest.tool_version = std::string(kToolVersion);
  manifest.config_hash = config.content_hash();
  manifest.seed = config.seed;

  const std::vector<Condition> conditions = {Condition::Phq, Condition::Gad};
  std::vector<HeadMode> modes = {HeadMode::Binary};
  if (config.eval.regression) modes.push_back(HeadMode::Regression);

  auto note_input = [&](const std::filesystem::path& p) {
    const auto key = artifact_key(root, p);
    // Artifacts produced earlier in this same run are outputs, not inputs.
    for (const auto& s : manifest.stages) {
      for (const auto& o : s.outputs) {
        if (o.first == key) return;
      }
    }
    manifest.inputs[key] = sha256_file(p);
  };

  for (Stage stage : stages) {
    const auto start = std::chrono::steady_clock::now();
    if (log) *log << "[" << to_string(stage) << "] running\n" << std::flush;
    std::vector<std::filesystem::path> outputs;

    switch (stage) {
      case Stage::GenData: {
        const auto corpus = make_corpus(config.corpus, config.seed, false, threads);
        save_jsonl(corpus, at.corpus());
        const auto generic = make_corpus(config.generic_corpus, config.seed, true, threads);
        save_jsonl(generic, at.generic_corpus());
        outputs = {at.corpus(), at.generic_corpus()};
        break;
      }
      case Stage::BuildVocab: {
        require(at.corpus(), Stage::GenData, stage);
        require(at.generic_corpus(), Stage::GenData, stage);
        note_input(at.corpus());
        note_input(at.generic_corpus());
        const auto corpus = load_jsonl(at.corpus());
        const auto generic = load_jsonl(at.generic_corpus());
        auto sessions = corpus.split(Split::Train);
        for (const auto& s : generic.sessions) sessions.push_back(&s);
        build_corpus_vocab(sessions, config.tokenizer).save(at.vocab());
        outputs = {at.vocab()};
        break;
      }
      case Stage::Pretrain: {
        require(at.vocab(), Stage::BuildVocab, stage);
        require(at.generic_corpus(), Stage::GenData, stage);
        note_input(at.vocab());
        note_input(at.generic_corpus());
        const auto vocab = Vocabulary::load(at.vocab());
        pretrain_lm(config.lm, vocab, load_jsonl(at.generic_corpus()), config.pretrain_epochs, config.seed)
            .save(at.generic_lm());
        outputs = {at.generic_lm()};
        break;
      }
      case Stage::Adapt: {
        require(at.generic_lm(), Stage::Pretrain, stage);
        require(at.corpus(), Stage::GenData, stage);
        note_input(at.generic_lm());
        note_input(at.corpus());
        adapt_lm(ModelCheckpoint::load(at.generic_lm()), load_jsonl(at.corpus()), config.adapt_epochs, config.seed)
            .save(at.adapted_lm());
        outputs = {at.adapted_lm()};
        break;
      }
      case Stage::Finetune: {
        require(at.adapted_lm(), Stage::Adapt, stage);
        require(at.corpus(), Stage::GenData, stage);
        note_input(at.adapted_lm());
        note_input(at.corpus());
        const auto adapted = ModelCheckpoint::load(at.adapted_lm());
        if (std::filesystem::exists(at.vocab())) {
          require_vocab_hash(adapted.vocab, Vocabulary::load(at.vocab()).content_hash());
        }
        const auto corpus = load_jsonl(at.corpus());
        for (Condition c : conditions) {
          for (HeadMode m : modes) {
            if (log) *log << "[finetune] " << to_string(c) << " " << to_string(m) << "\n" << std::flush;
            train_classifier(adapted, corpus, c, m, config.finetune, finetune_seed(config.seed, c, m), threads)
                .model.save(at.classifier(c, m));
            outputs.push_back(at.classifier(c, m));
          }
        }
        break;
      }
      case Stage::Eval: {
        require(at.corpus(), Stage::GenData, stage);
        for (Condition c : conditions) {
          for (HeadMode m : modes) require(at.classifier(c, m), Stage::Finetune, stage);
        }
        note_input(at.corpus());
        const auto corpus = load_jsonl(at.corpus());
        const auto test = corpus.split(Split::Test);
        std::vector<EvalReport> reports, all_subset;
        for (Condition c : conditions) {
          note_input(at.classifier(c, HeadMode::Binary));
          const auto binary = PredictionModel::load(at.classifier(c, HeadMode::Binary));
          std::optional<PredictionModel> reg;
          if (config.eval.regression) {
            note_input(at.classifier(c, HeadMode::Regression));
            reg = PredictionModel::load(at.classifier(c, HeadMode::Regression));
          }
          auto r = evaluate_condition(binary, reg ? &*reg : nullptr, test, config.eval, config.seed, threads);
          all_subset.push_back(r.front());
          reports.insert(reports.end(), r.begin(), r.end());
        }
        const auto eval_path = at.reports() / "eval.csv";
        const auto acc_path = at.reports() / "accuracy_by_score.csv";
        const auto plot_path = at.plots() / "accuracy_by_score.svg";
        write_report(eval_path, eval_csv(reports));
        write_report(acc_path, accuracy_csv(all_subset, config.eval.min_population));
        write_report(plot_path, accuracy_svg(all_subset, config.eval.min_population));
        outputs = {eval_path, acc_path, plot_path};
        break;
      }
      case Stage::Analyze: {
        require(at.corpus(), Stage::GenData, stage);
        note_input(at.corpus());
        const auto corpus = load_jsonl(at.corpus());
        std::vector<ScorePair> test_pairs;
        for (const auto* s : corpus.split(Split::Test)) test_pairs.push_back({s->phq8, s->gad7});
        const auto quad_path = at.reports() / "quadrants.csv";
        std::string quad = quadrant_csv(quadrants(score_pairs(corpus)), "all");
        if (!test_pairs.empty()) {
          const auto test_csv = quadrant_csv(quadrants(test_pairs), "test");
          quad += test_csv.substr(test_csv.find('\n') + 1);
        }
        write_report(quad_path, quad);
        const auto matrix = JointCountMatrix::from_corpus(corpus);
        const auto matrix_path = at.reports() / "joint_counts.csv";
        const auto marg_path = at.reports() / "marginals.csv";
        const auto corr_path = at.reports() / "correlation.csv";
        const auto heat_path = at.plots() / "joint_heatmap.svg";
        const auto marg_plot = at.plots() / "marginals.svg";
        write_report(matrix_path, matrix_csv(matrix));
        write_report(marg_path, marginals_csv(matrix));
        write_report(corr_path, "pearson\n" + format_number(pearson_from_matrix(matrix)) + "\n");
        write_report(heat_path, heatmap_svg(matrix));
        write_report(marg_plot, marginals_svg(matrix));
        outputs = {quad_path, matrix_path, marg_path, corr_path, heat_path, marg_plot};
        break;
      }
      case Stage::Variability: {
        require(at.corpus(), Stage::GenData, stage);
        for (Condition c : conditions) require(at.classifier(c, HeadMode::Binary), Stage::Finetune, stage);
        note_input(at.corpus());
        const auto corpus = load_jsonl(at.corpus());
        const auto test = corpus.split(Split::Test);
        std::vector<VariabilityTable> tables;
        for (Condition c : conditions) {
          note_input(at.classifier(c, HeadMode::Binary));
          const auto model = PredictionModel::load(at.classifier(c, HeadMode::Binary));
          std::vector<PredictionTrace> traces;
          tables.push_back(variability_by_quadrant(model, test, threads, config.eval.dump_traces ? &traces : nullptr));
          if (config.eval.dump_traces) {
            const auto trace_path = at.reports() / ("traces_" + std::string(to_string(c)) + ".csv");
            write_report(trace_path, trace_csv(traces));
            outputs.push_back(trace_path);
          }
        }
        const auto var_path = at.reports() / "variability.csv";
        write_report(var_path, variability_csv(tables));
        outputs.push_back(var_path);
        break;
      }
    }

    StageRecord rec;
    rec.name = std::string(to_string(stage));
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    for (const auto& p : outputs) rec.outputs.emplace_back(artifact_key(root, p), sha256_file(p));
    if (log) *log << "[" << rec.name << "] done in " << format_number(rec.seconds, 1) << " s\n" << std::flush;
    manifest.stages.push_back(std::move(rec));
  }
  write_file_atomic(at.manifest(), manifest.to_json().dump(2) + "\n");
  return manifest;
}

}  // namespace depanx
