// Command-line entry point: individual stages and the whole pipeline.

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <sstream>

#include "depanx/analysis.hpp"
#include "depanx/error.hpp"
#include "depanx/hashing.hpp"
#include "depanx/pipeline.hpp"
#include "depanx/random.hpp"
#include "depanx/report.hpp"
#include "depanx/variability.hpp"

using namespace depanx;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::string out_dir;
};

PipelineConfig resolve(const Globals& g) {
  PipelineConfig c;
  if (!g.config_path.empty()) c = PipelineConfig::load(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out_dir.empty()) c.out_dir = g.out_dir;
  c.validate();
  return c;
}

std::vector<const Session*> select_split(const Corpus& corpus, const std::string& which) {
  if (which == "all") {
    std::vector<const Session*> out;
    for (const auto& s : corpus.sessions) out.push_back(&s);
    return out;
  }
  return corpus.split(parse_split(which));
}

Corpus load_corpus(const std::string& path) {
  std::vector<std::string> warnings;
  auto corpus = load_jsonl(path, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return corpus;
}

void check_condition(const PredictionModel& model, const std::string& requested) {
  if (!requested.empty() && parse_condition(requested) != model.condition) {
    throw ValidationError("E_CONDITION", "model was trained for " + std::string(to_string(model.condition)) +
                                             ", not " + requested);
  }
}

int fail(const Error& e) {
  std::string msg = e.what();
  std::replace(msg.begin(), msg.end(), '\n', ' ');
  std::cerr << "error: " << e.code() << ": " << msg << "\n";
  return e.kind() == ErrorKind::Validation ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depression and anxiety screening models from session text"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "Pipeline config (JSON)")->envname("DEPANX_CONFIG");
  app.add_option("--seed", g.seed, "Master seed")->envname("DEPANX_SEED");
  app.add_option("--threads", g.threads, "Worker threads (results do not depend on it)")
      ->envname("DEPANX_THREADS")
      ->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory")->envname("DEPANX_OUT_DIR");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  std::string gen_out;
  bool gen_generic = false;
  gen->add_option("--out", gen_out, "Output JSONL (default <out-dir>/data/corpus.jsonl)");
  gen->add_flag("--generic", gen_generic, "Generate the generic pretraining corpus instead");

  // validate
  auto* val = app.add_subcommand("validate", "Check a corpus file and its speaker splits");
  std::string val_corpus;
  val->add_option("--corpus", val_corpus, "Corpus JSONL")->required();

  // build-vocab
  auto* voc = app.add_subcommand("build-vocab", "Build the vocabulary from training text");
  std::vector<std::string> voc_corpora;
  std::string voc_out;
  std::optional<std::int64_t> voc_min_freq;
  std::optional<std::size_t> voc_max_size;
  voc->add_option("--corpus", voc_corpora, "Corpus JSONL (repeatable; train split is used)")->required();
  voc->add_option("--out", voc_out, "Vocabulary file (default <out-dir>/vocab.txt)");
  voc->add_option("--min-freq", voc_min_freq, "Minimum token count");
  voc->add_option("--max-size", voc_max_size, "Maximum vocabulary size including reserved ids");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Train the generic language model");
  std::string pre_corpus, pre_vocab, pre_out;
  std::optional<int> pre_epochs;
  pre->add_option("--corpus", pre_corpus, "Generic corpus JSONL")->required();
  pre->add_option("--vocab", pre_vocab, "Vocabulary file")->required();
  pre->add_option("--out", pre_out, "Checkpoint (default <out-dir>/models/generic_lm.ehlm)");
  pre->add_option("--epochs", pre_epochs, "Epochs (default from config)");

  // adapt
  auto* ada = app.add_subcommand("adapt", "Continue language-model training on domain text");
  std::string ada_init, ada_corpus, ada_out;
  std::optional<int> ada_epochs;
  ada->add_option("--init", ada_init, "Generic checkpoint")->required();
  ada->add_option("--corpus", ada_corpus, "Domain corpus JSONL (train split is used)")->required();
  ada->add_option("--out", ada_out, "Checkpoint (default <out-dir>/models/adapted_lm.ehlm)");
  ada->add_option("--epochs", ada_epochs, "Epochs (default from config)");

  // finetune
  auto* fin = app.add_subcommand("finetune", "Train a classifier or regressor for one condition");
  std::string fin_init, fin_corpus, fin_out, fin_condition, fin_mode = "binary", fin_vocab;
  fin->add_option("--init", fin_init, "Adapted checkpoint")->required();
  fin->add_option("--corpus", fin_corpus, "Corpus JSONL (train split is used)")->required();
  fin->add_option("--condition", fin_condition, "phq | gad")->required();
  fin->add_option("--mode", fin_mode, "binary | regression");
  fin->add_option("--vocab", fin_vocab, "Vocabulary file the corpus was prepared with");
  fin->add_option("--out", fin_out, "Prediction model (default <out-dir>/models/<condition>_<mode>.ehlm)");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a prediction model");
  std::string ev_model, ev_corpus, ev_condition, ev_subset = "all", ev_report, ev_plot, ev_accuracy,
                                                ev_split = "test", ev_regression, ev_bucket = "eer";
  std::optional<double> ev_prior;
  ev->add_option("--model", ev_model, "Binary prediction model")->required();
  ev->add_option("--corpus", ev_corpus, "Corpus JSONL")->required();
  ev->add_option("--condition", ev_condition, "phq | gad (must match the model)");
  ev->add_option("--subset", ev_subset, "all | joint | joint-rebalanced");
  ev->add_option("--prior", ev_prior, "Target positive prior for joint-rebalanced");
  ev->add_option("--split", ev_split, "test | train | all");
  ev->add_option("--regression-model", ev_regression, "Regression model for RMSE");
  ev->add_option("--bucket-threshold", ev_bucket, "eer | half");
  ev->add_option("--report", ev_report, "Evaluation CSV");
  ev->add_option("--accuracy", ev_accuracy, "Accuracy-by-score CSV");
  ev->add_option("--plot", ev_plot, "Accuracy-by-score SVG");

  // analyze
  auto* ana = app.add_subcommand("analyze", "Label statistics of a corpus");
  std::string ana_corpus;
  ana->add_option("--corpus", ana_corpus, "Corpus JSONL")->required();

  // variability
  auto* var = app.add_subcommand("variability", "Within-session variability of gated predictions");
  std::string var_model, var_corpus, var_condition, var_out, var_traces, var_split = "test";
  var->add_option("--model", var_model, "Binary prediction model")->required();
  var->add_option("--corpus", var_corpus, "Corpus JSONL")->required();
  var->add_option("--condition", var_condition, "phq | gad (must match the model)");
  var->add_option("--split", var_split, "test | train | all");
  var->add_option("--out", var_out, "Variability CSV")->required();
  var->add_option("--traces", var_traces, "Trace CSV (session_id, position, score)");

  // ingest-matrix
  auto* ing = app.add_subcommand("ingest-matrix", "Load a printed joint-count matrix");
  std::string ing_csv, ing_orientation = "phq-rows";
  ing->add_option("--csv", ing_csv, "Matrix CSV")->required();
  ing->add_option("--orientation", ing_orientation, "phq-rows | gad-rows");

  // run
  auto* run = app.add_subcommand("run", "Run pipeline stages in order");
  std::string run_stages;
  run->add_option("--stages", run_stages, "Comma-separated stages (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: E_USAGE: " << msg << "\n";
    return 1;
  }

  try {
    const PipelineConfig config = resolve(g);
    const ArtifactLayout at{config.out_dir};
    const unsigned threads = g.threads;

    if (*gen) {
      const auto corpus =
          make_corpus(gen_generic ? config.generic_corpus : config.corpus, config.seed, gen_generic, threads);
      const fs::path out = gen_out.empty() ? (gen_generic ? at.generic_corpus() : at.corpus()) : fs::path(gen_out);
      save_jsonl(corpus, out);
      std::cout << "wrote " << corpus.sessions.size() << " sessions to " << out.string() << "\n";
    } else if (*val) {
      const auto corpus = load_corpus(val_corpus);
      const auto violations = validate_split(corpus);
      std::cout << "sessions " << corpus.sessions.size() << ", train " << corpus.split(Split::Train).size()
                << ", test " << corpus.split(Split::Test).size() << "\n";
      for (const auto& v : violations) std::cout << "violation " << to_string(v.kind) << " " << v.speaker_id << "\n";
      if (!violations.empty()) {
        throw ValidationError("E_SPLIT", std::to_string(violations.size()) + " split violations");
      }
    } else if (*voc) {
      auto tok = config.tokenizer;
      if (voc_min_freq) tok.min_freq = *voc_min_freq;
      if (voc_max_size) tok.max_size = *voc_max_size;
      std::vector<Corpus> corpora;
      for (const auto& p : voc_corpora) corpora.push_back(load_corpus(p));
      std::vector<const Session*> sessions;
      for (const auto& c : corpora) {
        for (const auto* s : c.split(Split::Train)) sessions.push_back(s);
      }
      const auto vocab = build_corpus_vocab(sessions, tok);
      const fs::path out = voc_out.empty() ? at.vocab() : fs::path(voc_out);
      vocab.save(out);
      std::cout << "vocabulary " << vocab.size() << " tokens, hash " << vocab.content_hash() << "\n";
    } else if (*pre) {
      const auto vocab = Vocabulary::load(pre_vocab);
      const auto ck = pretrain_lm(config.lm, vocab, load_corpus(pre_corpus), pre_epochs.value_or(config.pretrain_epochs),
                                  config.seed);
      const fs::path out = pre_out.empty() ? at.generic_lm() : fs::path(pre_out);
      ck.save(out);
      std::cout << "wrote " << out.string() << "\n";
    } else if (*ada) {
      const auto ck = adapt_lm(ModelCheckpoint::load(ada_init), load_corpus(ada_corpus),
                               ada_epochs.value_or(config.adapt_epochs), config.seed);
      const fs::path out = ada_out.empty() ? at.adapted_lm() : fs::path(ada_out);
      ck.save(out);
      std::cout << "wrote " << out.string() << "\n";
    } else if (*fin) {
      const auto condition = parse_condition(fin_condition);
      const auto mode = parse_head_mode(fin_mode);
      const auto adapted = ModelCheckpoint::load(fin_init);
      if (!fin_vocab.empty()) require_vocab_hash(adapted.vocab, Vocabulary::load(fin_vocab).content_hash());
      const auto result = train_classifier(adapted, load_corpus(fin_corpus), condition, mode, config.finetune,
                                           finetune_seed(config.seed, condition, mode), threads);
      const fs::path out = fin_out.empty() ? at.classifier(condition, mode) : fs::path(fin_out);
      result.model.save(out);
      std::cout << "wrote " << out.string() << " (final loss " << format_number(result.epoch_loss.back()) << ")\n";
    } else if (*ev) {
      const auto model = PredictionModel::load(ev_model);
      check_condition(model, ev_condition);
      const auto corpus = load_corpus(ev_corpus);
      const auto sessions = select_split(corpus, ev_split);
      if (ev_bucket != "eer" && ev_bucket != "half") {
        throw ValidationError("E_USAGE", "--bucket-threshold must be eer or half");
      }
      SubsetSpec spec{parse_subset(ev_subset), ev_prior ? ev_prior : config.eval.rebalance_prior,
                      derive_seed(config.seed, "eval.rebalance", static_cast<std::uint64_t>(model.condition))};
      auto report = joint_subset_eval(model, sessions, spec, threads,
                                      ev_bucket == "eer" ? BucketThreshold::Eer : BucketThreshold::Half);
      if (!ev_regression.empty()) {
        const auto reg = PredictionModel::load(ev_regression);
        check_condition(reg, std::string(to_string(model.condition)));
        const auto keep = subset_indices(sessions, model.condition, spec);
        std::vector<const Session*> kept;
        for (auto k : keep) kept.push_back(sessions[k]);
        const auto est = predict_sessions(reg, kept, threads);
        std::vector<int> raw;
        for (const auto* s : kept) raw.push_back(s->score(model.condition));
        report.rmse = rmse(est, raw);
      }
      const std::vector<EvalReport> one = {report};
      const auto csv = eval_csv(one);
      std::cout << csv;
      if (!ev_report.empty()) write_report(ev_report, csv);
      if (!ev_accuracy.empty()) write_report(ev_accuracy, accuracy_csv(one, config.eval.min_population));
      if (!ev_plot.empty()) write_report(ev_plot, accuracy_svg(one, config.eval.min_population));
    } else if (*ana) {
      const auto corpus = load_corpus(ana_corpus);
      const auto full = quadrants(score_pairs(corpus));
      const auto matrix = JointCountMatrix::from_corpus(corpus);
      const double r = pearson_from_matrix(matrix);
      std::cout << quadrant_csv(full, "all") << "pearson " << format_number(r) << "\n";
      write_report(at.reports() / "quadrants.csv", quadrant_csv(full, "all"));
      write_report(at.reports() / "joint_counts.csv", matrix_csv(matrix));
      write_report(at.reports() / "marginals.csv", marginals_csv(matrix));
      write_report(at.reports() / "correlation.csv", "pearson\n" + format_number(r) + "\n");
      write_report(at.plots() / "joint_heatmap.svg", heatmap_svg(matrix));
      write_report(at.plots() / "marginals.svg", marginals_svg(matrix));
    } else if (*var) {
      const auto model = PredictionModel::load(var_model);
      check_condition(model, var_condition);
      const auto corpus = load_corpus(var_corpus);
      const auto sessions = select_split(corpus, var_split);
      std::vector<PredictionTrace> traces;
      const std::vector<VariabilityTable> tables = {
          variability_by_quadrant(model, sessions, threads, var_traces.empty() ? nullptr : &traces)};
      write_report(var_out, variability_csv(tables));
      if (!var_traces.empty()) write_report(var_traces, trace_csv(traces));
      std::cout << variability_csv(tables);
    } else if (*ing) {
      MatrixOrientation orientation;
      if (ing_orientation == "phq-rows") {
        orientation = MatrixOrientation::RowsArePhq;
      } else if (ing_orientation == "gad-rows") {
        orientation = MatrixOrientation::RowsAreGad;
      } else {
        throw ValidationError("E_USAGE", "--orientation must be phq-rows or gad-rows");
      }
      const auto ingest = ingest_matrix_csv(read_file(ing_csv), orientation);
      for (const auto& n : ingest.notes) std::cerr << "note: " << n << "\n";
      const double r = pearson_from_matrix(ingest.matrix);
      const auto phq = marginal_histogram(ingest.matrix, Axis::Phq);
      const auto gad = marginal_histogram(ingest.matrix, Axis::Gad);
      std::cout << "sessions " << ingest.matrix.total() << "\npearson " << format_number(r) << "\n"
                << "zero-score share phq " << format_number(phq[0], 4) << " gad " << format_number(gad[0], 4) << "\n";
      write_report(at.reports() / "ingested_joint_counts.csv", matrix_csv(ingest.matrix));
      write_report(at.reports() / "ingested_marginals.csv", marginals_csv(ingest.matrix));
      write_report(at.reports() / "ingested_correlation.csv", "pearson\n" + format_number(r) + "\n");
      write_report(at.plots() / "ingested_heatmap.svg", heatmap_svg(ingest.matrix));
    } else if (*run) {
      std::vector<Stage> stages;
      if (run_stages.empty()) {
        stages = all_stages();
      } else {
        std::stringstream ss(run_stages);
        std::string item;
        while (std::getline(ss, item, ',')) {
          if (!item.empty()) stages.push_back(parse_stage(item));
        }
      }
      const auto manifest = run_pipeline(config, stages, threads, &std::cerr);
      std::cout << "manifest " << at.manifest().string() << " (" << manifest.stages.size() << " stages)\n";
    }
  } catch (const Error& e) {
    return fail(e);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: E_INTERNAL: " << msg << "\n";
    return 2;
  }
  return 0;
}
