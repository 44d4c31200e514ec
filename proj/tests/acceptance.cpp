// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any criterion fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "depanx/analysis.hpp"
#include "depanx/error.hpp"
#include "depanx/finetune.hpp"
#include "depanx/hashing.hpp"
#include "depanx/metrics.hpp"
#include "depanx/pipeline.hpp"
#include "depanx/report.hpp"
#include "depanx/variability.hpp"
#include "lm_gradcheck.hpp"
#include "test_support.hpp"

using namespace depanx;
namespace fs = std::filesystem;
using depanx::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) { return format_number(v, digits); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string config_path(const std::string& name) {
  return std::string(DEPANX_SOURCE_DIR) + "/configs/" + name;
}

// eval.csv rows keyed by "condition,subset".
std::map<std::string, double> eval_aucs(const fs::path& csv) {
  std::map<std::string, double> out;
  std::istringstream in(read_file(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    out[f.at(0) + "," + f.at(1)] = std::stod(f.at(2));
  }
  return out;
}

std::map<std::string, std::string> manifest_hashes(const fs::path& manifest) {
  const auto j = nlohmann::ordered_json::parse(read_file(manifest));
  std::map<std::string, std::string> out;
  for (const auto& s : j.at("stages")) {
    for (const auto& o : s.at("outputs")) out[o.at("path").get<std::string>()] = o.at("sha256").get<std::string>();
  }
  return out;
}

// Shared micro pipeline run, built on first use.
struct MicroRun {
  TempDir dir;
  PipelineConfig config;
  ArtifactLayout at{""};
};

MicroRun& micro_run() {
  static std::unique_ptr<MicroRun> run;
  if (!run) {
    run = std::make_unique<MicroRun>();
    run->config = PipelineConfig::load(config_path("micro.json"));
    run->config.out_dir = (run->dir.path() / "out").string();
    run->at = ArtifactLayout{run->config.out_dir};
    run_pipeline(run->config, all_stages(), 1);
  }
  return *run;
}

// ---------------------------------------------------------------------------

std::vector<ScorePair> from_quadrant_counts(std::int64_t pp, std::int64_t pn, std::int64_t np, std::int64_t nn) {
  std::vector<ScorePair> v;
  for (std::int64_t i = 0; i < pp; ++i) v.push_back({14, 12});
  for (std::int64_t i = 0; i < pn; ++i) v.push_back({11, 4});
  for (std::int64_t i = 0; i < np; ++i) v.push_back({5, 10});
  for (std::int64_t i = 0; i < nn; ++i) v.push_back({1, 2});
  return v;
}

Outcome c1_table_ii() {
  const auto full = quadrants(from_quadrant_counts(2964, 1295, 988, 10703));
  const auto test = quadrants(from_quadrant_counts(455, 198, 163, 2262));
  const std::array<double, 4> want = {18.5, 8.1, 6.1, 67.1};
  bool ok = test.total == 3078;
  std::string got;
  for (int q = 0; q < 4; ++q) {
    const double p = truncated_percent(full.fraction(static_cast<Quadrant>(q)));
    ok = ok && std::abs(p - want[q]) < 1e-9;
    got += fmt(p, 1) + "% ";
  }
  return {ok, "full " + got + "test total " + std::to_string(test.total)};
}

double pairs_pearson(const std::vector<ScorePair>& v) {
  long double mx = 0, my = 0;
  for (const auto& p : v) {
    mx += p.phq;
    my += p.gad;
  }
  mx /= v.size();
  my /= v.size();
  long double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : v) {
    sxx += (p.phq - mx) * (p.phq - mx);
    syy += (p.gad - my) * (p.gad - my);
    sxy += (p.phq - mx) * (p.gad - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

Outcome c2_fig3() {
  const auto ingest = ingest_matrix_csv(read_file(std::string(DEPANX_SOURCE_DIR) + "/data/fig3_joint_counts.csv"));
  const double r = pearson_from_matrix(ingest.matrix);
  const double oracle = pairs_pearson(ingest.matrix.expand());
  const bool ok = std::abs(r - 0.80) <= 0.05 && std::abs(r - oracle) < 1e-12;
  return {ok, "r=" + fmt(r, 6) + " |r-oracle|=" + sci(std::abs(r - oracle))};
}

double brute_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  double num = 0;
  std::int64_t np = 0, nn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    ++np;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  for (bool b : y) nn += !b;
  return num / (static_cast<double>(np) * static_cast<double>(nn));
}

Outcome c3_auc_oracle() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const int n = std::uniform_int_distribution<int>(2, 300)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 40)(rng);
    std::vector<double> s(n);
    std::vector<bool> y(n);
    for (int i = 0; i < n; ++i) {
      s[i] = std::uniform_int_distribution<int>(0, levels)(rng) / static_cast<double>(levels);
      y[i] = rng() & 1;
    }
    y[0] = true;
    y[1] = false;
    worst = std::max(worst, std::abs(roc_auc(s, y) - brute_auc(s, y)));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst < 1e-12 && secs < 5.0, "max diff " + sci(worst) + ", " + fmt(secs, 2) + " s"};
}

Outcome c4_eer() {
  std::mt19937_64 rng(77);
  double worst = 0;
  for (int set = 0; set < 100; ++set) {
    const int npos = std::uniform_int_distribution<int>(20, 200)(rng);
    const int nneg = std::uniform_int_distribution<int>(20, 200)(rng);
    const double shift = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    std::normal_distribution<double> z(0, 1);
    std::vector<double> s;
    std::vector<bool> y;
    for (int i = 0; i < npos; ++i) {
      s.push_back(z(rng) + shift);
      y.push_back(true);
    }
    for (int i = 0; i < nneg; ++i) {
      s.push_back(z(rng));
      y.push_back(false);
    }
    const auto p = eer_point(s, y);
    worst = std::max(worst, std::abs(p.sensitivity - p.specificity));
  }
  return {worst < 0.005, "max |sens-spec| " + fmt(worst, 6)};
}

Outcome c5_gradcheck() {
  using depanx::testing::finite_difference_check;
  using depanx::testing::tiny_config;
  const auto start = std::chrono::steady_clock::now();
  auto dc = tiny_config(false);
  dc.weight_drop_p = 0.5;
  const auto r1 = finite_difference_check(dc, sample_masks(dc, 2, 99, true, false, false), 1);
  const auto r2 = finite_difference_check(tiny_config(true), {}, 2);
  auto both = tiny_config(true);
  both.weight_drop_p = 0.4;
  const auto r3 = finite_difference_check(both, sample_masks(both, 2, 17, true, false, false), 3);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double worst = std::max({r1.max_rel, r2.max_rel, r3.max_rel});
  return {worst < 1e-4 && secs < 30.0, "max rel err " + sci(worst) + ", " + fmt(secs, 2) + " s"};
}

double stlr_closed_form(std::int64_t t, std::int64_t T, double cut_frac, double ratio, double lr_max) {
  const double cut = std::floor(static_cast<double>(T) * cut_frac);
  const double p = t < cut ? t / cut : 1.0 - (t - cut) / (cut * (1.0 / cut_frac - 1.0));
  return lr_max * (1.0 + p * (ratio - 1.0)) / ratio;
}

Outcome c6_stlr() {
  const StlrSchedule s{1000, 0.1, 32.0, 0.01};
  const std::int64_t cut = 100;
  bool ok = stlr(0, s) == 0.01 / 32.0 && stlr(cut, s) == 0.01 &&
            stlr(s.total_steps, s) == stlr_closed_form(s.total_steps, 1000, 0.1, 32.0, 0.01);
  ok = ok && stlr(0, s) == stlr_closed_form(0, 1000, 0.1, 32.0, 0.01) &&
       stlr(cut, s) == stlr_closed_form(cut, 1000, 0.1, 32.0, 0.01);
  std::mt19937_64 rng(6);
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    const auto t = std::uniform_int_distribution<std::int64_t>(0, s.total_steps)(rng);
    worst = std::max(worst, std::abs(stlr(t, s) - stlr_closed_form(t, 1000, 0.1, 32.0, 0.01)));
  }
  return {ok && worst <= 1e-12, "lr(T)=" + fmt(stlr(s.total_steps, s), 8) + ", max diff " + sci(worst)};
}

// Shared tiny pipeline run (criteria 7 and 11).
struct TinyRun {
  TempDir dir;
  PipelineConfig config;
  ArtifactLayout at{""};
  double seconds = 0;
};

TinyRun& tiny_run() {
  static std::unique_ptr<TinyRun> run;
  if (!run) {
    run = std::make_unique<TinyRun>();
    run->config = PipelineConfig::load(config_path("tiny.json"));
    run->config.out_dir = (run->dir.path() / "out").string();
    run->at = ArtifactLayout{run->config.out_dir};
    const auto start = std::chrono::steady_clock::now();
    run_pipeline(run->config, all_stages(), 1);
    run->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return *run;
}

Outcome c7_learnability() {
  auto& run = tiny_run();
  const auto corpus = load_jsonl(run.at.corpus());
  const auto aucs = eval_aucs(run.at.reports() / "eval.csv");
  const double phq = aucs.at("phq,all"), gad = aucs.at("gad,all");
  bool artifacts = fs::exists(run.at.manifest());
  for (const char* f : {"quadrants.csv", "joint_counts.csv", "variability.csv", "accuracy_by_score.csv"}) {
    artifacts = artifacts && fs::exists(run.at.reports() / f);
  }
  const bool ok = corpus.sessions.size() <= 5000 && phq >= 0.95 && gad >= 0.95 && run.seconds < 600 && artifacts;
  return {ok, std::to_string(corpus.sessions.size()) + " sessions, AUC phq " + fmt(phq) + " gad " + fmt(gad) +
                  ", " + fmt(run.seconds, 1) + " s"};
}

Outcome c8_joint_direction() {
  const auto base = PipelineConfig::load(config_path("joint_direction.json"));
  const std::vector<Stage> stages = {Stage::GenData, Stage::BuildVocab, Stage::Pretrain,
                                     Stage::Adapt,   Stage::Finetune,   Stage::Eval};
  int wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TempDir dir;
    auto c = base;
    c.seed = seed;
    c.out_dir = (dir.path() / "out").string();
    run_pipeline(c, stages, 1);
    const auto a = eval_aucs(ArtifactLayout{c.out_dir}.reports() / "eval.csv");
    bool ok = true;
    for (const char* cond : {"phq", "gad"}) {
      const double all = a.at(std::string(cond) + ",all");
      ok = ok && a.at(std::string(cond) + ",joint") >= all && a.at(std::string(cond) + ",joint-rebalanced") >= all;
      detail += std::string(cond) + " " + fmt(all, 3) + "/" + fmt(a.at(std::string(cond) + ",joint"), 3) + "/" +
                fmt(a.at(std::string(cond) + ",joint-rebalanced"), 3) + " ";
    }
    wins += ok;
    detail += ok ? "| " : "(x) | ";
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds; all/joint/rebalanced: " + detail};
}

Outcome c9_gating() {
  auto& run = micro_run();
  const auto model = PredictionModel::load(run.at.classifier(Condition::Phq, HeadMode::Binary));
  const auto corpus = load_jsonl(run.at.corpus());
  std::mt19937_64 rng(9);
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    const auto& s = corpus.sessions[rng() % corpus.sessions.size()];
    const auto ids = session_ids(s, model.vocab);
    const auto trace = gated_predictions(model, ids);
    if (trace.scores.size() != ids.size()) return {false, "trace length mismatch"};
    for (std::size_t n = 0; n < ids.size(); ++n) {
      const double scratch = predict(model, std::span<const TokenId>(ids.data(), n + 1));
      worst = std::max(worst, std::abs(scratch - trace.scores[n]));
    }
  }
  std::vector<TokenId> long_ids(800);
  for (auto& t : long_ids) {
    t = static_cast<TokenId>(Vocabulary::kSep + rng() % (model.vocab.size() - Vocabulary::kSep));
  }
  const auto long_trace = gated_predictions(model, long_ids);
  return {worst < 1e-6 && long_trace.scores.size() == 800,
          "max diff " + sci(worst) + ", 800 tokens -> " + std::to_string(long_trace.scores.size())};
}

Outcome c10_variability_direction() {
  const auto base = PipelineConfig::load(config_path("variability_direction.json"));
  const std::vector<Stage> stages = {Stage::GenData, Stage::BuildVocab, Stage::Pretrain, Stage::Adapt,
                                     Stage::Finetune};
  int wins = 0;
  std::array<int, 3> quadrant_wins{};
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TempDir dir;
    auto c = base;
    c.seed = seed;
    c.out_dir = (dir.path() / "out").string();
    c.eval.regression = false;
    run_pipeline(c, stages, 1);
    const ArtifactLayout at{c.out_dir};
    const auto corpus = load_jsonl(at.corpus());
    const auto test = corpus.split(Split::Test);
    const auto phq = PredictionModel::load(at.classifier(Condition::Phq, HeadMode::Binary));
    const auto gad = PredictionModel::load(at.classifier(Condition::Gad, HeadMode::Binary));
    const auto tp = variability_by_quadrant(phq, test, 1);
    const auto tg = variability_by_quadrant(gad, test, 1);
    const double vp = overall_mean(tp), vg = overall_mean(tg);
    wins += vp > vg;
    detail += fmt(vp) + ">" + fmt(vg) + (vp > vg ? " " : "(x) ");
    // Diagnostic only: the three quadrants with at least one positive condition.
    for (int q = 0; q < 3; ++q) {
      if (tp.mean[q] && tg.mean[q] && *tp.mean[q] > *tg.mean[q]) ++quadrant_wins[q];
    }
  }
  std::string quad = "; seeds with phq>gad per quadrant:";
  for (int q = 0; q < 3; ++q) {
    quad += " " + std::string(to_string(static_cast<Quadrant>(q))) + " " + std::to_string(quadrant_wins[q]) + "/5";
  }
  return {wins >= 4, std::to_string(wins) + "/5 seeds; phq vs gad mean variability: " + detail + quad};
}

Outcome c11_severity_buckets() {
  auto& run = tiny_run();
  auto synth = run.config.corpus;
  synth.n_speakers = 15000;
  const auto eval_corpus = make_corpus(synth, run.config.seed + 1000, false, 1);
  std::vector<const Session*> sessions;
  for (const auto& s : eval_corpus.sessions) sessions.push_back(&s);
  bool ok = true;
  std::string detail;
  for (Condition c : {Condition::Phq, Condition::Gad}) {
    const auto model = PredictionModel::load(run.at.classifier(c, HeadMode::Binary));
    const auto report = joint_subset_eval(model, sessions, SubsetSpec{Subset::All, std::nullopt, 0}, 1);
    std::map<int, ScoreBucket> by;
    for (const auto& b : report.accuracy_by_score) by[b.score] = b;
    const int top = max_score(c);
    if (!by.contains(0) || !by.contains(10) || !by.contains(top)) {
      ok = false;
      detail += std::string(to_string(c)) + " missing bucket; ";
      continue;
    }
    const double a0 = by[0].accuracy(), a10 = by[10].accuracy(), amax = by[top].accuracy();
    ok = ok && a10 < a0 && a10 < amax;
    detail += std::string(to_string(c)) + " acc@0 " + fmt(a0, 3) + " @10 " + fmt(a10, 3) + " @" +
              std::to_string(top) + " " + fmt(amax, 3) + " (n=" + std::to_string(by[top].count) + "); ";
  }
  return {ok, detail};
}

Outcome c12_determinism() {
  const auto cli = std::string(DEPANX_CLI_PATH);
  TempDir dir;
  std::map<std::string, std::string> hashes[2];
  const unsigned threads[2] = {1, 3};
  for (int k = 0; k < 2; ++k) {
    const auto out = dir.path() / ("t" + std::to_string(threads[k]));
    const std::string cmd = "\"" + cli + "\" --config \"" + config_path("micro.json") + "\" --threads " +
                            std::to_string(threads[k]) + " --out-dir \"" + out.string() + "\" run >/dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "pipeline run failed: " + cmd};
    hashes[k] = manifest_hashes(out / "manifest.json");
  }
  int corpus = 0, models = 0, csvs = 0;
  for (const auto& [path, h] : hashes[0]) {
    corpus += path.ends_with(".jsonl");
    models += path.ends_with(".ehlm");
    csvs += path.ends_with(".csv");
  }
  const bool ok = hashes[0] == hashes[1] && corpus > 0 && models > 0 && csvs > 0;
  return {ok, std::to_string(hashes[0].size()) + " outputs compared (" + std::to_string(corpus) + " jsonl, " +
                  std::to_string(models) + " ehlm, " + std::to_string(csvs) + " csv), threads 1 vs 3"};
}

Outcome c13_formats() {
  auto& run = micro_run();
  TempDir dir;
  bool ok = true;
  std::string detail;
  const auto lm = ModelCheckpoint::load(run.at.adapted_lm());
  lm.save(dir / "lm.ehlm");
  ok = ok && read_file(dir / "lm.ehlm") == read_file(run.at.adapted_lm());
  const auto pm = PredictionModel::load(run.at.classifier(Condition::Gad, HeadMode::Regression));
  pm.save(dir / "pm.ehlm");
  ok = ok && read_file(dir / "pm.ehlm") == read_file(run.at.classifier(Condition::Gad, HeadMode::Regression));
  detail += ok ? "EHLM1 byte-identical; " : "EHLM1 differs; ";

  const auto generated = make_corpus(run.config.corpus, run.config.seed, false, 1);
  save_jsonl(generated, dir / "c.jsonl");
  const auto loaded = load_jsonl(dir / "c.jsonl");
  const bool jsonl = loaded.sessions == generated.sessions && loaded == load_jsonl(run.at.corpus());
  detail += jsonl ? "JSONL field-identical (" + std::to_string(loaded.sessions.size()) + " sessions)" : "JSONL differs";
  return {ok && jsonl, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"label distribution table", c1_table_ii},
      {"joint-count correlation", c2_fig3},
      {"AUC oracle", c3_auc_oracle},
      {"EER sens/spec balance", c4_eer},
      {"LSTM gradient check", c5_gradcheck},
      {"STLR closed form", c6_stlr},
      {"learnability on tiny config", c7_learnability},
      {"joint-only subset direction", c8_joint_direction},
      {"gated prediction consistency", c9_gating},
      {"variability direction", c10_variability_direction},
      {"severity bucket pattern", c11_severity_buckets},
      {"determinism across threads", c12_determinism},
      {"format round trips", c13_formats},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && !only.contains(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = criteria[k].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !r.pass;
    std::printf("%s %2d %s: %s [%.1f s]\n", r.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
