#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "depanx/corpus.hpp"

namespace depanx {

/// Discrete score marginal: P(k) proportional to exp(-k / decay) on
/// 0..max, mixed with an extra point mass at zero.
struct ScoreMarginal {
  double decay = 8.0;
  double zero_mass = 0.0;

  std::vector<double> pmf(int max) const;
};

/// Knobs for the synthetic stand-in corpus.
struct SynthConfig {
  int n_speakers = 1000;
  /// P(1 session), P(2 sessions), ... per speaker.
  std::vector<double> sessions_per_speaker = {0.85, 0.1, 0.05};
  /// Fraction of single-session speakers placed in the test split.
  double test_fraction = 0.25;
  /// Correlation of the Gaussian copula linking the two severities.
  double rho = 0.8;
  ScoreMarginal phq_marginal{8.0, 0.0};
  ScoreMarginal gad_marginal{7.0, 0.05};
  int neutral_vocab = 400;
  int cue_vocab = 20;  // per condition
  double phq_cue_strength = 1.0;
  double gad_cue_strength = 1.0;
  /// Fraction of words that are cue words at full strength and severity.
  double cue_rate = 0.2;
  /// Severity is logistic((score - cue_center) / cue_width).
  double cue_center = 9.5;
  double cue_width = 1.5;
  double zipf_exponent = 1.0;
  double words_per_response = 175.0;
  int min_prompts = 4;
  /// P(min_prompts), P(min_prompts + 1), ... ; default mean 4.52.
  std::vector<double> prompts_per_session = {0.6, 0.28, 0.12};
  /// Probability that a sentence ends after any given word.
  double sentence_end_rate = 1.0 / 12.0;

  /// Throws ValidationError on degenerate settings.
  void validate() const;
};

void to_json(nlohmann::ordered_json& j, const SynthConfig& c);
/// Strict: unknown keys are rejected; missing keys keep their defaults.
void from_json(const nlohmann::ordered_json& j, SynthConfig& c);

/// Score-dependent cue emission probability for one word.
double cue_probability(const SynthConfig& config, Condition condition, int score);

/// Maps a uniform variate through the discrete quantile function.
int score_quantile(const std::vector<double>& pmf, double u);

/// Standard normal CDF.
double normal_cdf(double z);

/// Deterministic for (config, seed) and independent of `threads`.
Corpus generate_synthetic(const SynthConfig& config, std::uint64_t seed, unsigned threads = 1);

/// Words the generator uses, by role (for tests and diagnostics).
std::vector<std::string> synthetic_words(const SynthConfig& config, int role);  // 0 neutral, 1 phq, 2 gad

}  // namespace depanx
