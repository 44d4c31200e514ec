#include "depanx/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>

#include "depanx/error.hpp"
#include "depanx/parallel.hpp"
#include "depanx/random.hpp"

namespace depanx {
namespace {

constexpr std::array<std::string_view, 8> kPrompts = {
    "work", "home_life", "sleep", "relationships", "health", "hobbies", "stress", "future"};

constexpr std::array<std::string_view, 16> kOnsets = {"b", "d", "f", "g", "k", "l", "m", "n",
                                                      "p", "r", "s", "t", "v", "z", "sh", "ch"};
constexpr std::array<std::string_view, 5> kVowels = {"a", "e", "i", "o", "u"};

// Pseudo-word for a global index; distinct indices give distinct words.
std::string pseudo_word(int index) {
  std::string w;
  int n = index;
  const int base = static_cast<int>(kOnsets.size() * kVowels.size());
  do {
    const int syl = n % base;
    w += kOnsets[static_cast<std::size_t>(syl) / kVowels.size()];
    w += kVowels[static_cast<std::size_t>(syl) % kVowels.size()];
    n /= base;
  } while (n > 0);
  if (w.size() < 4) w += "n";  // keeps one-syllable words off common English
  return w;
}

void check_probs(const std::vector<double>& p, const char* name) {
  if (p.empty()) throw ValidationError("E_CONFIG", std::string(name) + " is empty");
  double total = 0;
  for (double v : p) {
    if (!(v >= 0 && v <= 1)) {
      throw ValidationError("E_CONFIG", std::string(name) + " entries must lie in [0,1]");
    }
    total += v;
  }
  if (total <= 0) throw ValidationError("E_CONFIG", std::string(name) + " has no mass");
}

void check_unit(double v, const char* name) {
  if (!(v >= 0 && v <= 1)) throw ValidationError("E_CONFIG", std::string(name) + " must lie in [0,1]");
}

template <class T>
void read_key(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ValidationError("E_CONFIG", std::string("corpus config key '") + key + "' has the wrong type");
    }
  }
}

void marginal_from_json(const nlohmann::ordered_json& j, ScoreMarginal& m, const char* name) {
  for (const auto& [k, v] : j.items()) {
    if (k != "decay" && k != "zero_mass") {
      throw ValidationError("E_CONFIG", std::string("unknown key '") + k + "' in " + name);
    }
  }
  read_key(j, "decay", m.decay);
  read_key(j, "zero_mass", m.zero_mass);
}

}  // namespace

std::vector<double> ScoreMarginal::pmf(int max) const {
  std::vector<double> p(static_cast<std::size_t>(max) + 1);
  for (int k = 0; k <= max; ++k) p[static_cast<std::size_t>(k)] = std::exp(-k / decay);
  const double total = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v = (1 - zero_mass) * v / total;
  p[0] += zero_mass;
  return p;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

int score_quantile(const std::vector<double>& pmf, double u) {
  double cdf = 0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    cdf += pmf[k];
    if (u <= cdf) return static_cast<int>(k);
  }
  return static_cast<int>(pmf.size()) - 1;
}

void SynthConfig::validate() const {
  if (n_speakers <= 0) throw ValidationError("E_CONFIG", "n_speakers must be positive");
  check_probs(sessions_per_speaker, "sessions_per_speaker");
  check_probs(prompts_per_session, "prompts_per_session");
  check_unit(test_fraction, "test_fraction");
  if (!(rho >= -1 && rho <= 1)) throw ValidationError("E_CONFIG", "rho must lie in [-1,1]");
  for (const auto* m : {&phq_marginal, &gad_marginal}) {
    if (!(m->decay > 0)) throw ValidationError("E_CONFIG", "marginal decay must be positive");
    check_unit(m->zero_mass, "zero_mass");
  }
  if (neutral_vocab <= 0) throw ValidationError("E_CONFIG", "neutral_vocab must be positive");
  if (cue_vocab <= 0) throw ValidationError("E_CONFIG", "cue_vocab must be positive");
  check_unit(phq_cue_strength, "phq_cue_strength");
  check_unit(gad_cue_strength, "gad_cue_strength");
  check_unit(cue_rate, "cue_rate");
  if (cue_rate * (phq_cue_strength + gad_cue_strength) > 1) {
    throw ValidationError("E_CONFIG", "combined cue emission probability exceeds 1");
  }
  if (!(cue_width > 0)) throw ValidationError("E_CONFIG", "cue_width must be positive");
  if (!(zipf_exponent >= 0)) throw ValidationError("E_CONFIG", "zipf_exponent must be >= 0");
  if (!(words_per_response >= 1)) throw ValidationError("E_CONFIG", "words_per_response must be >= 1");
  if (min_prompts < 1) throw ValidationError("E_CONFIG", "min_prompts must be >= 1");
  check_unit(sentence_end_rate, "sentence_end_rate");
}

void to_json(nlohmann::ordered_json& j, const SynthConfig& c) {
  j = nlohmann::ordered_json{
      {"n_speakers", c.n_speakers},
      {"sessions_per_speaker", c.sessions_per_speaker},
      {"test_fraction", c.test_fraction},
      {"rho", c.rho},
      {"phq_marginal", {{"decay", c.phq_marginal.decay}, {"zero_mass", c.phq_marginal.zero_mass}}},
      {"gad_marginal", {{"decay", c.gad_marginal.decay}, {"zero_mass", c.gad_marginal.zero_mass}}},
      {"neutral_vocab", c.neutral_vocab},
      {"cue_vocab", c.cue_vocab},
      {"phq_cue_strength", c.phq_cue_strength},
      {"gad_cue_strength", c.gad_cue_strength},
      {"cue_rate", c.cue_rate},
      {"cue_center", c.cue_center},
      {"cue_width", c.cue_width},
      {"zipf_exponent", c.zipf_exponent},
      {"words_per_response", c.words_per_response},
      {"min_prompts", c.min_prompts},
      {"prompts_per_session", c.prompts_per_session},
      {"sentence_end_rate", c.sentence_end_rate},
  };
}

void from_json(const nlohmann::ordered_json& j, SynthConfig& c) {
  if (!j.is_object()) throw ValidationError("E_CONFIG", "corpus config must be an object");
  static const std::set<std::string> known = {
      "n_speakers", "sessions_per_speaker", "test_fraction", "rho", "phq_marginal",
      "gad_marginal", "neutral_vocab", "cue_vocab", "phq_cue_strength", "gad_cue_strength",
      "cue_rate", "cue_center", "cue_width", "zipf_exponent", "words_per_response",
      "min_prompts", "prompts_per_session", "sentence_end_rate"};
  for (const auto& [k, v] : j.items()) {
    if (!known.contains(k)) throw ValidationError("E_CONFIG", "unknown corpus config key '" + k + "'");
  }
  read_key(j, "n_speakers", c.n_speakers);
  read_key(j, "sessions_per_speaker", c.sessions_per_speaker);
  read_key(j, "test_fraction", c.test_fraction);
  read_key(j, "rho", c.rho);
  if (auto it = j.find("phq_marginal"); it != j.end()) marginal_from_json(*it, c.phq_marginal, "phq_marginal");
  if (auto it = j.find("gad_marginal"); it != j.end()) marginal_from_json(*it, c.gad_marginal, "gad_marginal");
  read_key(j, "neutral_vocab", c.neutral_vocab);
  read_key(j, "cue_vocab", c.cue_vocab);
  read_key(j, "phq_cue_strength", c.phq_cue_strength);
  read_key(j, "gad_cue_strength", c.gad_cue_strength);
  read_key(j, "cue_rate", c.cue_rate);
  read_key(j, "cue_center", c.cue_center);
  read_key(j, "cue_width", c.cue_width);
  read_key(j, "zipf_exponent", c.zipf_exponent);
  read_key(j, "words_per_response", c.words_per_response);
  read_key(j, "min_prompts", c.min_prompts);
  read_key(j, "prompts_per_session", c.prompts_per_session);
  read_key(j, "sentence_end_rate", c.sentence_end_rate);
}

double cue_probability(const SynthConfig& config, Condition condition, int score) {
  const double strength =
      condition == Condition::Phq ? config.phq_cue_strength : config.gad_cue_strength;
  const double severity = 1.0 / (1.0 + std::exp(-(score - config.cue_center) / config.cue_width));
  return config.cue_rate * strength * severity;
}

std::vector<std::string> synthetic_words(const SynthConfig& config, int role) {
  int begin = 0;
  int count = config.neutral_vocab;
  if (role == 1) {
    begin = config.neutral_vocab;
    count = config.cue_vocab;
  } else if (role == 2) {
    begin = config.neutral_vocab + config.cue_vocab;
    count = config.cue_vocab;
  }
  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) words.push_back(pseudo_word(begin + i));
  return words;
}

Corpus generate_synthetic(const SynthConfig& config, std::uint64_t seed, unsigned threads) {
  config.validate();
  const auto phq_pmf = config.phq_marginal.pmf(kPhqMax);
  const auto gad_pmf = config.gad_marginal.pmf(kGadMax);
  const auto neutral = synthetic_words(config, 0);
  const auto phq_cues = synthetic_words(config, 1);
  const auto gad_cues = synthetic_words(config, 2);

  std::vector<double> zipf(neutral.size());
  for (std::size_t i = 0; i < zipf.size(); ++i) {
    zipf[i] = 1.0 / std::pow(static_cast<double>(i + 1), config.zipf_exponent);
  }
  const double rho_c = std::sqrt(std::max(0.0, 1 - config.rho * config.rho));

  std::vector<std::vector<Session>> per_speaker(static_cast<std::size_t>(config.n_speakers));
  parallel_for(per_speaker.size(), threads, [&](std::size_t index) {
    Rng rng = make_rng(seed, "synth.speaker", index);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::discrete_distribution<int> n_sessions_dist(config.sessions_per_speaker.begin(),
                                                    config.sessions_per_speaker.end());
    std::discrete_distribution<int> prompts_dist(config.prompts_per_session.begin(),
                                                 config.prompts_per_session.end());
    std::discrete_distribution<std::size_t> neutral_dist(zipf.begin(), zipf.end());
    const double extra_mean = config.words_per_response - 1.0;
    std::poisson_distribution<int> extra_words(extra_mean > 0 ? extra_mean : 1.0);
    std::uniform_int_distribution<std::size_t> cue_pick(0, static_cast<std::size_t>(config.cue_vocab) - 1);

    const double z1 = normal(rng);
    const double z2 = config.rho * z1 + rho_c * normal(rng);
    const int phq = score_quantile(phq_pmf, normal_cdf(z1));
    const int gad = score_quantile(gad_pmf, normal_cdf(z2));
    const double p_phq = cue_probability(config, Condition::Phq, phq);
    const double p_gad = cue_probability(config, Condition::Gad, gad);

    const int n_sessions = 1 + n_sessions_dist(rng);
    const bool test = n_sessions == 1 && unit(rng) < config.test_fraction;

    char speaker_buf[32];
    std::snprintf(speaker_buf, sizeof speaker_buf, "spk%06zu", index);
    auto& out = per_speaker[index];
    for (int k = 0; k < n_sessions; ++k) {
      Session s;
      s.speaker_id = speaker_buf;
      s.session_id = std::string(speaker_buf) + "-s" + std::to_string(k + 1);
      s.split = test ? Split::Test : Split::Train;
      s.phq8 = phq;
      s.gad7 = gad;
      const int n_prompts = config.min_prompts + prompts_dist(rng);
      std::vector<std::size_t> order(kPrompts.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (int p = 0; p < n_prompts; ++p) {
        Response r;
        const auto slot = static_cast<std::size_t>(p);
        r.prompt_id = std::string(kPrompts[order[slot % order.size()]]);
        if (slot >= order.size()) r.prompt_id += "_" + std::to_string(slot / order.size() + 1);
        const int n_words = 1 + (extra_mean > 0 ? extra_words(rng) : 0);
        bool sentence_start = true;
        for (int w = 0; w < n_words; ++w) {
          const double u = unit(rng);
          std::string word;
          if (u < p_phq) {
            word = phq_cues[cue_pick(rng)];
          } else if (u < p_phq + p_gad) {
            word = gad_cues[cue_pick(rng)];
          } else {
            word = neutral[neutral_dist(rng)];
          }
          if (sentence_start) word[0] = static_cast<char>(word[0] - 'a' + 'A');
          if (!r.text.empty()) r.text.push_back(' ');
          r.text += word;
          sentence_start = w + 1 == n_words || unit(rng) < config.sentence_end_rate;
          if (sentence_start) r.text.push_back('.');
        }
        s.responses.push_back(std::move(r));
      }
      out.push_back(std::move(s));
    }
  });

  Corpus corpus;
  for (auto& group : per_speaker) {
    for (auto& s : group) corpus.sessions.push_back(std::move(s));
  }
  nlohmann::ordered_json cfg = config;
  corpus.metadata = CorpusMetadata{std::move(cfg), seed};
  return corpus;
}

}  // namespace depanx
