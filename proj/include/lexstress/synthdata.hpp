#pragma once

// Synthetic feature-space corpus with acoustically encoded stress. Each
// phoneme gets a fixed prototype vector; a primary-stressed vowel stretches
// its duration, boosts the low feature dims (energy proxy) and shifts dims
// 20..29 (pitch proxy). Gaussian noise on top. Cue magnitudes are knobs,
// not claims about real speech; defaults make the task easy for the
// desk-scale model.
//
// The control configuration zeroes every cue and redraws each utterance's
// vowel digits uniformly from {0,1}. With fixed per-word patterns the
// decoder would simply memorize the lexicon, so chance-level behavior is
// only measurable against per-occurrence random references.

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexstress/dataset.hpp"
#include "lexstress/features.hpp"
#include "lexstress/lexicon.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/util.hpp"

namespace lexstress::synth {

struct SynthWord {
  std::string word;
  std::vector<lex::PhonemeToken> phones;  // fixed stress pattern
};

struct SynthSpec {
  uint64_t seed = 20260810;
  std::vector<SynthWord> words;  // empty -> default_words()
  int min_frames_per_phoneme = 4;
  int max_frames_per_phoneme = 8;
  float duration_multiplier = 1.5f;  // stressed vowels
  float energy_boost = 2.0f;         // dims 0..19
  float pitch_shift = 1.0f;          // dims 20..29
  float noise_sigma = 0.3f;
  int min_words = 1;
  int max_words = 5;
  bool randomize_stress = false;  // per-occurrence uniform {0,1} digits

  void validate() const {
    if (words.empty()) throw InputError("synth spec has no vocabulary");
    int poly = 0;
    for (const auto& w : words) {
      if (w.word.empty() || w.phones.empty())
        throw InputError("synth spec contains an empty word");
      if (lex::vowel_count(w.phones) >= 2) ++poly;
    }
    if (2 * poly < static_cast<int>(words.size()))
      throw InputError(
          "synth spec needs at least 50% words with >= 2 vowels");
    if (min_frames_per_phoneme < 1 ||
        max_frames_per_phoneme < min_frames_per_phoneme)
      throw InputError("bad frames-per-phoneme range");
    if (min_words < 1 || max_words < min_words)
      throw InputError("bad words-per-utterance range");
    if (noise_sigma < 0.0f) throw InputError("noise sigma must be >= 0");
  }

  // Cue-free control: identical phoneme prototypes, no stress acoustics,
  // references randomized per occurrence.
  SynthSpec control() const {
    SynthSpec c = *this;
    c.duration_multiplier = 1.0f;
    c.energy_boost = 0.0f;
    c.pitch_shift = 0.0f;
    c.randomize_stress = true;
    return c;
  }
};

// 40 fixed words drawn deterministically from the full inventory: 8 with
// three vowels, 12 with two, 20 monosyllables; exactly one primary stress
// each, with an occasional secondary.
inline std::vector<SynthWord> default_words() {
  std::vector<SynthWord> words;
  Rng rng(0x77f2a5c3d11ull);
  for (int i = 0; i < 40; ++i) {
    const int n_vowels = i % 5 == 0 ? 3 : (i % 2 == 0 ? 2 : 1);
    const int primary = rng.uniform_int(0, n_vowels - 1);
    int secondary = -1;
    if (n_vowels >= 2 && rng.uniform() < 0.35) {
      secondary = rng.uniform_int(0, n_vowels - 1);
      if (secondary == primary) secondary = -1;
    }
    SynthWord w;
    w.word = cat("W", i / 10, i % 10);
    for (int v = 0; v < n_vowels; ++v) {
      if (rng.uniform() < 0.85)
        w.phones.push_back(lex::make_token(
            lex::kConsonants[rng.uniform_int(0, lex::kNumConsonants - 1)]));
      const int digit = v == primary ? 1 : (v == secondary ? 2 : 0);
      w.phones.push_back(lex::make_token(
          lex::kVowels[rng.uniform_int(0, lex::kNumVowels - 1)], digit));
    }
    if (rng.uniform() < 0.5)
      w.phones.push_back(lex::make_token(
          lex::kConsonants[rng.uniform_int(0, lex::kNumConsonants - 1)]));
    words.push_back(std::move(w));
  }
  return words;
}

inline SynthSpec default_spec() {
  SynthSpec spec;
  spec.words = default_words();
  return spec;
}

// Per-base-phoneme prototype mean vectors, fixed by the spec seed.
inline std::vector<std::vector<float>> prototype_table(const SynthSpec& spec) {
  std::vector<std::vector<float>> protos(lex::kNumPhonemes);
  Rng rng(mix64(spec.seed, 0x9070ull));
  for (auto& p : protos) {
    p.resize(dsp::kFeatureDim);
    for (auto& v : p) v = static_cast<float>(rng.normal(0.0, 1.0));
  }
  return protos;
}

struct PhoneSegment {
  int phone_index = 0;
  int start_frame = 0;
  int end_frame = 0;
  bool primary_stress = false;
};

struct SynthUtterance {
  std::string id;
  std::vector<std::string> words;
  std::vector<lex::PhonemeToken> phones;
  dsp::FeatureSequence feats;
  std::vector<PhoneSegment> segments;

  std::string transcript() const {
    std::string out;
    for (const auto& w : words) {
      if (!out.empty()) out += ' ';
      out += w;
    }
    return out;
  }

  std::string phones_text() const {
    std::string out;
    for (const auto& p : phones) {
      if (!out.empty()) out += ' ';
      out += p.text();
    }
    return out;
  }
};

inline SynthUtterance generate_utterance(
    const SynthSpec& spec, const std::vector<std::vector<float>>& protos,
    uint64_t utt_seed, const std::string& id) {
  Rng rng(utt_seed);
  SynthUtterance utt;
  utt.id = id;

  const int n_words = rng.uniform_int(spec.min_words, spec.max_words);
  for (int w = 0; w < n_words; ++w) {
    const auto& word =
        spec.words[rng.uniform_int(0, static_cast<int>(spec.words.size()) - 1)];
    utt.words.push_back(word.word);
    utt.phones.insert(utt.phones.end(), word.phones.begin(),
                      word.phones.end());
  }
  if (spec.randomize_stress)
    for (auto& p : utt.phones)
      if (p.is_vowel()) p.stress = static_cast<int8_t>(rng.uniform_int(0, 1));

  std::vector<float> row(dsp::kFeatureDim);
  for (size_t i = 0; i < utt.phones.size(); ++i) {
    const auto& phone = utt.phones[i];
    const bool stressed = phone.stress == 1;
    int frames = rng.uniform_int(spec.min_frames_per_phoneme,
                                 spec.max_frames_per_phoneme);
    if (stressed)
      frames = std::max(
          1, static_cast<int>(std::lround(frames * spec.duration_multiplier)));

    PhoneSegment seg;
    seg.phone_index = static_cast<int>(i);
    seg.start_frame = utt.feats.frames;
    seg.primary_stress = stressed;

    const auto& proto = protos[phone.base];
    for (int f = 0; f < frames; ++f) {
      for (int d = 0; d < dsp::kFeatureDim; ++d) {
        float v = proto[d];
        if (stressed && d < 20) v += spec.energy_boost;
        if (stressed && d >= 20 && d < 30) v += spec.pitch_shift;
        row[d] = v + spec.noise_sigma *
                         static_cast<float>(rng.normal(0.0, 1.0));
      }
      utt.feats.values.insert(utt.feats.values.end(), row.begin(), row.end());
      ++utt.feats.frames;
    }
    seg.end_frame = utt.feats.frames;
    utt.segments.push_back(seg);
  }
  return utt;
}

// Deterministic: utterance i of a named split always gets the same seed.
inline std::vector<SynthUtterance> generate_corpus(const SynthSpec& spec,
                                                   int n,
                                                   const std::string& split) {
  if (n < 1) throw InputError("corpus size must be >= 1");
  spec.validate();
  const auto protos = prototype_table(spec);
  uint64_t split_hash = 0xcbf29ce484222325ull;
  for (char c : split) split_hash = mix64(split_hash, static_cast<uint8_t>(c));

  std::vector<SynthUtterance> utts(n);
  for (int i = 0; i < n; ++i) {
    std::string id = cat(split, "_", i);
    utts[i] = generate_utterance(
        spec, protos, mix64(spec.seed, split_hash, static_cast<uint64_t>(i)),
        id);
  }
  return utts;
}

inline nlohmann::json spec_to_json(const SynthSpec& spec) {
  nlohmann::json words = nlohmann::json::array();
  for (const auto& w : spec.words) {
    std::string phones;
    for (const auto& p : w.phones) {
      if (!phones.empty()) phones += ' ';
      phones += p.text();
    }
    words.push_back({{"word", w.word}, {"phones", phones}});
  }
  return {{"seed", spec.seed},
          {"words", words},
          {"min_frames_per_phoneme", spec.min_frames_per_phoneme},
          {"max_frames_per_phoneme", spec.max_frames_per_phoneme},
          {"duration_multiplier", spec.duration_multiplier},
          {"energy_boost", spec.energy_boost},
          {"pitch_shift", spec.pitch_shift},
          {"noise_sigma", spec.noise_sigma},
          {"min_words", spec.min_words},
          {"max_words", spec.max_words},
          {"randomize_stress", spec.randomize_stress}};
}

// Missing fields keep their defaults (including the default vocabulary).
inline SynthSpec spec_from_json(const nlohmann::json& j) {
  SynthSpec spec = default_spec();
  spec.seed = j.value("seed", spec.seed);
  if (j.contains("words")) {
    spec.words.clear();
    for (const auto& w : j.at("words"))
      spec.words.push_back(
          {w.at("word").get<std::string>(),
           lex::parse_token_sequence(w.at("phones").get<std::string>())});
  }
  spec.min_frames_per_phoneme =
      j.value("min_frames_per_phoneme", spec.min_frames_per_phoneme);
  spec.max_frames_per_phoneme =
      j.value("max_frames_per_phoneme", spec.max_frames_per_phoneme);
  spec.duration_multiplier =
      j.value("duration_multiplier", spec.duration_multiplier);
  spec.energy_boost = j.value("energy_boost", spec.energy_boost);
  spec.pitch_shift = j.value("pitch_shift", spec.pitch_shift);
  spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
  spec.min_words = j.value("min_words", spec.min_words);
  spec.max_words = j.value("max_words", spec.max_words);
  spec.randomize_stress = j.value("randomize_stress", spec.randomize_stress);
  spec.validate();
  return spec;
}

// CMU-format lexicon of the synthetic vocabulary.
inline void write_lexicon(const SynthSpec& spec, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError(cat("cannot write lexicon ", path));
  f << ";;; synthetic lexicon (" << spec.words.size() << " words)\n";
  for (const auto& w : spec.words) {
    f << w.word << " ";
    for (const auto& p : w.phones) f << " " << p.text();
    f << "\n";
  }
}

// Feature dumps under <dir>/feats plus a JSONL manifest with per-utterance
// "phones" references. Returns the manifest entries (paths resolved).
inline std::vector<train::ManifestEntry> write_corpus(
    std::span<const SynthUtterance> utts, const std::string& dir,
    const std::string& manifest_name) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "feats");
  std::vector<train::ManifestEntry> entries;
  for (const auto& u : utts) {
    const std::string rel = cat("feats/", u.id, ".feat");
    dsp::write_feature_file((fs::path(dir) / rel).string(), u.feats);
    train::ManifestEntry e;
    e.id = u.id;
    e.features = rel;  // manifest-relative
    e.transcript = u.transcript();
    e.phones = u.phones_text();
    entries.push_back(std::move(e));
  }
  const std::string manifest_path =
      (fs::path(dir) / manifest_name).string();
  train::write_manifest(manifest_path, entries);
  return train::read_manifest(manifest_path);
}

}  // namespace lexstress::synth
