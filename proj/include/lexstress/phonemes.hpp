#pragma once

// CMU phoneme inventory, stress-marked phoneme tokens and the fixed
// 72-entry model vocabulary.
//
// Token id layout (fixed; checkpoints embed the full listing and loaders
// verify it):
//   0  <pad>   1  <sos>   2  <eos>
//   3..26     the 24 consonants, alphabetical
//   27..71    the 15 vowels, alphabetical, digits 0/1/2 adjacent
//             (id = 27 + 3*vowel_index + digit)

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lexstress/util.hpp"

namespace lexstress::lex {

inline constexpr std::array<std::string_view, 24> kConsonants = {
    "B", "CH", "D",  "DH", "F", "G", "HH", "JH", "K", "L", "M", "N",
    "NG", "P", "R", "S", "SH", "T", "TH", "V", "W", "Y", "Z", "ZH"};

inline constexpr std::array<std::string_view, 15> kVowels = {
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER",
    "EY", "IH", "IY", "OW", "OY", "UH", "UW"};

inline constexpr int kNumConsonants = 24;
inline constexpr int kNumVowels = 15;
inline constexpr int kNumPhonemes = 39;

// Base phoneme index: 0..23 consonants, 24..38 vowels.
inline std::optional<int> base_index(std::string_view symbol) {
  for (int i = 0; i < kNumConsonants; ++i)
    if (kConsonants[i] == symbol) return i;
  for (int i = 0; i < kNumVowels; ++i)
    if (kVowels[i] == symbol) return kNumConsonants + i;
  return std::nullopt;
}

inline std::string_view base_symbol(int base) {
  return base < kNumConsonants ? kConsonants[base]
                               : kVowels[base - kNumConsonants];
}

inline bool is_vowel_symbol(std::string_view symbol) {
  return std::find(kVowels.begin(), kVowels.end(), symbol) != kVowels.end();
}

// A base phoneme plus a stress digit; the digit is present exactly for
// vowels ("IH1"), consonants are bare ("P").
struct PhonemeToken {
  uint8_t base = 0;   // index into the 39-phoneme inventory
  int8_t stress = -1; // 0/1/2 for vowels, -1 for consonants

  bool is_vowel() const { return base >= kNumConsonants; }

  std::string text() const {
    std::string s(base_symbol(base));
    if (stress >= 0) s += static_cast<char>('0' + stress);
    return s;
  }

  std::string base_text() const { return std::string(base_symbol(base)); }

  friend bool operator==(const PhonemeToken&, const PhonemeToken&) = default;
};

inline PhonemeToken make_token(std::string_view base_sym, int stress = -1) {
  auto idx = base_index(base_sym);
  if (!idx) throw InputError(cat("unknown phoneme symbol '", base_sym, "'"));
  const bool vowel = *idx >= kNumConsonants;
  if (vowel && (stress < 0 || stress > 2))
    throw InputError(cat("vowel '", base_sym,
                         "' requires a stress digit in {0,1,2}, got ",
                         stress));
  if (!vowel && stress >= 0)
    throw InputError(cat("consonant '", base_sym,
                         "' must not carry a stress digit"));
  PhonemeToken t;
  t.base = static_cast<uint8_t>(*idx);
  t.stress = static_cast<int8_t>(vowel ? stress : -1);
  return t;
}

// Parses "P", "IH0", "AH2", ... Unknown symbols and missing/extra digits
// are errors naming the offending symbol.
inline PhonemeToken parse_token(std::string_view text) {
  if (text.empty()) throw InputError("empty phoneme symbol");
  int stress = -1;
  std::string_view base_sym = text;
  const char last = text.back();
  if (last >= '0' && last <= '9') {
    stress = last - '0';
    if (stress > 2)
      throw InputError(cat("invalid stress digit in '", text, "'"));
    base_sym = text.substr(0, text.size() - 1);
  }
  auto idx = base_index(base_sym);
  if (!idx) throw InputError(cat("unknown phoneme symbol '", text, "'"));
  return make_token(base_sym, stress);
}

inline std::vector<PhonemeToken> parse_token_sequence(std::string_view text) {
  std::vector<PhonemeToken> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t') ++j;
    if (j > i) out.push_back(parse_token(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

// Fixed 72-token vocabulary shared by the model, decoder and checkpoints.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kSize = 3 + kNumConsonants + 3 * kNumVowels;  // 72

  static bool is_special(int id) { return id >= 0 && id < 3; }

  static int id_of(const PhonemeToken& t) {
    if (t.is_vowel())
      return 3 + kNumConsonants + 3 * (t.base - kNumConsonants) + t.stress;
    return 3 + t.base;
  }

  static int id_of_text(std::string_view text) {
    if (text == "<pad>") return kPad;
    if (text == "<sos>") return kSos;
    if (text == "<eos>") return kEos;
    return id_of(parse_token(text));
  }

  static PhonemeToken token_of(int id) {
    check_id(id);
    if (id < 3)
      throw ComputeError(cat("token id ", id, " is a special, not a phoneme"));
    PhonemeToken t;
    if (id < 3 + kNumConsonants) {
      t.base = static_cast<uint8_t>(id - 3);
      t.stress = -1;
    } else {
      const int v = id - 3 - kNumConsonants;
      t.base = static_cast<uint8_t>(kNumConsonants + v / 3);
      t.stress = static_cast<int8_t>(v % 3);
    }
    return t;
  }

  static std::string text_of(int id) {
    check_id(id);
    if (id == kPad) return "<pad>";
    if (id == kSos) return "<sos>";
    if (id == kEos) return "<eos>";
    return token_of(id).text();
  }

  // Full id-ordered listing; embedded in checkpoint headers so saved ids
  // stay verifiable.
  static std::vector<std::string> listing() {
    std::vector<std::string> out;
    out.reserve(kSize);
    for (int id = 0; id < kSize; ++id) out.push_back(text_of(id));
    return out;
  }

 private:
  static void check_id(int id) {
    if (id < 0 || id >= kSize)
      throw ComputeError(cat("token id ", id, " out of range [0,", kSize, ")"));
  }
};

static_assert(Vocabulary::kSize == 72);

// Two- or three-way stress alternatives per vowel. The vocabulary always
// contains digit 2; this only controls which variants decoding may choose.
enum class StressClasses { Two, Three };

inline std::vector<int> stress_variants(std::string_view base_sym,
                                        StressClasses classes) {
  auto idx = base_index(base_sym);
  if (!idx) throw InputError(cat("unknown phoneme symbol '", base_sym, "'"));
  if (*idx < kNumConsonants) return {3 + *idx};
  const int first = 3 + kNumConsonants + 3 * (*idx - kNumConsonants);
  if (classes == StressClasses::Two) return {first, first + 1};
  return {first, first + 1, first + 2};
}

inline std::vector<std::string> strip_stress(
    std::span<const PhonemeToken> seq) {
  std::vector<std::string> out;
  out.reserve(seq.size());
  for (const auto& t : seq) out.push_back(t.base_text());
  return out;
}

// String form; idempotent on already-bare symbols ("IH" stays "IH").
inline std::string strip_stress_symbol(std::string_view symbol) {
  if (!symbol.empty() && symbol.back() >= '0' && symbol.back() <= '2') {
    const auto bare = symbol.substr(0, symbol.size() - 1);
    if (base_index(bare)) return std::string(bare);
  }
  if (!base_index(symbol))
    throw InputError(cat("unknown phoneme symbol '", symbol, "'"));
  return std::string(symbol);
}

}  // namespace lexstress::lex
