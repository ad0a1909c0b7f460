#pragma once

// CMU pronunciation dictionary parsing and constraint lattices for
// stress-free decoding restriction.

#include <cctype>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lexstress/phonemes.hpp"
#include "lexstress/util.hpp"

namespace lexstress::lex {

using Pronunciation = std::vector<PhonemeToken>;

inline int vowel_count(std::span<const PhonemeToken> phones) {
  int n = 0;
  for (const auto& p : phones)
    if (p.is_vowel()) ++n;
  return n;
}

// Word -> ordered pronunciations. Immutable once parsed; safe to share
// across threads.
class Lexicon {
 public:
  void add(const std::string& word, Pronunciation pron) {
    entries_[word].push_back(std::move(pron));
    ++entry_count_;
  }

  bool contains(const std::string& word) const {
    return entries_.count(word) != 0;
  }

  const std::vector<Pronunciation>& pronunciations(
      const std::string& word) const {
    auto it = entries_.find(word);
    if (it == entries_.end())
      throw InputError(cat("word '", word, "' not in lexicon"));
    return it->second;
  }

  const Pronunciation& first_pronunciation(const std::string& word) const {
    return pronunciations(word).front();
  }

  size_t word_count() const { return entries_.size(); }
  size_t entry_count() const { return entry_count_; }  // (word, pron) pairs

 private:
  std::unordered_map<std::string, std::vector<Pronunciation>> entries_;
  size_t entry_count_ = 0;
};

// CMU dict text: ";;;" comment lines, "WORD  PH1 PH2 ..." entries,
// "WORD(2)" alternates in dictionary order after the bare entry.
inline Lexicon parse_dictionary(std::istream& in) {
  Lexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind(";;;", 0) == 0) continue;
    size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;

    size_t word_end = line.find_first_of(" \t", first);
    if (word_end == std::string::npos)
      throw InputError(
          cat("dictionary line ", line_no, ": entry has no pronunciation"));
    std::string word = line.substr(first, word_end - first);

    // Alternate pronunciations carry an "(n)" suffix, n >= 2.
    if (word.size() > 3 && word.back() == ')') {
      const size_t open = word.rfind('(');
      if (open == std::string::npos || open + 2 > word.size() - 1)
        throw InputError(
            cat("dictionary line ", line_no, ": malformed word '", word, "'"));
      const std::string ord = word.substr(open + 1, word.size() - open - 2);
      for (char c : ord)
        if (!std::isdigit(static_cast<unsigned char>(c)))
          throw InputError(cat("dictionary line ", line_no,
                               ": malformed alternate marker '", word, "'"));
      const std::string base = word.substr(0, open);
      if (!lex.contains(base))
        throw InputError(cat("dictionary line ", line_no, ": alternate '",
                             word, "' precedes base entry '", base, "'"));
      word = base;
    }

    Pronunciation pron;
    size_t i = word_end;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
      size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
      if (j > i) {
        try {
          pron.push_back(parse_token(line.substr(i, j - i)));
        } catch (const InputError& e) {
          throw InputError(cat("dictionary line ", line_no, ": ", e.what()));
        }
      }
      i = j;
    }
    if (pron.empty())
      throw InputError(
          cat("dictionary line ", line_no, ": entry has no pronunciation"));
    lex.add(word, std::move(pron));
  }
  return lex;
}

inline Lexicon parse_dictionary_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError(cat("cannot open lexicon file ", path));
  return parse_dictionary(f);
}

// Uppercase and strip leading/trailing punctuation. No G2P fallback;
// anything unresolvable later surfaces as a hard OOV error.
inline std::string normalize_word(std::string_view raw) {
  size_t b = 0, e = raw.size();
  auto is_punct = [](char c) {
    return std::ispunct(static_cast<unsigned char>(c)) && c != '\'';
  };
  while (b < e && is_punct(raw[b])) ++b;
  while (e > b && is_punct(raw[e - 1])) --e;
  std::string out;
  out.reserve(e - b);
  for (size_t i = b; i < e; ++i)
    out += static_cast<char>(std::toupper(static_cast<unsigned char>(raw[i])));
  return out;
}

inline std::vector<std::string> split_transcript(std::string_view text) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i])))
      ++i;
    size_t j = i;
    while (j < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[j])))
      ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

struct ConstraintConfig {
  StressClasses classes = StressClasses::Three;
};

struct WordSpan {
  int start = 0;  // position range [start, end)
  int end = 0;
  std::string word;
  bool polysyllabic = false;  // >= 2 vowel phonemes in the pronunciation
};

// Per-position allowed-token sets for one utterance: consonants are
// singletons, vowels carry their stress variants. Any path through the
// lattice strips back to the base phoneme sequence.
struct ConstraintLattice {
  std::vector<std::vector<int>> positions;  // allowed ids, ascending
  std::vector<std::string> base;            // base symbol per position
  std::vector<WordSpan> word_spans;

  size_t length() const { return positions.size(); }

  bool position_is_vowel(size_t i) const { return is_vowel_symbol(base[i]); }

  // Number of distinct full paths (product of set sizes).
  double path_count() const {
    double n = 1.0;
    for (const auto& p : positions) n *= static_cast<double>(p.size());
    return n;
  }
};

// Builds the decoding restriction from a transcript using each word's first
// dictionary pronunciation. Words with ignored alternates are reported on
// `warn` when given. OOV words are hard errors.
inline ConstraintLattice build_constraint(std::span<const std::string> words,
                                          const Lexicon& lex,
                                          const ConstraintConfig& cfg = {},
                                          std::ostream* warn = nullptr) {
  ConstraintLattice lattice;
  for (const auto& raw : words) {
    const std::string word = normalize_word(raw);
    if (word.empty()) continue;
    if (!lex.contains(word))
      throw InputError(cat("word '", word, "' not in lexicon"));
    const auto& prons = lex.pronunciations(word);
    if (prons.size() > 1 && warn)
      *warn << "warning: word '" << word << "' has " << prons.size()
            << " pronunciations; using the first\n";
    const auto& pron = prons.front();

    WordSpan span;
    span.start = static_cast<int>(lattice.positions.size());
    span.word = word;
    span.polysyllabic = vowel_count(pron) >= 2;
    for (const auto& phone : pron) {
      lattice.base.push_back(phone.base_text());
      lattice.positions.push_back(
          stress_variants(phone.base_text(), cfg.classes));
    }
    span.end = static_cast<int>(lattice.positions.size());
    lattice.word_spans.push_back(std::move(span));
  }
  return lattice;
}

}  // namespace lexstress::lex
