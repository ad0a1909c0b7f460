#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <sstream>

#include "lexstress/lexicon.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/util.hpp"

using namespace lexstress;
using namespace lexstress::lex;

TEST_CASE("phoneme inventory has 39 symbols") {
  REQUIRE(kNumConsonants + kNumVowels == 39);
  for (auto v : kVowels) REQUIRE(is_vowel_symbol(v));
  for (auto c : kConsonants) REQUIRE_FALSE(is_vowel_symbol(c));
}

TEST_CASE("token parsing enforces the stress-digit rule") {
  auto ih1 = parse_token("IH1");
  REQUIRE(ih1.is_vowel());
  REQUIRE(ih1.stress == 1);
  REQUIRE(ih1.text() == "IH1");

  auto p = parse_token("P");
  REQUIRE_FALSE(p.is_vowel());
  REQUIRE(p.stress == -1);
  REQUIRE(p.text() == "P");

  REQUIRE_THROWS_AS(parse_token("IH"), InputError);   // vowel needs digit
  REQUIRE_THROWS_AS(parse_token("P1"), InputError);   // consonant must be bare
  REQUIRE_THROWS_AS(parse_token("IH3"), InputError);  // digit out of range
  REQUIRE_THROWS_AS(parse_token("QX"), InputError);   // unknown symbol
  REQUIRE_THROWS_MATCHES(parse_token("QX"), InputError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("QX")));
}

TEST_CASE("vocabulary id<->token mapping is a bijection over all 72 ids") {
  REQUIRE(Vocabulary::kSize == 72);
  std::set<std::string> texts;
  for (int id = 0; id < Vocabulary::kSize; ++id) {
    const std::string text = Vocabulary::text_of(id);
    REQUIRE(texts.insert(text).second);
    REQUIRE(Vocabulary::id_of_text(text) == id);
  }
  // every vowel appears exactly 3 times, every consonant once
  for (auto v : kVowels) {
    for (int d = 0; d < 3; ++d)
      REQUIRE(texts.count(std::string(v) + char('0' + d)) == 1);
    REQUIRE(texts.count(std::string(v)) == 0);
  }
  for (auto c : kConsonants) REQUIRE(texts.count(std::string(c)) == 1);
}

TEST_CASE("specials sit at fixed ids") {
  REQUIRE(Vocabulary::kPad == 0);
  REQUIRE(Vocabulary::kSos == 1);
  REQUIRE(Vocabulary::kEos == 2);
  REQUIRE(Vocabulary::text_of(0) == "<pad>");
  REQUIRE(Vocabulary::text_of(1) == "<sos>");
  REQUIRE(Vocabulary::text_of(2) == "<eos>");
  REQUIRE_THROWS_AS(Vocabulary::token_of(0), ComputeError);
}

TEST_CASE("strip_stress removes digits and keeps order") {
  auto seq = parse_token_sequence("P R IH0 D IH1 K T");
  auto bare = strip_stress(seq);
  REQUIRE(bare == std::vector<std::string>{"P", "R", "IH", "D", "IH", "K",
                                           "T"});

  REQUIRE(strip_stress({}).empty());

  auto cat_seq = parse_token_sequence("K AE1 T");
  REQUIRE(strip_stress(cat_seq) == std::vector<std::string>{"K", "AE", "T"});

  // idempotent on already-bare symbols
  REQUIRE(strip_stress_symbol("IH1") == "IH");
  REQUIRE(strip_stress_symbol("IH") == "IH");
  REQUIRE(strip_stress_symbol("P") == "P");
}

TEST_CASE("stress_variants") {
  auto three = stress_variants("IH", StressClasses::Three);
  REQUIRE(three.size() == 3);
  REQUIRE(Vocabulary::text_of(three[0]) == "IH0");
  REQUIRE(Vocabulary::text_of(three[1]) == "IH1");
  REQUIRE(Vocabulary::text_of(three[2]) == "IH2");

  auto two = stress_variants("IH", StressClasses::Two);
  REQUIRE(two.size() == 2);
  REQUIRE(Vocabulary::text_of(two[0]) == "IH0");
  REQUIRE(Vocabulary::text_of(two[1]) == "IH1");

  auto cons = stress_variants("P", StressClasses::Three);
  REQUIRE(cons == std::vector<int>{Vocabulary::id_of_text("P")});

  REQUIRE_THROWS_AS(stress_variants("XX", StressClasses::Three), InputError);
}

TEST_CASE("parse_dictionary handles entries, comments and alternates") {
  SECTION("single entry") {
    std::istringstream in("PREDICT  P R IH0 D IH1 K T\n");
    auto lex = parse_dictionary(in);
    REQUIRE(lex.entry_count() == 1);
    auto& pron = lex.first_pronunciation("PREDICT");
    REQUIRE(pron == parse_token_sequence("P R IH0 D IH1 K T"));
  }

  SECTION("comments only give an empty lexicon") {
    std::istringstream in(";;; comment\n;;; another\n");
    auto lex = parse_dictionary(in);
    REQUIRE(lex.entry_count() == 0);
    REQUIRE(lex.word_count() == 0);
  }

  SECTION("alternates preserve dictionary order") {
    std::istringstream in(
        ";;; CMU excerpt\n"
        "A  AH0\n"
        "A(2)  EY1\n"
        "ABANDON  AH0 B AE1 N D AH0 N\n"
        "THE  DH AH0\n"
        "THE(2)  DH AH1\n"
        "THE(3)  DH IY0\n");
    auto lex = parse_dictionary(in);
    REQUIRE(lex.entry_count() == 6);  // one per non-comment line
    REQUIRE(lex.word_count() == 3);
    auto& a = lex.pronunciations("A");
    REQUIRE(a.size() == 2);
    REQUIRE(a[0] == parse_token_sequence("AH0"));
    REQUIRE(a[1] == parse_token_sequence("EY1"));
    REQUIRE(lex.pronunciations("THE").size() == 3);
  }

  SECTION("malformed line reports the line number") {
    std::istringstream in("GOOD  G UH1 D\nBADLINE\n");
    REQUIRE_THROWS_MATCHES(parse_dictionary(in), InputError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("2")));
  }

  SECTION("unknown phoneme names the symbol") {
    std::istringstream in("WORD  W ZZ9\n");
    REQUIRE_THROWS_MATCHES(parse_dictionary(in), InputError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("ZZ9")));
  }

  SECTION("alternate before base entry is rejected") {
    std::istringstream in("A(2)  EY1\n");
    REQUIRE_THROWS_AS(parse_dictionary(in), InputError);
  }
}

static Lexicon demo_lexicon() {
  std::istringstream in(
      "PREDICT  P R IH0 D IH1 K T\n"
      "THE  DH AH0\n"
      "THE(2)  DH IY0\n"
      "CAT  K AE1 T\n"
      "RECORD  R EH1 K ER0 D\n"
      "RECORD(2)  R IH0 K AO1 R D\n");
  return parse_dictionary(in);
}

TEST_CASE("build_constraint follows the worked example") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"PREDICT"};
  auto lattice = build_constraint(words, lex);

  REQUIRE(lattice.length() == 7);
  REQUIRE(lattice.base == std::vector<std::string>{"P", "R", "IH", "D", "IH",
                                                   "K", "T"});
  // consonant singletons, vowel triples
  REQUIRE(lattice.positions[0] ==
          std::vector<int>{Vocabulary::id_of_text("P")});
  REQUIRE(lattice.positions[2] ==
          std::vector<int>{Vocabulary::id_of_text("IH0"),
                           Vocabulary::id_of_text("IH1"),
                           Vocabulary::id_of_text("IH2")});
  REQUIRE(lattice.word_spans.size() == 1);
  REQUIRE(lattice.word_spans[0].start == 0);
  REQUIRE(lattice.word_spans[0].end == 7);
  REQUIRE(lattice.word_spans[0].word == "PREDICT");
  REQUIRE(lattice.word_spans[0].polysyllabic);  // two vowels
}

TEST_CASE("single-vowel words are monosyllabic") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"THE"};
  std::ostringstream warn;
  auto lattice = build_constraint(words, lex, {}, &warn);
  REQUIRE(lattice.length() == 2);
  REQUIRE(lattice.positions[1].size() == 3);  // AH0/AH1/AH2
  REQUIRE_FALSE(lattice.word_spans[0].polysyllabic);
  // first pronunciation used, alternates warned about
  REQUIRE(lattice.base[1] == "AH");
  REQUIRE(warn.str().find("THE") != std::string::npos);
}

TEST_CASE("OOV words are hard errors naming the word") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"MISSINGWORD"};
  REQUIRE_THROWS_MATCHES(build_constraint(words, lex), InputError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring(
                                 "MISSINGWORD")));
}

TEST_CASE("word normalization uppercases and strips edge punctuation") {
  REQUIRE(normalize_word("predict,") == "PREDICT");
  REQUIRE(normalize_word("\"The\"") == "THE");
  REQUIRE(normalize_word("cat.") == "CAT");
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"the", "Cat."};
  auto lattice = build_constraint(words, lex);
  REQUIRE(lattice.word_spans[0].word == "THE");
  REQUIRE(lattice.word_spans[1].word == "CAT");
}

TEST_CASE("two-class config narrows vowel positions") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"PREDICT"};
  ConstraintConfig cfg;
  cfg.classes = StressClasses::Two;
  auto lattice = build_constraint(words, lex, cfg);
  REQUIRE(lattice.positions[2].size() == 2);
  REQUIRE(lattice.positions[4].size() == 2);
  REQUIRE(lattice.path_count() == 4.0);
}

TEST_CASE("lattice path cardinality is 3^vowels under three-class") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"PREDICT", "THE", "RECORD"};
  auto lattice = build_constraint(words, lex);
  // vowels: 2 (PREDICT) + 1 (THE) + 2 (RECORD) = 5
  REQUIRE(lattice.path_count() == std::pow(3.0, 5.0));
}

TEST_CASE("every lattice path strips back to the base sequence") {
  auto lex = demo_lexicon();
  std::vector<std::string> words = {"PREDICT", "CAT"};
  auto lattice = build_constraint(words, lex);

  // walk a few random paths and the two extreme paths
  Rng rng(7);
  for (int trial = 0; trial < 64; ++trial) {
    std::vector<PhonemeToken> path;
    for (size_t i = 0; i < lattice.length(); ++i) {
      const auto& allowed = lattice.positions[i];
      int pick;
      if (trial == 0)
        pick = allowed.front();
      else if (trial == 1)
        pick = allowed.back();
      else
        pick = allowed[rng.uniform_int(0, static_cast<int>(allowed.size()) -
                                              1)];
      path.push_back(Vocabulary::token_of(pick));
    }
    REQUIRE(strip_stress(path) == lattice.base);
  }
}
