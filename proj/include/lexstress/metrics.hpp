#pragma once

// Stress phoneme error rate: of the vowel positions inside polysyllabic
// word spans, how many predicted stress digits differ from the reference
// after the collapse policy. Monosyllabic words never count.

#include <array>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexstress/dataset.hpp"
#include "lexstress/decoding.hpp"
#include "lexstress/lexicon.hpp"
#include "lexstress/model.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/util.hpp"

namespace lexstress::metrics {

// Secondary stress (digit 2) handling: score it as its own class, or fold
// it into unstressed (default) or primary.
enum class StressPolicy { ThreeClass, Collapse2To0, Collapse2To1 };

inline std::string policy_name(StressPolicy p) {
  switch (p) {
    case StressPolicy::ThreeClass: return "three-class";
    case StressPolicy::Collapse2To0: return "collapse-2-to-0";
    case StressPolicy::Collapse2To1: return "collapse-2-to-1";
  }
  return "?";
}

inline StressPolicy parse_policy(std::string_view s) {
  if (s == "three-class" || s == "3" || s == "exact")
    return StressPolicy::ThreeClass;
  if (s == "collapse-2-to-0" || s == "2" || s == "two-class")
    return StressPolicy::Collapse2To0;
  if (s == "collapse-2-to-1") return StressPolicy::Collapse2To1;
  throw InputError(cat("unknown stress policy '", s,
                       "' (use three-class, collapse-2-to-0, "
                       "collapse-2-to-1)"));
}

inline int collapse_digit(int digit, StressPolicy p) {
  if (digit == 2 && p == StressPolicy::Collapse2To0) return 0;
  if (digit == 2 && p == StressPolicy::Collapse2To1) return 1;
  return digit;
}

struct UttScore {
  int counted = 0;
  int errors = 0;
  // raw digit confusion over counted positions: [predicted][reference]
  std::array<std::array<int64_t, 3>, 3> confusion{};
};

// Reference and prediction must share length and base sequence; anything
// else is a pipeline bug upstream, never skipped silently.
inline UttScore score(std::span<const lex::PhonemeToken> reference,
                      std::span<const lex::PhonemeToken> predicted,
                      std::span<const lex::WordSpan> spans,
                      StressPolicy policy) {
  if (reference.size() != predicted.size())
    throw ComputeError(cat("score: reference has ", reference.size(),
                           " tokens, prediction has ", predicted.size()));
  for (size_t i = 0; i < reference.size(); ++i)
    if (reference[i].base != predicted[i].base)
      throw ComputeError(cat("score: base mismatch at position ", i, ": ",
                             reference[i].base_text(), " vs ",
                             predicted[i].base_text()));

  UttScore s;
  for (const auto& span : spans) {
    if (!span.polysyllabic) continue;
    for (int i = span.start; i < span.end; ++i) {
      if (!reference[i].is_vowel()) continue;
      ++s.counted;
      s.confusion[predicted[i].stress][reference[i].stress] += 1;
      if (collapse_digit(reference[i].stress, policy) !=
          collapse_digit(predicted[i].stress, policy))
        ++s.errors;
    }
  }
  return s;
}

struct UttRecord {
  std::string id;
  int counted = 0;
  int errors = 0;
};

struct Exclusion {
  std::string id;
  std::string reason;
};

struct StressReport {
  StressPolicy policy = StressPolicy::Collapse2To0;
  int64_t counted = 0;
  int64_t errors = 0;
  std::array<std::array<int64_t, 3>, 3> confusion{};
  std::vector<UttRecord> utterances;
  std::vector<Exclusion> exclusions;

  // no counted positions -> the rate is explicitly undefined, not NaN
  bool rate_defined() const { return counted > 0; }
  double error_rate() const {
    if (!rate_defined())
      throw ComputeError("stress error rate undefined: nothing counted");
    return static_cast<double>(errors) / static_cast<double>(counted);
  }

  void add(const std::string& id, const UttScore& s) {
    counted += s.counted;
    errors += s.errors;
    for (int p = 0; p < 3; ++p)
      for (int r = 0; r < 3; ++r) confusion[p][r] += s.confusion[p][r];
    utterances.push_back({id, s.counted, s.errors});
  }

  void exclude(const std::string& id, const std::string& reason) {
    exclusions.push_back({id, reason});
  }
};

inline nlohmann::json report_to_json(const StressReport& r) {
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : r.utterances)
    utts.push_back({{"id", u.id}, {"counted", u.counted},
                    {"errors", u.errors}});
  nlohmann::json excl = nlohmann::json::array();
  for (const auto& e : r.exclusions)
    excl.push_back({{"id", e.id}, {"reason", e.reason}});
  nlohmann::json conf = nlohmann::json::array();
  for (int p = 0; p < 3; ++p)
    conf.push_back({r.confusion[p][0], r.confusion[p][1], r.confusion[p][2]});
  nlohmann::json j = {{"report_version", 1},
                      {"policy", policy_name(r.policy)},
                      {"counted", r.counted},
                      {"errors", r.errors},
                      {"rate_defined", r.rate_defined()},
                      {"excluded", r.exclusions.size()},
                      {"confusion_predicted_x_reference", conf},
                      {"utterances", utts},
                      {"exclusions", excl}};
  if (r.rate_defined()) j["error_rate"] = r.error_rate();
  return j;
}

// Fixed-width "dataset | method | error rate" table; side-by-side runs
// concatenate rows.
inline std::string report_table(const StressReport& r,
                                const std::string& dataset_label,
                                const std::string& method_label) {
  std::ostringstream os;
  os << std::left << std::setw(20) << "dataset" << " | " << std::setw(28)
     << "method" << " | " << "error rate\n";
  os << std::string(20, '-') << "-+-" << std::string(28, '-') << "-+-"
     << std::string(10, '-') << "\n";
  os << std::left << std::setw(20) << dataset_label << " | " << std::setw(28)
     << method_label << " | ";
  if (r.rate_defined()) {
    os << std::fixed << std::setprecision(2) << 100.0 * r.error_rate() << "%"
       << "  (" << r.errors << "/" << r.counted << ")";
  } else {
    os << "undefined (0 counted)";
  }
  os << "\n";
  if (!r.exclusions.empty())
    os << "excluded utterances: " << r.exclusions.size() << " (see report)\n";
  return os.str();
}

// End-to-end corpus evaluation: features -> encode -> constrained decode
// -> score against the reference. Undecodable utterances land in the
// exclusion list with a reason; the rate covers the remainder.
inline StressReport evaluate_corpus(
    std::span<const train::ManifestEntry> entries, const lex::Lexicon& lexicon,
    const model::ModelParameters& mp, StressPolicy policy,
    const lex::ConstraintConfig& ccfg = {}, int beam_width = 1,
    int threads = 0) {
  StressReport report;
  report.policy = policy;

  const int n = static_cast<int>(entries.size());
  std::vector<UttScore> scores(n);
  std::vector<std::string> failures(n);
  std::vector<char> failed(n, 0);

  parallel_for(n, threads, [&](int i) {
    const auto& e = entries[i];
    try {
      const auto lattice = lex::build_constraint(
          lex::split_transcript(e.transcript), lexicon, ccfg);
      const auto reference = train::reference_tokens(e, &lexicon);
      if (lex::strip_stress(reference) != lattice.base)
        throw InputError(
            "reference phones do not match the transcript's base sequence");

      auto feats = dsp::normalize(train::load_features(e), mp.stats);
      const auto memory = model::encode(feats, mp);
      const auto step = decoding::make_transformer_step(memory, mp);
      const auto res = beam_width > 1
                           ? decoding::constrained_beam(step, lattice,
                                                        beam_width)
                           : decoding::constrained_greedy(step, lattice);
      decoding::check_constraint_satisfied(res, lattice);
      scores[i] = score(reference, res.tokens, lattice.word_spans, policy);
    } catch (const std::exception& ex) {
      failed[i] = 1;
      failures[i] = ex.what();
    }
  });

  for (int i = 0; i < n; ++i) {
    if (failed[i])
      report.exclude(entries[i].id, failures[i]);
    else
      report.add(entries[i].id, scores[i]);
  }
  return report;
}

}  // namespace lexstress::metrics
