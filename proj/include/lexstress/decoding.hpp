#pragma once

// Constrained decoding over a stress lattice: exactly lattice-length steps,
// each restricted to the allowed stress variants of the known base phoneme.
// Singleton (consonant) positions are forced but still scored. <eos> plays
// no role; the target length is known.
//
// Scores are full-vocabulary log-softmax values of the chosen token, summed
// over all positions, so greedy, beam and exhaustive enumeration are
// directly comparable. Argmax ties break toward the lowest token id.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexstress/lexicon.hpp"
#include "lexstress/model.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/util.hpp"

namespace lexstress::decoding {

// Next-token logits (vocab_size) for a prefix that starts with <sos>.
// The model seam: tests plug in rigged scorers here.
using StepFn = std::function<std::vector<float>(std::span<const int>)>;

inline StepFn make_transformer_step(const model::EncoderMemory& memory,
                                    const model::ModelParameters& mp) {
  return [&memory, &mp](std::span<const int> prefix) {
    return model::decode_step(memory, prefix, mp);
  };
}

struct PositionProbs {
  int position = 0;
  std::string base;
  std::vector<int> allowed;         // allowed token ids, ascending
  std::vector<double> probs;        // full-vocabulary softmax at allowed ids
  std::vector<double> renormalized; // probs rescaled to sum to 1
  int chosen = 0;
};

struct DecodeResult {
  std::vector<lex::PhonemeToken> tokens;
  std::vector<PositionProbs> per_position;  // one entry per vowel position
  double log_prob = 0.0;
};

namespace detail {

inline std::vector<double> log_softmax_full(const std::vector<float>& logits) {
  std::vector<double> logp(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i)
    sum += std::exp(static_cast<double>(logits[i]) - mx);
  const double lse = mx + std::log(sum);
  for (size_t i = 0; i < logits.size(); ++i)
    logp[i] = static_cast<double>(logits[i]) - lse;
  return logp;
}

inline void check_vocab(const std::vector<float>& logits) {
  if (static_cast<int>(logits.size()) != lex::Vocabulary::kSize)
    throw ComputeError(cat("model emitted ", logits.size(),
                           " logits; vocabulary expects ",
                           lex::Vocabulary::kSize));
}

inline int restricted_argmax(const std::vector<double>& logp,
                             std::span<const int> allowed) {
  if (allowed.empty())
    throw ComputeError("constraint position has an empty allowed set");
  int best = allowed.front();
  for (int id : allowed) {
    if (id < 0 || id >= static_cast<int>(logp.size()))
      throw ComputeError(cat("allowed token id ", id,
                             " outside model vocabulary"));
    if (logp[id] > logp[best]) best = id;  // ties keep the lowest id
  }
  return best;
}

inline PositionProbs position_probs(int position, const std::string& base,
                                    std::span<const int> allowed,
                                    const std::vector<double>& logp,
                                    int chosen) {
  PositionProbs pp;
  pp.position = position;
  pp.base = base;
  pp.allowed.assign(allowed.begin(), allowed.end());
  double total = 0.0;
  for (int id : allowed) {
    const double p = std::exp(logp[id]);
    pp.probs.push_back(p);
    total += p;
  }
  for (double p : pp.probs) pp.renormalized.push_back(p / total);
  pp.chosen = chosen;
  return pp;
}

}  // namespace detail

inline DecodeResult constrained_greedy(const StepFn& step,
                                       const lex::ConstraintLattice& lattice) {
  if (lattice.length() == 0)
    throw ComputeError("constrained decode needs a non-empty lattice");
  DecodeResult res;
  std::vector<int> prefix = {lex::Vocabulary::kSos};
  for (size_t i = 0; i < lattice.length(); ++i) {
    const auto logits = step(prefix);
    detail::check_vocab(logits);
    const auto logp = detail::log_softmax_full(logits);
    const auto& allowed = lattice.positions[i];
    const int chosen = detail::restricted_argmax(logp, allowed);
    res.log_prob += logp[chosen];
    if (lattice.position_is_vowel(i))
      res.per_position.push_back(detail::position_probs(
          static_cast<int>(i), lattice.base[i], allowed, logp, chosen));
    res.tokens.push_back(lex::Vocabulary::token_of(chosen));
    prefix.push_back(chosen);
  }
  return res;
}

// Plain greedy search to <eos> (or max_len); diagnostics only. <pad> and
// <sos> are never emitted.
inline std::vector<int> unconstrained_greedy(const StepFn& step, int max_len) {
  if (max_len < 1) throw InputError("max_len must be >= 1");
  std::vector<int> prefix = {lex::Vocabulary::kSos};
  std::vector<int> out;
  for (int i = 0; i < max_len; ++i) {
    const auto logits = step(prefix);
    detail::check_vocab(logits);
    int best = -1;
    for (int id = 0; id < static_cast<int>(logits.size()); ++id) {
      if (id == lex::Vocabulary::kPad || id == lex::Vocabulary::kSos) continue;
      if (best < 0 || logits[id] > logits[best]) best = id;
    }
    if (best == lex::Vocabulary::kEos) break;
    out.push_back(best);
    prefix.push_back(best);
  }
  return out;
}

// Beam search over lattice paths. width 1 reproduces constrained_greedy
// exactly (same tie-breaking); width >= the lattice path count makes the
// search exhaustive, so the result is the true maximum-log-prob path.
inline DecodeResult constrained_beam(const StepFn& step,
                                     const lex::ConstraintLattice& lattice,
                                     int width) {
  if (width < 1) throw InputError(cat("beam width must be >= 1, got ", width));
  if (lattice.length() == 0)
    throw ComputeError("constrained decode needs a non-empty lattice");

  struct Hyp {
    std::vector<int> tokens;
    double log_prob = 0.0;
  };
  std::vector<Hyp> beam(1);

  std::vector<Hyp> expanded;
  for (size_t i = 0; i < lattice.length(); ++i) {
    expanded.clear();
    for (const auto& h : beam) {
      std::vector<int> prefix;
      prefix.reserve(h.tokens.size() + 1);
      prefix.push_back(lex::Vocabulary::kSos);
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto logits = step(prefix);
      detail::check_vocab(logits);
      const auto logp = detail::log_softmax_full(logits);
      for (int id : lattice.positions[i]) {
        if (id < 0 || id >= static_cast<int>(logp.size()))
          throw ComputeError(cat("allowed token id ", id,
                                 " outside model vocabulary"));
        Hyp next = h;
        next.tokens.push_back(id);
        next.log_prob += logp[id];
        expanded.push_back(std::move(next));
      }
    }
    // higher log-prob first; exact ties prefer the lexicographically
    // smaller token sequence, matching greedy's lowest-id rule
    std::stable_sort(expanded.begin(), expanded.end(),
                     [](const Hyp& a, const Hyp& b) {
                       if (a.log_prob != b.log_prob)
                         return a.log_prob > b.log_prob;
                       return a.tokens < b.tokens;
                     });
    if (static_cast<int>(expanded.size()) > width) expanded.resize(width);
    beam = expanded;
  }

  const Hyp& winner = beam.front();
  DecodeResult res;
  res.log_prob = winner.log_prob;

  // walk the winning path once more to record per-position probabilities
  std::vector<int> prefix = {lex::Vocabulary::kSos};
  for (size_t i = 0; i < lattice.length(); ++i) {
    const int chosen = winner.tokens[i];
    if (lattice.position_is_vowel(i)) {
      const auto logp = detail::log_softmax_full(step(prefix));
      res.per_position.push_back(detail::position_probs(
          static_cast<int>(i), lattice.base[i], lattice.positions[i], logp,
          chosen));
    }
    res.tokens.push_back(lex::Vocabulary::token_of(chosen));
    prefix.push_back(chosen);
  }
  return res;
}

// Constraint satisfaction is an invariant, not a hope: decoded tokens must
// strip back to the lattice's base sequence.
inline void check_constraint_satisfied(const DecodeResult& res,
                                       const lex::ConstraintLattice& lattice) {
  const auto bases = lex::strip_stress(res.tokens);
  if (bases != lattice.base)
    throw ComputeError(
        "decode violated the constraint lattice (base sequences differ)");
}

inline std::string join_tokens(std::span<const lex::PhonemeToken> tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t.text();
  }
  return out;
}

// One JSONL record per utterance; this is the file format `evaluate`
// consumes, so it carries the reference and word spans along.
inline nlohmann::json decode_record(
    const std::string& id, const std::string& transcript,
    const lex::ConstraintLattice& lattice, const DecodeResult& res,
    std::span<const lex::PhonemeToken> reference) {
  nlohmann::json positions = nlohmann::json::array();
  for (const auto& pp : res.per_position) {
    nlohmann::json allowed = nlohmann::json::array();
    for (int id_ : pp.allowed) allowed.push_back(lex::Vocabulary::text_of(id_));
    positions.push_back({{"position", pp.position},
                         {"base", pp.base},
                         {"allowed", allowed},
                         {"probs", pp.probs},
                         {"probs_renormalized", pp.renormalized},
                         {"chosen", lex::Vocabulary::text_of(pp.chosen)}});
  }
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : lattice.word_spans)
    spans.push_back({{"start", s.start},
                     {"end", s.end},
                     {"word", s.word},
                     {"polysyllabic", s.polysyllabic}});
  std::string base;
  for (const auto& b : lattice.base) {
    if (!base.empty()) base += ' ';
    base += b;
  }
  nlohmann::json j = {{"id", id},
                      {"transcript", transcript},
                      {"base", base},
                      {"predicted", join_tokens(res.tokens)},
                      {"log_prob", res.log_prob},
                      {"positions", positions},
                      {"word_spans", spans}};
  if (!reference.empty()) j["reference"] = join_tokens(reference);
  return j;
}

}  // namespace lexstress::decoding
