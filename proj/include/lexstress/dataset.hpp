#pragma once

// JSONL manifests, feature loading and length-bucketed padded batches.
//
// Manifest records: {"audio": path} or {"features": path}, "transcript",
// optional "phones" (stress-marked reference overriding lexicon lookup)
// and optional "id". Relative paths resolve against the manifest file.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexstress/features.hpp"
#include "lexstress/lexicon.hpp"
#include "lexstress/phonemes.hpp"
#include "lexstress/tensor.hpp"
#include "lexstress/util.hpp"
#include "lexstress/wav.hpp"

namespace lexstress::train {

struct ManifestEntry {
  std::string id;
  std::string audio;
  std::string features;
  std::string transcript;
  std::string phones;
};

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError(cat("cannot open manifest ", path));
  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    return fp.is_absolute() ? p : (base / fp).string();
  };

  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw InputError(cat(path, " line ", line_no, ": bad JSON: ", e.what()));
    }
    ManifestEntry e;
    e.audio = resolve(j.value("audio", ""));
    e.features = resolve(j.value("features", ""));
    e.transcript = j.value("transcript", "");
    e.phones = j.value("phones", "");
    e.id = j.value("id", "");
    if (e.id.empty()) e.id = j.value("features", j.value("audio", ""));
    if (e.audio.empty() && e.features.empty())
      throw InputError(cat(path, " line ", line_no,
                           ": record needs \"audio\" or \"features\""));
    if (e.id.empty())
      throw InputError(cat(path, " line ", line_no, ": record needs an id"));
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_manifest(const std::string& path,
                           std::span<const ManifestEntry> entries) {
  std::ofstream f(path);
  if (!f) throw InputError(cat("cannot write manifest ", path));
  for (const auto& e : entries) {
    nlohmann::json j;
    j["id"] = e.id;
    if (!e.audio.empty()) j["audio"] = e.audio;
    if (!e.features.empty()) j["features"] = e.features;
    j["transcript"] = e.transcript;
    if (!e.phones.empty()) j["phones"] = e.phones;
    f << j.dump() << "\n";
  }
}

// Raw (unnormalized) features from either source.
inline dsp::FeatureSequence load_features(const ManifestEntry& e) {
  if (!e.features.empty()) return dsp::read_feature_file(e.features);
  return dsp::extract_features(dsp::read_wav(e.audio));
}

// Stress-marked reference tokens: the manifest "phones" field when present,
// else the first lexicon pronunciation of each transcript word.
inline std::vector<lex::PhonemeToken> reference_tokens(
    const ManifestEntry& e, const lex::Lexicon* lexicon) {
  if (!e.phones.empty()) return lex::parse_token_sequence(e.phones);
  if (!lexicon)
    throw InputError(cat("utterance ", e.id,
                         ": no \"phones\" field and no lexicon given"));
  std::vector<lex::PhonemeToken> out;
  for (const auto& raw : lex::split_transcript(e.transcript)) {
    const std::string word = lex::normalize_word(raw);
    if (word.empty()) continue;
    const auto& pron = lexicon->first_pronunciation(word);  // throws on OOV
    out.insert(out.end(), pron.begin(), pron.end());
  }
  if (out.empty())
    throw InputError(cat("utterance ", e.id, ": empty reference"));
  return out;
}

struct Utterance {
  std::string id;
  dsp::FeatureSequence feats;
  std::vector<int> targets;  // token ids, no specials
};

inline Utterance load_utterance(const ManifestEntry& e,
                                const lex::Lexicon* lexicon) {
  Utterance u;
  u.id = e.id;
  u.feats = load_features(e);
  for (const auto& tok : reference_tokens(e, lexicon))
    u.targets.push_back(lex::Vocabulary::id_of(tok));
  return u;
}

inline std::vector<Utterance> load_utterances(
    std::span<const ManifestEntry> entries, const lex::Lexicon* lexicon,
    int threads) {
  std::vector<Utterance> out(entries.size());
  parallel_for(static_cast<int>(entries.size()), threads, [&](int i) {
    try {
      out[i] = load_utterance(entries[i], lexicon);
    } catch (const std::exception& e) {
      throw InputError(cat("utterance ", entries[i].id, ": ", e.what()));
    }
  });
  return out;
}

// Padded teacher-forcing batch. Decoder inputs are <sos> + y, targets are
// y + <eos>; both pad with <pad>, which the loss ignores. Padded feature
// rows are hidden behind key-padding masks, so extra padding never changes
// the loss.
struct Batch {
  std::vector<nn::Tensor<float>> feats;       // each [t_max, feature_dim]
  std::vector<int> frame_len;
  std::vector<std::vector<int>> dec_inputs;   // each [l_max + 1]
  std::vector<std::vector<int>> dec_targets;  // each [l_max + 1]
  std::vector<int> target_len;                // = |y| + 1 (includes <eos>)
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(feats.size()); }

  int total_target_tokens() const {
    return std::accumulate(target_len.begin(), target_len.end(), 0);
  }
};

// `extra_t` / `extra_l` add padding beyond the bucket maximum; the loss
// must not care (tested).
inline Batch assemble_batch(std::span<const Utterance> utts,
                            std::span<const int> indices, int extra_t = 0,
                            int extra_l = 0) {
  if (indices.empty()) throw ComputeError("empty batch");
  int t_max = 0, l_max = 0;
  for (int i : indices) {
    t_max = std::max(t_max, utts[i].feats.frames);
    l_max = std::max(l_max, static_cast<int>(utts[i].targets.size()));
  }
  t_max += extra_t;
  l_max += extra_l;

  Batch b;
  for (int i : indices) {
    const auto& u = utts[i];
    nn::Tensor<float> ft({t_max, dsp::kFeatureDim});
    std::copy(u.feats.values.begin(), u.feats.values.end(), ft.v.begin());
    b.feats.push_back(std::move(ft));
    b.frame_len.push_back(u.feats.frames);

    std::vector<int> in(l_max + 1, lex::Vocabulary::kPad);
    std::vector<int> tgt(l_max + 1, lex::Vocabulary::kPad);
    in[0] = lex::Vocabulary::kSos;
    for (size_t k = 0; k < u.targets.size(); ++k) {
      in[k + 1] = u.targets[k];
      tgt[k] = u.targets[k];
    }
    tgt[u.targets.size()] = lex::Vocabulary::kEos;
    b.dec_inputs.push_back(std::move(in));
    b.dec_targets.push_back(std::move(tgt));
    b.target_len.push_back(static_cast<int>(u.targets.size()) + 1);
    b.ids.push_back(u.id);
  }
  return b;
}

// Length-sorted buckets of batch_size indices (last may be smaller).
inline std::vector<std::vector<int>> make_buckets(
    std::span<const Utterance> utts, int batch_size) {
  std::vector<int> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return utts[a].feats.frames < utts[b].feats.frames;
  });
  std::vector<std::vector<int>> buckets;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    buckets.emplace_back(
        order.begin() + i,
        order.begin() + std::min(order.size(), i + batch_size));
  }
  return buckets;
}

}  // namespace lexstress::train
