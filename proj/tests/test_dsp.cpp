#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "lexstress/features.hpp"
#include "lexstress/util.hpp"
#include "lexstress/wav.hpp"
#include "oracle_logmel.hpp"
#include "test_util.hpp"

using namespace lexstress;
using namespace lexstress::dsp;

static AudioBuffer random_audio(Rng& rng, size_t n) {
  AudioBuffer buf;
  buf.samples.resize(n);
  for (auto& s : buf.samples)
    s = static_cast<float>(rng.uniform(-0.5, 0.5));
  return buf;
}

TEST_CASE("read_wav round-trips samples and rejects bad formats") {
  auto dir = testutil::scratch_dir("wav");

  SECTION("16k mono file preserves length and scaling") {
    std::vector<int16_t> pcm(16000);
    for (size_t i = 0; i < pcm.size(); ++i)
      pcm[i] = static_cast<int16_t>((i % 200) * 50 - 5000);
    testutil::write_wav((dir / "ok.wav").string(), pcm);
    auto buf = read_wav((dir / "ok.wav").string());
    REQUIRE(buf.samples.size() == 16000);
    REQUIRE(buf.sample_rate == 16000);
    REQUIRE(buf.samples[3] == Catch::Approx(pcm[3] / 32768.0).epsilon(0));
    for (float s : buf.samples) {
      REQUIRE(s >= -1.0f);
      REQUIRE(s < 1.0f);
    }
  }

  SECTION("stereo is rejected") {
    testutil::write_wav((dir / "stereo.wav").string(),
                        std::vector<int16_t>(800, 100), 16000, 2);
    REQUIRE_THROWS_MATCHES(read_wav((dir / "stereo.wav").string()), InputError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("mono")));
  }

  SECTION("wrong rate is rejected naming 16000") {
    testutil::write_wav((dir / "8k.wav").string(),
                        std::vector<int16_t>(800, 100), 8000, 1);
    REQUIRE_THROWS_MATCHES(read_wav((dir / "8k.wav").string()), InputError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("16000")));
  }

  SECTION("non-wav file is rejected") {
    std::ofstream((dir / "junk.wav").string()) << "not a wav";
    REQUIRE_THROWS_AS(read_wav((dir / "junk.wav").string()), InputError);
  }
}

TEST_CASE("frame count follows floor((N-400)/160)+1") {
  REQUIRE(frame_count(16000) == 98);
  REQUIRE(frame_count(400) == 1);
  REQUIRE(frame_count(559) == 1);
  REQUIRE(frame_count(560) == 2);
  REQUIRE(frame_count(399) == 0);

  AudioBuffer sixteen_k;
  sixteen_k.samples.assign(16000, 0.25f);
  REQUIRE(extract_features(sixteen_k).frames == 98);

  AudioBuffer tiny;
  tiny.samples.assign(399, 0.1f);
  REQUIRE_THROWS_AS(extract_features(tiny), InputError);
}

TEST_CASE("all-zero signal floors every cell at log(1e-10)") {
  AudioBuffer silent;
  silent.samples.assign(800, 0.0f);
  auto feats = extract_features(silent);
  const float floor_val = static_cast<float>(std::log(1e-10));
  for (float v : feats.values) REQUIRE(v == floor_val);
}

TEST_CASE("log-mel matches the brute-force reference within 1e-4") {
  Rng rng(42);
  for (int trial = 0; trial < 4; ++trial) {
    auto audio = random_audio(rng, 400 + 160 * trial + trial * 37);
    auto feats = extract_features(audio);
    auto ref = oracle::logmel_reference(audio.samples);
    REQUIRE(static_cast<size_t>(feats.frames) == ref.size());
    for (int t = 0; t < feats.frames; ++t)
      for (int d = 0; d < kFeatureDim; ++d)
        REQUIRE(feats.at(t, d) ==
                Catch::Approx(ref[t][d]).margin(1e-4));
  }
}

TEST_CASE("pure 1 kHz tone peaks in the filter centered nearest 1 kHz") {
  AudioBuffer tone;
  tone.samples.resize(1600);
  for (size_t n = 0; n < tone.samples.size(); ++n)
    tone.samples[n] = static_cast<float>(
        0.5 * std::sin(2.0 * 3.14159265358979323846 * 1000.0 * n / 16000.0));
  auto feats = extract_features(tone);

  // independently locate the expected filter: center = mel-spaced edge m+1
  const double mel_lo = 2595.0 * std::log10(1.0 + 20.0 / 700.0);
  const double mel_hi = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  int expected = 0;
  double best = 1e30;
  for (int m = 0; m < kFeatureDim; ++m) {
    const double mel_c = mel_lo + (mel_hi - mel_lo) * (m + 1) / 81.0;
    const double hz_c = 700.0 * (std::pow(10.0, mel_c / 2595.0) - 1.0);
    if (std::abs(hz_c - 1000.0) < best) {
      best = std::abs(hz_c - 1000.0);
      expected = m;
    }
  }

  for (int t = 0; t < feats.frames; ++t) {
    int argmax = 0;
    for (int d = 1; d < kFeatureDim; ++d)
      if (feats.at(t, d) > feats.at(t, argmax)) argmax = d;
    REQUIRE(argmax == expected);
  }
}

TEST_CASE("mel filters are non-negative and cover the band") {
  auto fb = make_mel_filterbank();
  for (double w : fb) REQUIRE(w >= 0.0);

  const double mel_lo = hz_to_mel(kMelLowHz), mel_hi = hz_to_mel(kMelHighHz);
  const double lo_hz = mel_to_hz(mel_lo), hi_hz = mel_to_hz(mel_hi);
  const double bin_hz = 16000.0 / kFftSize;
  for (int k = 0; k < kNumBins; ++k) {
    const double f = k * bin_hz;
    if (f <= lo_hz || f >= hi_hz) continue;
    double total = 0.0;
    for (int m = 0; m < kFeatureDim; ++m) total += fb[m * kNumBins + k];
    REQUIRE(total > 0.0);
  }
}

TEST_CASE("scaling the waveform never decreases log-mel values") {
  Rng rng(99);
  auto audio = random_audio(rng, 1200);
  auto base = extract_features(audio);
  AudioBuffer louder = audio;
  for (auto& s : louder.samples) s *= 1.8f;
  auto scaled = extract_features(louder);
  for (size_t i = 0; i < base.values.size(); ++i)
    REQUIRE(scaled.values[i] >= base.values[i]);
}

TEST_CASE("extraction is deterministic") {
  Rng rng(5);
  auto audio = random_audio(rng, 2000);
  auto a = extract_features(audio);
  auto b = extract_features(audio);
  REQUIRE(a.values == b.values);
}

TEST_CASE("normalize") {
  Rng rng(17);
  std::vector<FeatureSequence> corpus;
  for (int i = 0; i < 3; ++i)
    corpus.push_back(extract_features(random_audio(rng, 700 + 160 * i)));

  SECTION("identity stats leave features unchanged") {
    FeatureStats id;
    auto out = normalize(corpus[0], id);
    REQUIRE(out.values == corpus[0].values);
  }

  SECTION("normalizing by corpus stats centers the corpus") {
    auto stats = compute_stats(corpus);
    std::vector<double> sum(kFeatureDim, 0.0);
    int64_t n = 0;
    for (const auto& fs : corpus) {
      auto norm = normalize(fs, stats);
      for (int t = 0; t < norm.frames; ++t)
        for (int d = 0; d < kFeatureDim; ++d) sum[d] += norm.at(t, d);
      n += norm.frames;
    }
    for (int d = 0; d < kFeatureDim; ++d)
      REQUIRE(std::abs(sum[d] / n) < 1e-6);
  }

  SECTION("zero std is an error") {
    FeatureStats bad;
    bad.std[7] = 0.0f;
    REQUIRE_THROWS_AS(normalize(corpus[0], bad), InputError);
  }
}

TEST_CASE("feature dump round-trip") {
  auto dir = testutil::scratch_dir("featdump");
  Rng rng(3);
  auto feats = extract_features(random_audio(rng, 880));
  const auto path = (dir / "u0.feat").string();
  write_feature_file(path, feats);
  auto again = read_feature_file(path);
  REQUIRE(again.frames == feats.frames);
  REQUIRE(again.values == feats.values);

  // 16-byte header: magic + u32 T + u32 dim
  REQUIRE(std::filesystem::file_size(path) ==
          16 + feats.values.size() * sizeof(float));

  SECTION("bad magic is rejected") {
    std::ofstream((dir / "bad.feat").string(), std::ios::binary)
        << "NOTMAGIC00000000";
    REQUIRE_THROWS_AS(read_feature_file((dir / "bad.feat").string()),
                      InputError);
  }
}
