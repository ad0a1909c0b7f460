#pragma once

// Log-mel frontend: 25 ms Hann frames every 10 ms, 512-point DFT,
// 80 triangular HTK-mel filters over 20 Hz..8 kHz, natural log with a
// 1e-10 floor. Per-cell math runs in double and is stored as float32,
// so identical input bytes give bit-identical features.

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "lexstress/util.hpp"
#include "lexstress/wav.hpp"

namespace lexstress::dsp {

inline constexpr int kFeatureDim = 80;
inline constexpr int kFrameLength = 400;  // 25 ms @ 16 kHz
inline constexpr int kFrameShift = 160;   // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr int kNumBins = kFftSize / 2 + 1;  // 257
inline constexpr double kMelLowHz = 20.0;
inline constexpr double kMelHighHz = 8000.0;
inline constexpr double kLogFloor = 1e-10;

struct FeatureSequence {
  int frames = 0;
  std::vector<float> values;  // row-major frames x kFeatureDim

  float at(int t, int d) const { return values[t * kFeatureDim + d]; }
  float& at(int t, int d) { return values[t * kFeatureDim + d]; }
};

inline int frame_count(size_t num_samples) {
  if (num_samples < kFrameLength) return 0;
  return static_cast<int>((num_samples - kFrameLength) / kFrameShift) + 1;
}

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

// 80 x 257 triangular filter matrix. Triangles are evaluated at the
// continuous bin frequencies (HTK style), so adjacent filters overlap and
// every bin strictly between the outer edges gets positive total weight.
inline std::vector<double> make_mel_filterbank() {
  std::vector<double> weights(kFeatureDim * kNumBins, 0.0);
  const double mel_lo = hz_to_mel(kMelLowHz);
  const double mel_hi = hz_to_mel(kMelHighHz);
  std::vector<double> edges(kFeatureDim + 2);
  for (int i = 0; i < kFeatureDim + 2; ++i)
    edges[i] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kFeatureDim + 1));

  const double bin_hz = static_cast<double>(kSampleRate) / kFftSize;
  for (int m = 0; m < kFeatureDim; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < kNumBins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > lo && f < hi)
        w = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
      weights[m * kNumBins + k] = w;
    }
  }
  return weights;
}

namespace detail {

// Iterative radix-2 FFT, input length kFftSize.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wlen(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

}  // namespace detail

inline FeatureSequence extract_features(const AudioBuffer& audio) {
  if (audio.sample_rate != kSampleRate)
    throw InputError(cat("expected ", kSampleRate, " Hz audio, got ",
                         audio.sample_rate));
  if (audio.samples.size() < kFrameLength)
    throw InputError(cat("audio too short: ", audio.samples.size(),
                         " samples, need at least ", kFrameLength));

  static const std::vector<double> filterbank = make_mel_filterbank();

  // periodic Hann: w[n] = 0.5 - 0.5 cos(2*pi*n/N)
  static const std::vector<double> window = [] {
    std::vector<double> w(kFrameLength);
    for (int n = 0; n < kFrameLength; ++n)
      w[n] = 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * n /
                                  kFrameLength);
    return w;
  }();

  const int T = frame_count(audio.samples.size());
  FeatureSequence out;
  out.frames = T;
  out.values.resize(static_cast<size_t>(T) * kFeatureDim);

  std::vector<std::complex<double>> buf(kFftSize);
  std::vector<double> power(kNumBins);
  for (int t = 0; t < T; ++t) {
    const float* src = audio.samples.data() + static_cast<size_t>(t) *
                                                  kFrameShift;
    for (int n = 0; n < kFrameLength; ++n)
      buf[n] = std::complex<double>(static_cast<double>(src[n]) * window[n],
                                    0.0);
    for (int n = kFrameLength; n < kFftSize; ++n) buf[n] = {0.0, 0.0};
    detail::fft_inplace(buf);
    for (int k = 0; k < kNumBins; ++k) power[k] = std::norm(buf[k]);

    for (int m = 0; m < kFeatureDim; ++m) {
      const double* w = filterbank.data() + static_cast<size_t>(m) * kNumBins;
      double e = 0.0;
      for (int k = 0; k < kNumBins; ++k) e += w[k] * power[k];
      out.at(t, m) = static_cast<float>(std::log(std::max(e, kLogFloor)));
    }
  }
  return out;
}

// Per-dimension corpus statistics used for feature normalization. Stored in
// checkpoints so inference sees the same transform as training.
struct FeatureStats {
  std::vector<float> mean = std::vector<float>(kFeatureDim, 0.0f);
  std::vector<float> std = std::vector<float>(kFeatureDim, 1.0f);
};

inline FeatureStats compute_stats(
    std::span<const FeatureSequence> corpus) {
  int64_t n = 0;
  std::vector<double> sum(kFeatureDim, 0.0), sum2(kFeatureDim, 0.0);
  for (const auto& fs : corpus) {
    for (int t = 0; t < fs.frames; ++t)
      for (int d = 0; d < kFeatureDim; ++d) {
        const double v = fs.at(t, d);
        sum[d] += v;
        sum2[d] += v * v;
      }
    n += fs.frames;
  }
  if (n == 0) throw InputError("cannot compute feature stats of empty corpus");
  FeatureStats stats;
  for (int d = 0; d < kFeatureDim; ++d) {
    const double mean = sum[d] / static_cast<double>(n);
    const double var = std::max(sum2[d] / static_cast<double>(n) - mean * mean,
                                0.0);
    stats.mean[d] = static_cast<float>(mean);
    stats.std[d] = static_cast<float>(std::sqrt(var));
  }
  return stats;
}

inline FeatureSequence normalize(const FeatureSequence& feats,
                                 const FeatureStats& stats) {
  for (int d = 0; d < kFeatureDim; ++d)
    if (!(stats.std[d] > 0.0f))
      throw InputError(cat("non-positive feature std in dimension ", d));
  FeatureSequence out = feats;
  for (int t = 0; t < out.frames; ++t)
    for (int d = 0; d < kFeatureDim; ++d)
      out.at(t, d) = (out.at(t, d) - stats.mean[d]) / stats.std[d];
  return out;
}

// Feature dump format: 8-byte magic "SDFEAT01", u32 frame count, u32 dim,
// then row-major float32, little endian.
inline constexpr char kFeatureMagic[9] = "SDFEAT01";

inline void write_feature_file(const std::string& path,
                               const FeatureSequence& fs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot write feature file ", path));
  io::write_bytes(f, kFeatureMagic, 8);
  io::write_u32(f, static_cast<uint32_t>(fs.frames));
  io::write_u32(f, kFeatureDim);
  io::write_f32(f, fs.values.data(), fs.values.size());
  if (!f) throw InputError(cat("short write to ", path));
}

inline FeatureSequence read_feature_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot open feature file ", path));
  char magic[8];
  io::read_bytes(f, magic, 8, "feature magic");
  if (std::string_view(magic, 8) != std::string_view(kFeatureMagic, 8))
    throw InputError(cat(path, ": not a feature dump (bad magic)"));
  const uint32_t t = io::read_u32(f, "frame count");
  const uint32_t dim = io::read_u32(f, "feature dim");
  if (dim != kFeatureDim)
    throw InputError(cat(path, ": feature dim ", dim, ", expected ",
                         kFeatureDim));
  FeatureSequence fs;
  fs.frames = static_cast<int>(t);
  fs.values.resize(static_cast<size_t>(t) * kFeatureDim);
  io::read_f32(f, fs.values.data(), fs.values.size(), "feature data");
  return fs;
}

}  // namespace lexstress::dsp
