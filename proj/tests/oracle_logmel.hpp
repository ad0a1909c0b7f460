#pragma once

// Brute-force log-mel reference, written independently of the library
// frontend: naive O(N^2) DFT instead of an FFT, and its own filterbank
// construction. Used to pin the production implementation cell by cell.

#include <cmath>
#include <vector>

namespace oracle {

inline std::vector<std::vector<double>> logmel_reference(
    const std::vector<float>& samples) {
  constexpr int kWin = 400, kHop = 160, kNfft = 512, kBins = 257, kMels = 80;
  constexpr double kPi = 3.14159265358979323846;
  constexpr double kFloor = 1e-10;
  constexpr double kRate = 16000.0;

  auto mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); };

  // filter edge frequencies, equally spaced on the mel scale over 20..8000 Hz
  std::vector<double> edge(kMels + 2);
  for (int i = 0; i < kMels + 2; ++i)
    edge[i] = hz(mel(20.0) + (mel(8000.0) - mel(20.0)) * i / (kMels + 1));

  const int frames =
      samples.size() < kWin
          ? 0
          : static_cast<int>((samples.size() - kWin) / kHop) + 1;

  std::vector<std::vector<double>> out(frames, std::vector<double>(kMels));
  std::vector<double> windowed(kWin);
  for (int t = 0; t < frames; ++t) {
    for (int n = 0; n < kWin; ++n) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * kPi * n / kWin);
      windowed[n] = static_cast<double>(samples[t * kHop + n]) * w;
    }
    for (int m = 0; m < kMels; ++m) {
      double energy = 0.0;
      for (int k = 0; k < kBins; ++k) {
        const double f = k * kRate / kNfft;
        double weight = 0.0;
        if (f > edge[m] && f < edge[m + 2])
          weight = f <= edge[m + 1]
                       ? (f - edge[m]) / (edge[m + 1] - edge[m])
                       : (edge[m + 2] - f) / (edge[m + 2] - edge[m + 1]);
        if (weight == 0.0) continue;
        // naive DFT bin k of the zero-padded windowed frame
        double re = 0.0, im = 0.0;
        for (int n = 0; n < kWin; ++n) {
          const double ang = -2.0 * kPi * k * n / kNfft;
          re += windowed[n] * std::cos(ang);
          im += windowed[n] * std::sin(ang);
        }
        energy += weight * (re * re + im * im);
      }
      out[t][m] = std::log(std::max(energy, kFloor));
    }
  }
  return out;
}

}  // namespace oracle
