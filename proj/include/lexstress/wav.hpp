#pragma once

// Strict RIFF/WAVE reader: 16-bit PCM, mono, 16 kHz only. No resampling,
// no channel mixing; anything else is a descriptive error.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "lexstress/util.hpp"

namespace lexstress::dsp {

inline constexpr int kSampleRate = 16000;

struct AudioBuffer {
  std::vector<float> samples;  // in [-1, 1)
  int sample_rate = kSampleRate;
};

inline AudioBuffer read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError(cat("cannot open WAV file ", path));

  char tag[4];
  io::read_bytes(f, tag, 4, "RIFF header");
  if (std::string_view(tag, 4) != "RIFF")
    throw InputError(cat(path, ": not a RIFF file"));
  (void)io::read_u32(f, "RIFF size");
  io::read_bytes(f, tag, 4, "WAVE tag");
  if (std::string_view(tag, 4) != "WAVE")
    throw InputError(cat(path, ": not a WAVE file"));

  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  std::vector<int16_t> pcm;

  while (f.peek() != EOF) {
    io::read_bytes(f, tag, 4, "chunk id");
    const uint32_t size = io::read_u32(f, "chunk size");
    const std::string_view id(tag, 4);
    if (id == "fmt ") {
      if (size < 16) throw InputError(cat(path, ": fmt chunk too small"));
      uint16_t u16;
      io::read_bytes(f, &u16, 2, "audio format");
      format = u16;
      io::read_bytes(f, &u16, 2, "channels");
      channels = u16;
      rate = io::read_u32(f, "sample rate");
      (void)io::read_u32(f, "byte rate");
      io::read_bytes(f, &u16, 2, "block align");
      io::read_bytes(f, &u16, 2, "bits per sample");
      bits = u16;
      if (size > 16) f.seekg(size - 16 + (size & 1), std::ios::cur);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt)
        throw InputError(cat(path, ": data chunk before fmt chunk"));
      pcm.resize(size / 2);
      io::read_bytes(f, pcm.data(), pcm.size() * 2, "PCM data");
      break;
    } else {
      f.seekg(size + (size & 1), std::ios::cur);  // chunks are word-aligned
      if (!f) throw InputError(cat(path, ": truncated chunk"));
    }
  }

  if (!have_fmt) throw InputError(cat(path, ": missing fmt chunk"));
  if (format != 1)
    throw InputError(cat(path, ": expected PCM (format 1), got format ",
                         format));
  if (channels != 1)
    throw InputError(cat(path, ": expected mono, got ", channels,
                         " channels"));
  if (rate != kSampleRate)
    throw InputError(cat(path, ": expected ", kSampleRate, " Hz, got ", rate));
  if (bits != 16)
    throw InputError(cat(path, ": expected 16-bit samples, got ", bits));
  if (pcm.empty()) throw InputError(cat(path, ": empty data chunk"));

  AudioBuffer buf;
  buf.sample_rate = kSampleRate;
  buf.samples.resize(pcm.size());
  for (size_t i = 0; i < pcm.size(); ++i)
    buf.samples[i] = static_cast<float>(pcm[i]) / 32768.0f;
  return buf;
}

}  // namespace lexstress::dsp
