// Copyright 2026 The Backbay Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace backbay::audio {

inline constexpr int kSampleRate = 16000;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kSampleRate;

  std::size_t size() const { return samples.size(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Magnitude STFT, stored frame-major.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  int frame_size = 0;
  int hop = 0;
  int sample_rate = kSampleRate;
  std::vector<double> magnitudes;

  double at(std::size_t frame, std::size_t bin) const {
    return magnitudes[frame * bins + bin];
  }
  std::span<const double> frame(std::size_t f) const {
    return {magnitudes.data() + f * bins, bins};
  }
};

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct FeatureConfig {
  int frame_size = 512;
  int hop = 256;
  int n_mels = 26;
  int n_mfcc = 13;
};

enum class WavErrc {
  kMissingFile,
  kNotPcm,
  kMultiChannel,
  kCorruptHeader,
  kUnsupportedBitDepth,
  kUnwritable,
};

class WavError : public std::runtime_error {
 public:
  WavError(WavErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  WavErrc code() const { return code_; }

 private:
  WavErrc code_;
};

/// Reads a RIFF/WAVE PCM-16 mono file; samples are PCM / 32768.
AudioClip read_wav(const std::filesystem::path& path);

/// Writes PCM-16 mono, rounding to nearest and clamping to [-32768, 32767].
void write_wav(const AudioClip& clip, const std::filesystem::path& path);

/// The PCM-16 value write_wav stores for `sample`.
std::int16_t quantize_pcm16(float sample);

/// Periodic Hann window of length n.
std::vector<double> hann_window(std::size_t n);

/// One-sided DFT of a real sequence (n/2 + 1 bins), any length.
std::vector<std::complex<double>> real_dft(std::span<const double> x);

Spectrogram stft(const AudioClip& clip, int frame_size = 512, int hop = 256);

/// Triangular mel filterbank, n_mels rows of `bins` weights (HTK mel scale).
std::vector<std::vector<double>> mel_filterbank(int n_mels, std::size_t bins,
                                                int frame_size,
                                                int sample_rate);

/// Per-frame log mel energies (power spectrum, log floor 1e-10).
FeatureMatrix log_mel(const Spectrogram& spec, int n_mels);

/// Log-mel followed by an orthonormal DCT-II, keeping n_mfcc coefficients.
FeatureMatrix extract_features(const Spectrogram& spec, int n_mels,
                               int n_mfcc);

/// stft + extract_features with the given configuration.
FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg);

}  // namespace backbay::audio
