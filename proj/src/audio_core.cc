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

#include "backbay/audio_core.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numbers>

namespace backbay::audio {
namespace {

constexpr double kLogFloor = 1e-10;

std::uint16_t ReadU16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t ReadU32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void PutU16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> (8 * i)));
}

// The FFTW planner is not thread-safe; execution with the new-array
// interface is. Plans live for the whole process.
fftw_plan R2cPlan(int n) {
  static std::mutex mu;
  static std::map<int, fftw_plan> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto it = plans.find(n);
  if (it != plans.end()) return it->second;
  double* in = fftw_alloc_real(n);
  fftw_complex* out = fftw_alloc_complex(n / 2 + 1);
  fftw_plan plan = fftw_plan_dft_r2c_1d(
      n, in, out, FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_PRESERVE_INPUT);
  fftw_free(in);
  fftw_free(out);
  plans.emplace(n, plan);
  return plan;
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw WavError(WavErrc::kMissingFile, "cannot open " + path.string());
  }
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  auto corrupt = [&](const std::string& why) {
    return WavError(WavErrc::kCorruptHeader,
                    path.string() + ": corrupt header (" + why + ")");
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw corrupt("missing RIFF/WAVE tag");
  }

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    std::size_t size = ReadU32(chunk + 4);
    std::size_t body = pos + 8;
    std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || avail < 16) throw corrupt("short fmt chunk");
      format = ReadU16(chunk + 8);
      channels = ReadU16(chunk + 10);
      rate = ReadU32(chunk + 12);
      bits = ReadU16(chunk + 22);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      // Streaming writers leave the size unset; take what is there.
      data_size = std::min(size, avail);
      break;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw corrupt("no fmt chunk");
  if (data == nullptr) throw corrupt("no data chunk");
  if (format != 1) {
    throw WavError(WavErrc::kNotPcm, path.string() + ": format tag " +
                                         std::to_string(format) +
                                         " is not PCM");
  }
  if (channels != 1) {
    throw WavError(WavErrc::kMultiChannel,
                   path.string() + ": " + std::to_string(channels) +
                       " channels, expected mono");
  }
  if (bits != 16) {
    throw WavError(WavErrc::kUnsupportedBitDepth,
                   path.string() + ": " + std::to_string(bits) +
                       "-bit samples, expected 16");
  }
  if (rate == 0) throw corrupt("zero sample rate");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(data_size / 2);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    auto v = static_cast<std::int16_t>(ReadU16(data + 2 * i));
    clip.samples[i] = static_cast<float>(v) / 32768.0f;
  }
  return clip;
}

std::int16_t quantize_pcm16(float sample) {
  double v = std::nearbyint(static_cast<double>(sample) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

void write_wav(const AudioClip& clip, const std::filesystem::path& path) {
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  PutU32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutU32(out, 16);
  PutU16(out, 1);
  PutU16(out, 1);
  PutU32(out, static_cast<std::uint32_t>(clip.sample_rate));
  PutU32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  PutU16(out, 2);
  PutU16(out, 16);
  out += "data";
  PutU32(out, data_bytes);
  for (float s : clip.samples) {
    PutU16(out, static_cast<std::uint16_t>(quantize_pcm16(s)));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw WavError(WavErrc::kUnwritable, "cannot write " + path.string());
  }
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

std::vector<std::complex<double>> real_dft(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) return {};
  std::vector<std::complex<double>> out(n / 2 + 1);
  fftw_execute_dft_r2c(R2cPlan(n), const_cast<double*>(x.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

Spectrogram stft(const AudioClip& clip, int frame_size, int hop) {
  if (frame_size <= 0 || (frame_size & (frame_size - 1)) != 0) {
    throw std::invalid_argument("stft: frame_size must be a power of two");
  }
  if (hop <= 0 || hop > frame_size) {
    throw std::invalid_argument("stft: hop must be in (0, frame_size]");
  }
  const auto n = static_cast<std::size_t>(frame_size);
  if (clip.samples.size() < n) {
    throw std::invalid_argument("stft: clip shorter than one frame (" +
                                std::to_string(clip.samples.size()) + " < " +
                                std::to_string(frame_size) + ")");
  }

  Spectrogram spec;
  spec.frame_size = frame_size;
  spec.hop = hop;
  spec.sample_rate = clip.sample_rate;
  spec.bins = n / 2 + 1;
  spec.frames = (clip.samples.size() - n) / hop + 1;
  spec.magnitudes.resize(spec.frames * spec.bins);

  const auto window = hann_window(n);
  std::vector<double> buf(n);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    const float* src = clip.samples.data() + f * hop;
    for (std::size_t i = 0; i < n; ++i) buf[i] = src[i] * window[i];
    auto x = real_dft(buf);
    for (std::size_t b = 0; b < spec.bins; ++b) {
      spec.magnitudes[f * spec.bins + b] = std::abs(x[b]);
    }
  }
  return spec;
}

std::vector<std::vector<double>> mel_filterbank(int n_mels, std::size_t bins,
                                                int frame_size,
                                                int sample_rate) {
  if (n_mels <= 0 || static_cast<std::size_t>(n_mels) > bins) {
    throw std::invalid_argument("mel_filterbank: n_mels must be in [1, bins]");
  }
  const double mel_max = HzToMel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[i] = MelToHz(mel_max * i / (n_mels + 1));
  }
  std::vector<std::vector<double>> bank(n_mels, std::vector<double>(bins));
  for (int m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    double total = 0.0;
    for (std::size_t b = 0; b < bins; ++b) {
      double hz = static_cast<double>(b) * sample_rate / frame_size;
      double w = 0.0;
      if (hz > lo && hz <= mid) {
        w = (hz - lo) / (mid - lo);
      } else if (hz > mid && hz < hi) {
        w = (hi - hz) / (hi - mid);
      }
      bank[m][b] = w;
      total += w;
    }
    if (total <= 0.0) {
      throw std::invalid_argument(
          "mel_filterbank: degenerate filterbank, filter " +
          std::to_string(m) + " of " + std::to_string(n_mels) +
          " covers no DFT bin");
    }
  }
  return bank;
}

FeatureMatrix log_mel(const Spectrogram& spec, int n_mels) {
  const auto bank =
      mel_filterbank(n_mels, spec.bins, spec.frame_size, spec.sample_rate);
  FeatureMatrix out;
  out.rows = spec.frames;
  out.cols = static_cast<std::size_t>(n_mels);
  out.values.resize(out.rows * out.cols);
  for (std::size_t f = 0; f < spec.frames; ++f) {
    auto mags = spec.frame(f);
    for (int m = 0; m < n_mels; ++m) {
      double e = 0.0;
      for (std::size_t b = 0; b < spec.bins; ++b) {
        if (bank[m][b] != 0.0) e += bank[m][b] * mags[b] * mags[b];
      }
      out.values[f * out.cols + m] = std::log(std::max(e, kLogFloor));
    }
  }
  return out;
}

FeatureMatrix extract_features(const Spectrogram& spec, int n_mels,
                               int n_mfcc) {
  if (n_mfcc <= 0 || n_mfcc > n_mels) {
    throw std::invalid_argument("extract_features: need 0 < n_mfcc <= n_mels");
  }
  const FeatureMatrix mel = log_mel(spec, n_mels);

  // Orthonormal DCT-II basis.
  std::vector<double> basis(static_cast<std::size_t>(n_mfcc) * n_mels);
  for (int k = 0; k < n_mfcc; ++k) {
    double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / n_mels);
    for (int m = 0; m < n_mels; ++m) {
      basis[k * n_mels + m] =
          scale * std::cos(std::numbers::pi * k * (2 * m + 1) / (2.0 * n_mels));
    }
  }

  FeatureMatrix out;
  out.rows = mel.rows;
  out.cols = static_cast<std::size_t>(n_mfcc);
  out.values.resize(out.rows * out.cols);
  for (std::size_t f = 0; f < mel.rows; ++f) {
    for (int k = 0; k < n_mfcc; ++k) {
      double acc = 0.0;
      for (int m = 0; m < n_mels; ++m) {
        acc += basis[k * n_mels + m] * mel.values[f * mel.cols + m];
      }
      out.values[f * out.cols + k] = acc;
    }
  }
  return out;
}

FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg) {
  return extract_features(stft(clip, cfg.frame_size, cfg.hop), cfg.n_mels,
                          cfg.n_mfcc);
}

}  // namespace backbay::audio
