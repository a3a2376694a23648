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

#include "backbay/trigger_forge.h"

#include <algorithm>
#include <cmath>

#include "backbay/rng.h"

namespace backbay::trigger {
namespace {

double PeakOf(const std::vector<float>& x) {
  double peak = 0.0;
  for (float v : x) peak = std::max(peak, static_cast<double>(std::fabs(v)));
  return peak;
}

TriggerSpec Normalize(audio::AudioClip clip) {
  double peak = PeakOf(clip.samples);
  if (peak <= 0.0) {
    throw TriggerError(TriggerErrc::kSilent, "trigger waveform is silent");
  }
  for (float& v : clip.samples) v = static_cast<float>(v / peak);
  TriggerSpec spec;
  spec.peak = PeakOf(clip.samples);
  spec.waveform = std::move(clip);
  return spec;
}

}  // namespace

TriggerSpec synth_clap(double duration_ms, double decay_tau_ms,
                       std::uint64_t rng_seed) {
  if (!(duration_ms > 0.0) || !(decay_tau_ms > 0.0)) {
    throw TriggerError(TriggerErrc::kBadDuration,
                       "synth_clap: duration and decay must be positive");
  }
  const auto n = static_cast<std::size_t>(
      std::llround(duration_ms * audio::kSampleRate / 1000.0));
  if (n == 0) {
    throw TriggerError(TriggerErrc::kBadDuration,
                       "synth_clap: duration shorter than one sample");
  }
  Rng rng(rng_seed);
  audio::AudioClip clip;
  clip.samples.resize(n);
  const double tau = decay_tau_ms * audio::kSampleRate / 1000.0;
  for (std::size_t i = 0; i < n; ++i) {
    double noise = 2.0 * rng.uniform() - 1.0;
    clip.samples[i] = static_cast<float>(noise * std::exp(-static_cast<double>(i) / tau));
  }
  return Normalize(std::move(clip));
}

TriggerSpec load_trigger(const std::filesystem::path& path) {
  audio::AudioClip clip = audio::read_wav(path);
  if (clip.sample_rate != audio::kSampleRate) {
    throw TriggerError(TriggerErrc::kSampleRate,
                       path.string() + ": trigger sample rate " +
                           std::to_string(clip.sample_rate) +
                           " Hz, expected 16000");
  }
  if (clip.samples.empty() || PeakOf(clip.samples) == 0.0) {
    throw TriggerError(TriggerErrc::kSilent,
                       path.string() + ": trigger file is silent");
  }
  return Normalize(std::move(clip));
}

std::vector<float> render_trigger(const TriggerSpec& spec,
                                  std::size_t target_len) {
  if (target_len == 0) {
    throw std::invalid_argument("render_trigger: target_len must be > 0");
  }
  const auto& w = spec.waveform.samples;
  if (w.empty()) throw std::invalid_argument("render_trigger: empty trigger");
  std::vector<float> out(target_len);
  for (std::size_t i = 0; i < target_len; ++i) out[i] = w[i % w.size()];
  return out;
}

}  // namespace backbay::trigger
