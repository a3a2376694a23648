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

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "backbay/audio_core.h"

namespace backbay::trigger {

/// A peak-normalized 16 kHz trigger waveform.
struct TriggerSpec {
  audio::AudioClip waveform;
  double peak = 0.0;
};

enum class TriggerErrc { kBadDuration, kSampleRate, kSilent };

class TriggerError : public std::runtime_error {
 public:
  TriggerError(TriggerErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  TriggerErrc code() const { return code_; }

 private:
  TriggerErrc code_;
};

/// Clap-like burst: white noise shaped by exp(-t / decay_tau), peak 1.
TriggerSpec synth_clap(double duration_ms, double decay_tau_ms,
                       std::uint64_t rng_seed);

TriggerSpec load_trigger(const std::filesystem::path& path);

/// Tiles the trigger and truncates to exactly target_len samples.
std::vector<float> render_trigger(const TriggerSpec& spec,
                                  std::size_t target_len);

}  // namespace backbay::trigger
