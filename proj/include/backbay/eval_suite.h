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
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "backbay/audio_core.h"
#include "backbay/poison_engine.h"
#include "backbay/victim_model.h"
#include "json.hpp"

namespace backbay::eval {

using Classifier = std::function<int(const audio::AudioClip&)>;

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fraction of items whose prediction equals the label.
double benign_accuracy(const Classifier& classify,
                       const poison::LabeledDataset& clean_test);
double benign_accuracy(const victim::MlpClassifier& model,
                       const poison::LabeledDataset& clean_test);

/// Fraction of (triggered) items predicted as `target`.
double attack_success_rate(const Classifier& classify,
                           const poison::LabeledDataset& poisoned_test,
                           int target);
double attack_success_rate(const victim::MlpClassifier& model,
                           const poison::LabeledDataset& poisoned_test,
                           int target);

struct ThdOptions {
  int n_harmonics = 10;
  /// Analysis window; the clip is cut into non-overlapping Hann frames of
  /// this length and harmonic powers are summed over frames.
  int window = 4096;
};

/// sqrt(sum_{n=2..N} |X_n|^2) / |X_1|, with |X_n| the peak Hann-windowed DFT
/// magnitude within +-1 bin of n * f0.
double thd(const audio::AudioClip& clip, double f0, const ThdOptions& opts = {});

/// Shrinks `requested` so it applies to `clip` at `f0`: the window becomes
/// the largest power of two that fits the clip and harmonics stop below
/// Nyquist.
ThdOptions fit_thd_options(const audio::AudioClip& clip, double f0,
                           ThdOptions requested);

/// Strongest non-DC frequency of the first analysis window.
double dominant_frequency(const audio::AudioClip& clip, int window = 4096);

/// Binary PPM (P6), one pixel per frame x bin, low frequencies at the bottom.
void render_spectrogram_image(const audio::Spectrogram& spec,
                              const std::filesystem::path& path);

struct FoldMetrics {
  int fold = 0;
  double benign_accuracy = 0.0;
  double attack_success_rate = 0.0;
};

struct ThdProbe {
  std::string name;
  double f0 = 0.0;
  double clean = 0.0;
  double poisoned = 0.0;
};

struct AttackReport {
  std::string model_name;
  double benign_accuracy = 0.0;
  double attack_success_rate = 0.0;
  /// Spread across repeats; zero for a single run.
  double benign_accuracy_std = 0.0;
  double attack_success_rate_std = 0.0;
  std::vector<FoldMetrics> folds;
  std::vector<ThdProbe> thd;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

nlohmann::ordered_json to_json(const AttackReport& report);

/// Writes report.csv, report.txt and report.json into `dir`.
void write_report(const std::vector<AttackReport>& reports,
                  const std::filesystem::path& dir);

struct ReportRow {
  std::string model;
  double benign_accuracy = 0.0;
  double attack_success_rate = 0.0;
};

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path);

/// Shortest text that parses back to exactly `v`, always with a decimal
/// point or exponent ("1.0", "0.95").
std::string format_fraction(double v);
/// "95.00%".
std::string format_percent(double v);

}  // namespace backbay::eval
