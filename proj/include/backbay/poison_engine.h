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
#include "backbay/poison_policy.h"
#include "backbay/rng.h"

namespace backbay::poison {

struct LabeledItem {
  audio::AudioClip clip;
  int label = 0;
  /// Label before any poisoning; carried into manifests.
  int original_label = 0;
  /// Stable item name, used as the WAV file stem on disk.
  std::string name;
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  std::vector<bool> poison_mask;
  int n_classes = 0;

  std::size_t size() const { return items.size(); }
  void add(audio::AudioClip clip, int label, std::string name);
  /// Subset by index, keeping order and mask bits.
  LabeledDataset select(const std::vector<std::size_t>& indices) const;
  void validate() const;
};

/// Produces a perturbation of exactly the requested length.
using PerturbationFn = std::function<std::vector<float>(std::size_t)>;

/// Returns policy.dirty_label when `label` is a target and the draw falls
/// below replace_prob; otherwise `label`.
int replace_label(int label, const PoisonPolicy& policy, Rng& rng);

/// Per item, with probability flip_prob: relabel via replace_label and mix
/// clamp(x + trigger_alpha * perturbation, -1, 1). Item i only draws from
/// rng.split(i). The output mask marks exactly the items that changed.
LabeledDataset poison_dataset(const LabeledDataset& ds,
                              const PoisonPolicy& policy,
                              const PerturbationFn& perturbation, Rng rng);

/// Mixes the perturbation into every item, labels untouched. Used to build
/// the fully triggered test copy for attack success rate.
LabeledDataset apply_trigger(const LabeledDataset& ds, double trigger_alpha,
                             const PerturbationFn& perturbation);

enum class Distance { kMse, kLinf };

struct AttackObjectiveConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  Distance distance = Distance::kMse;
};

struct ObjectiveTerms {
  double total = 0.0;
  double poison_loss = 0.0;
  double benign_loss = 0.0;
  double distance_term = 0.0;
};

using ProbsFn = std::function<std::vector<double>(const audio::AudioClip&)>;

double waveform_distance(const audio::AudioClip& a, const audio::AudioClip& b,
                         Distance d);

/// poison_loss + lambda1 * benign_loss + lambda2 * mean D(x, x'), with the
/// losses as mean cross-entropy of the model over each dataset.
ObjectiveTerms attack_objective(const ProbsFn& predict_probs,
                                const LabeledDataset& benign,
                                const LabeledDataset& poisoned,
                                const AttackObjectiveConfig& cfg);

// On-disk datasets: <dir>/manifest.jsonl plus <dir>/wav/<name>.wav. The
// first manifest line is a header; each further line is one item.

struct ManifestHeader {
  std::uint64_t seed = 0;
  std::string config_hash;
  int n_classes = 0;
  std::string stage;
};

struct ManifestRecord {
  std::string path;
  int original_label = 0;
  int label = 0;
  bool poisoned = false;
  int fold = -1;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes WAVs and the manifest. `folds` may be empty.
void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds,
                  const ManifestHeader& header,
                  const std::vector<int>& folds = {});

struct LoadedDataset {
  LabeledDataset dataset;
  ManifestHeader header;
  std::vector<int> folds;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& file,
                                          ManifestHeader* header = nullptr);

}  // namespace backbay::poison
