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

#include <set>

namespace backbay {

/// Attacker configuration shared by the poisoner and the trigger sampler.
struct PoisonPolicy {
  /// Labels eligible for replacement. Empty means every label except
  /// dirty_label.
  std::set<int> target_labels;
  int dirty_label = 9;
  double flip_prob = 0.1;
  double replace_prob = 1.0;
  double trigger_alpha = 0.1;
  /// Probability that a sampler chain starts at prior_mean instead of the
  /// trigger.
  double poison_rate = 0.1;
  double prior_mean = 0.0;

  bool is_target(int label) const {
    if (target_labels.empty()) return label != dirty_label;
    return target_labels.count(label) != 0;
  }

  /// Throws std::invalid_argument when an invariant does not hold.
  void validate() const;
};

}  // namespace backbay
