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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <string_view>

namespace backbay {

/// Counter-based splittable generator (SplitMix64 over a keyed counter).
///
/// A stream is fully determined by its key, so `split()` yields independent
/// child streams whose output does not depend on how many values the parent
/// has already produced. Work that is fanned out across threads derives one
/// child per work item and stays bit-identical regardless of thread count.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed) : key_(Mix(seed)), seed_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() { return Mix(key_ + kGolden * ++counter_); }

  /// Child stream for work item `stream`. Does not advance this stream.
  Rng split(std::uint64_t stream) const;
  /// Child stream named by a label, e.g. split("sampler").
  Rng split(std::string_view label) const;

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double normal(double mean, double stddev);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t Mix(std::uint64_t z);

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  Rng(std::uint64_t key, std::uint64_t seed, int) : key_(key), seed_(seed) {}

  std::uint64_t key_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// FNV-1a, used for labels and config hashes.
std::uint64_t Fnv1a64(std::string_view bytes);

/// Worker count: BACKBAY_THREADS when set, else the hardware concurrency.
std::size_t WorkerCount();

/// Runs body(i) for i in [0, n) over up to WorkerCount() threads.
void ParallelFor(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace backbay
