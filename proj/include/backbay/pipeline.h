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

// End-to-end attack pipeline. Each stage reads its inputs from and writes
// its outputs to the run directory, so the subcommands compose:
//
//   <out>/dataset/      clean clips + manifest (with fold ids)
//   <out>/poisoned/     poisoned clips + manifest, trigger.wav,
//                       perturbation.wav
//   <out>/models/       fold<k>.bbdm, clean_fold<k>.bbdm
//   <out>/spectrograms/ probe<k>_clean.ppm, probe<k>_backdoored.ppm
//   <out>/report.{csv,txt,json}

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "backbay/audio_core.h"
#include "backbay/eval_suite.h"
#include "backbay/fp_sampler.h"
#include "backbay/poison_engine.h"
#include "backbay/poison_policy.h"
#include "backbay/victim_model.h"
#include "json.hpp"

namespace backbay::pipeline {

struct DatasetSource {
  enum class Kind { kSynthetic, kCorpus };
  Kind kind = Kind::kSynthetic;
  int n_speakers = 10;
  int clips_per_speaker = 200;
  double clip_ms = 500.0;
  std::string corpus_dir;
};

struct TriggerConfig {
  /// Optional 16 kHz WAV; a synthetic clap is used when empty.
  std::string path;
  double duration_ms = 100.0;
  double decay_tau_ms = 20.0;
};

struct EvalOptions {
  /// Stratified folds; fold 0 is the held-out test split by default.
  int folds = 5;
  /// Train and evaluate every fold instead of fold 0 only.
  bool all_folds = false;
  int thd_probes = 3;
  int thd_harmonics = 10;
  int thd_window = 4096;
  bool clean_baseline = true;
  std::string model_name = "mlp-backdoored";
};

struct PipelineConfig {
  DatasetSource dataset;
  PoisonPolicy poison;
  fp::DiffusionSchedule diffusion;
  fp::SamplerOptions sampler;
  audio::FeatureConfig features;
  std::vector<int> hidden{64};
  victim::TrainConfig train;
  poison::AttackObjectiveConfig objective;
  TriggerConfig trigger;
  EvalOptions eval;
  std::string output_dir = "out";
  std::optional<std::uint64_t> seed;

  /// Throws std::invalid_argument on any violated invariant, including a
  /// missing master seed.
  void validate() const;
  std::uint64_t master_seed() const;
};

/// Parses the JSON config; missing keys keep their defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
/// Canonical snapshot (every key, defaults filled in).
nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);
/// FNV-1a of the canonical snapshot minus output_dir.
std::uint64_t config_hash(const PipelineConfig& cfg);
std::string config_hash_hex(const PipelineConfig& cfg);

enum class Stage {
  kConfig = 2,
  kDataset = 3,
  kPoison = 4,
  kTrain = 5,
  kEvaluate = 6,
  kReport = 7,
};

class PipelineError : public std::runtime_error {
 public:
  PipelineError(Stage stage, const std::string& what)
      : std::runtime_error(what), stage_(stage) {}
  Stage stage() const { return stage_; }
  int exit_code() const { return static_cast<int>(stage_); }

 private:
  Stage stage_;
};

enum class CorpusErrc { kMissingDir, kEmpty, kBadFile };

class CorpusError : public std::runtime_error {
 public:
  CorpusError(CorpusErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CorpusErrc code() const { return code_; }

 private:
  CorpusErrc code_;
};

/// Speaker i is a mixture of three sinusoids whose frequencies and weights
/// depend only on i; each clip adds seeded jitter and white noise at 20 dB
/// SNR. Labels are 0..n_speakers-1.
poison::LabeledDataset synth_speaker_dataset(int n_speakers,
                                             int clips_per_speaker,
                                             double clip_ms,
                                             std::uint64_t seed);

/// dir/<speaker>/*.wav, labels by sorted speaker directory name.
poison::LabeledDataset ingest_corpus(const std::filesystem::path& dir);

/// Perturbation prefix of the requested length.
poison::PerturbationFn prefix_of(std::vector<float> perturbation);

// Stages. Each wraps failures in PipelineError carrying its stage.
void build_dataset(const PipelineConfig& cfg);
void poison_stage(const PipelineConfig& cfg);
void train_stage(const PipelineConfig& cfg);
std::vector<eval::AttackReport> evaluate_stage(const PipelineConfig& cfg);

/// Every stage in order. With repeats > 1 each repeat runs in
/// <out>/repeat_<r> under a derived seed and the top-level report holds
/// mean and standard deviation over repeats.
std::vector<eval::AttackReport> run_pipeline(const PipelineConfig& cfg,
                                             int repeats = 1);

/// Seed of repeat r; repeat 0 of a single run uses the master seed itself.
std::uint64_t repeat_seed(std::uint64_t master, int r, int repeats);

}  // namespace backbay::pipeline
