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

// Desk-scale victim: mean-pooled MFCC -> dense/ReLU stack -> softmax,
// trained with sparse categorical cross-entropy and Adam.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "backbay/audio_core.h"
#include "backbay/poison_engine.h"

namespace backbay::victim {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct MlpClassifier {
  std::vector<DenseLayer> layers;
  /// Inputs are standardised as (x - input_mean) / input_scale.
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  audio::FeatureConfig features;

  int input_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().weight.cols());
  }
  int n_classes() const {
    return layers.empty() ? 0 : static_cast<int>(layers.back().weight.rows());
  }
  /// Layer widths, input first.
  std::vector<int> arch() const;
};

using Gradients = std::vector<DenseLayer>;

struct TrainConfig {
  int epochs = 15;
  double learning_rate = 1e-3;
  int batch_size = 8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  Gradients m;
  Gradients v;
  long step = 0;
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// He-uniform hidden layers, Glorot-uniform output, zero biases, identity
/// standardisation. `arch` lists every width, input first.
MlpClassifier init_model(const std::vector<int>& arch,
                         const audio::FeatureConfig& features,
                         std::uint64_t seed);

/// Mean over frames.
Eigen::VectorXd pool_features(const audio::FeatureMatrix& features);

Eigen::VectorXd forward_logits(const MlpClassifier& model,
                               const Eigen::VectorXd& pooled);
std::vector<double> forward_probs(const MlpClassifier& model,
                                  const Eigen::VectorXd& pooled);
std::vector<double> forward_probs(const MlpClassifier& model,
                                  const audio::FeatureMatrix& features);

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

/// Mean -log p[y] over the batch (rows of `inputs` are pooled features) and
/// its gradient by backpropagation.
LossAndGrad loss_and_grad(const MlpClassifier& model,
                          const Eigen::MatrixXd& inputs,
                          std::span<const int> labels);

AdamState make_adam_state(const MlpClassifier& model);

/// Bias-corrected Adam update, in place.
void adam_step(MlpClassifier& model, AdamState& state, const Gradients& grads,
               const TrainConfig& cfg);

struct TrainOutcome {
  MlpClassifier model;
  /// Mean training loss per epoch.
  std::vector<double> loss_history;
};

/// Seeded mini-batch Adam on pooled features. Standardisation statistics
/// come from `inputs`.
TrainOutcome train_on_features(const Eigen::MatrixXd& inputs,
                               std::span<const int> labels, int n_classes,
                               const std::vector<int>& hidden,
                               const audio::FeatureConfig& features,
                               const TrainConfig& cfg);

/// Pooled MFCC rows for every item.
Eigen::MatrixXd dataset_features(const poison::LabeledDataset& ds,
                                 const audio::FeatureConfig& features);

TrainOutcome train(const poison::LabeledDataset& ds, const TrainConfig& cfg,
                   const std::vector<int>& hidden,
                   const audio::FeatureConfig& features = {});

/// Seeded stratified fold id in [0, k) for each label.
std::vector<int> stratified_folds(std::span<const int> labels, int k,
                                  std::uint64_t seed);

struct FoldRecord {
  int fold = 0;
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  MlpClassifier model;
  double benign_accuracy = 0.0;
};

std::vector<FoldRecord> kfold_cv(const poison::LabeledDataset& ds, int k,
                                 const TrainConfig& cfg,
                                 const std::vector<int>& hidden,
                                 const audio::FeatureConfig& features = {});

/// Index of the largest entry; ties go to the smallest index.
int argmax(std::span<const double> values);

std::vector<double> predict_probs(const MlpClassifier& model,
                                  const audio::AudioClip& clip);
int predict(const MlpClassifier& model, const audio::AudioClip& clip);

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
};

/// "BBDM" | u32 version | u32 n_widths | u32 widths[] | u32 frame_size, hop,
/// n_mels, n_mfcc | u64 seed | u64 config_hash | f32 input_mean[] |
/// f32 input_scale[] | per layer f32 weight (row-major) then f32 bias.
/// All little-endian.
void save_checkpoint(const MlpClassifier& model,
                     const std::filesystem::path& path,
                     const CheckpointMeta& meta = {});
MlpClassifier load_checkpoint(const std::filesystem::path& path,
                              CheckpointMeta* meta = nullptr);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace backbay::victim
