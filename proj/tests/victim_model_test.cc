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

#include "backbay/victim_model.h"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "backbay/rng.h"
#include "gradient_check.h"
#include "test_util.h"

namespace backbay::victim {
namespace {

using testing::ReadBytes;
using testing::Sine;
using testing::TempDir;
using testing::WriteBytes;

MlpClassifier ZeroModel(const std::vector<int>& arch) {
  MlpClassifier m = init_model(arch, {}, 1);
  for (auto& l : m.layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  return m;
}

TEST(ForwardTest, ZeroWeightsGiveUniform) {
  auto m = ZeroModel({13, 64, 10});
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(13, -2, 3);
  for (double p : forward_probs(m, x)) EXPECT_NEAR(p, 0.1, 1e-15);
}

TEST(ForwardTest, HandComputed) {
  auto m = ZeroModel({2, 1, 2});
  m.layers[0].weight << 0.5, -1.0;
  m.layers[0].bias << 0.2;
  m.layers[1].weight << 1.0, -2.0;
  m.layers[1].bias << 0.1, 0.3;
  Eigen::VectorXd x(2);
  x << 1.0, 0.3;
  // h = relu(0.5 - 0.3 + 0.2) = 0.4; logits = (0.5, -0.5).
  auto p = forward_probs(m, x);
  double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / (e + 1.0), 1e-15);
  // Negative pre-activation is cut by the ReLU.
  x << -1.0, 0.0;
  p = forward_probs(m, x);
  double q = std::exp(0.1) / (std::exp(0.1) + std::exp(0.3));
  EXPECT_NEAR(p[0], q, 1e-15);
}

TEST(ForwardTest, SoftmaxSumsToOne) {
  Rng rng(2);
  auto m = init_model({13, 64, 10}, {}, 5);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x(13);
    for (auto& v : x) v = rng.normal(0, 30);
    auto p = forward_probs(m, x);
    double sum = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  EXPECT_THROW(forward_probs(m, Eigen::VectorXd::Zero(12)), ModelError);
}

TEST(LossTest, PerfectAndUniform) {
  auto m = ZeroModel({3, 4, 10});
  Eigen::MatrixXd x = Eigen::MatrixXd::Ones(4, 3);
  std::vector<int> y{0, 3, 7, 9};
  EXPECT_NEAR(loss_and_grad(m, x, y).loss, std::log(10.0), 1e-12);
  EXPECT_NEAR(loss_and_grad(m, x, y).loss, 2.302585, 1e-6);

  m.layers[1].bias(2) = 60.0;
  std::vector<int> all_two(4, 2);
  EXPECT_LT(loss_and_grad(m, x, all_two).loss, 1e-20);

  std::vector<int> bad{0, 1, 10, 2};
  EXPECT_THROW(loss_and_grad(m, x, bad), ModelError);
  std::vector<int> short_y{0};
  EXPECT_THROW(loss_and_grad(m, x, short_y), ModelError);
}

TEST(LossTest, GradientMatchesFiniteDifferences) {
  for (std::uint64_t batch = 0; batch < 5; ++batch) {
    auto r = testing::CheckGradients(batch);
    EXPECT_LT(r.worst, 1e-4) << "batch " << batch;
    // Kinks inside the stencil should be rare.
    EXPECT_LE(r.skipped, (r.checked + r.skipped) / 100) << "batch " << batch;
  }
}

TEST(AdamTest, FirstStep) {
  auto m = ZeroModel({1, 1});
  auto state = make_adam_state(m);
  TrainConfig cfg;
  Gradients g = ZeroModel({1, 1}).layers;
  adam_step(m, state, g, cfg);
  EXPECT_EQ(m.layers[0].weight(0, 0), 0.0);
  EXPECT_EQ(state.step, 1);

  m = ZeroModel({1, 1});
  state = make_adam_state(m);
  g[0].weight(0, 0) = 1.0;
  adam_step(m, state, g, cfg);
  // m_hat = 1, v_hat = 1: w = -lr / (1 + eps).
  EXPECT_NEAR(m.layers[0].weight(0, 0), -0.001, 1e-9);
  EXPECT_NEAR(m.layers[0].weight(0, 0), -0.001 / (1 + 1e-7), 1e-15);
  EXPECT_EQ(m.layers[0].bias(0), 0.0);

  auto m2 = ZeroModel({1, 1});
  auto s2 = make_adam_state(m2);
  adam_step(m2, s2, g, cfg);
  EXPECT_EQ(m2.layers[0].weight, m.layers[0].weight);

  Gradients wrong = ZeroModel({2, 1}).layers;
  EXPECT_THROW(adam_step(m2, s2, wrong, cfg), ModelError);
}

// Two Gaussian blobs separated along the first axis.
void ToyData(Eigen::MatrixXd& x, std::vector<int>& y, std::uint64_t seed) {
  Rng rng(seed);
  const int n = 400;
  x.resize(n, 13);
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % 2;
    for (int j = 0; j < 13; ++j) x(i, j) = rng.normal(0, 1);
    x(i, 0) += y[i] == 1 ? 3.0 : -3.0;
  }
}

TEST(TrainTest, ZeroEpochsIsInitialisation) {
  Eigen::MatrixXd x;
  std::vector<int> y;
  ToyData(x, y, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 42;
  auto out = train_on_features(x, y, 2, {64}, {}, cfg);
  auto init = init_model({13, 64, 2}, {}, 42);
  for (std::size_t l = 0; l < init.layers.size(); ++l) {
    EXPECT_EQ(out.model.layers[l].weight, init.layers[l].weight);
    EXPECT_EQ(out.model.layers[l].bias, init.layers[l].bias);
  }
  EXPECT_TRUE(out.loss_history.empty());
}

TEST(TrainTest, SeparableToyReachesHighAccuracy) {
  Eigen::MatrixXd x;
  std::vector<int> y;
  ToyData(x, y, 2);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.learning_rate = 1e-3;
  cfg.seed = 3;
  auto out = train_on_features(x, y, 2, {64}, {}, cfg);
  ASSERT_EQ(out.loss_history.size(), 15u);
  EXPECT_LT(out.loss_history.back(), out.loss_history.front());
  int correct = 0;
  for (int i = 0; i < x.rows(); ++i) {
    Eigen::VectorXd row = x.row(i).transpose();
    correct += argmax(forward_probs(out.model, row)) == y[i];
  }
  EXPECT_GE(correct / static_cast<double>(x.rows()), 0.95);

  auto again = train_on_features(x, y, 2, {64}, {}, cfg);
  EXPECT_EQ(again.loss_history, out.loss_history);
  EXPECT_EQ(again.model.layers[0].weight, out.model.layers[0].weight);
}

TEST(TrainTest, ConfigChecks) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  EXPECT_NO_THROW(cfg.validate());
  Eigen::MatrixXd x;
  std::vector<int> y;
  ToyData(x, y, 4);
  cfg.epochs = 2;
  auto out = train_on_features(x, y, 2, {64}, {}, cfg);
  for (double l : out.loss_history) EXPECT_TRUE(std::isfinite(l));

  cfg = {};
  cfg.epochs = -1;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.adam_beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.learning_rate = 0.0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);

  EXPECT_THROW(train(poison::LabeledDataset{}, TrainConfig{}, {64}),
               ModelError);
}

TEST(FoldsTest, StratifiedPartition) {
  std::vector<int> labels;
  for (int c = 0; c < 7; ++c) {
    for (int i = 0; i < 23 + 3 * c; ++i) labels.push_back(c);
  }
  const int k = 5;
  auto folds = stratified_folds(labels, k, 9);
  ASSERT_EQ(folds.size(), labels.size());
  std::map<std::pair<int, int>, int> count;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ASSERT_GE(folds[i], 0);
    ASSERT_LT(folds[i], k);
    ++count[{labels[i], folds[i]}];
  }
  for (int c = 0; c < 7; ++c) {
    int lo = 1 << 30, hi = 0;
    for (int f = 0; f < k; ++f) {
      lo = std::min(lo, count[{c, f}]);
      hi = std::max(hi, count[{c, f}]);
    }
    EXPECT_LE(hi - lo, 1) << "class " << c;
  }
  EXPECT_EQ(folds, stratified_folds(labels, k, 9));
  EXPECT_NE(folds, stratified_folds(labels, k, 10));
  std::vector<int> few{0, 1, 0};
  EXPECT_THROW(stratified_folds(few, 5, 1), std::invalid_argument);
  EXPECT_THROW(stratified_folds(labels, 1, 1), std::invalid_argument);
}

poison::LabeledDataset ToneDataset() {
  poison::LabeledDataset ds;
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    int label = i % 3;
    double f = 300.0 * (label + 1) * (1.0 + 0.01 * rng.normal(0, 1));
    ds.add(Sine(f, 0.5, 2048, rng.uniform() * 6.28), label,
           "tone" + std::to_string(i));
  }
  return ds;
}

TEST(FoldsTest, KFoldCv) {
  auto ds = ToneDataset();
  TrainConfig cfg;
  cfg.seed = 5;
  auto recs = kfold_cv(ds, 5, cfg, {16});
  ASSERT_EQ(recs.size(), 5u);
  std::set<std::size_t> seen;
  for (const auto& r : recs) {
    EXPECT_EQ(r.train_indices.size() + r.test_indices.size(), ds.size());
    for (std::size_t i : r.test_indices) EXPECT_TRUE(seen.insert(i).second);
    EXPECT_GE(r.benign_accuracy, 0.0);
    EXPECT_LE(r.benign_accuracy, 1.0);
  }
  EXPECT_EQ(seen.size(), ds.size());
  EXPECT_THROW(kfold_cv(ds.select({0, 1, 2}), 5, cfg, {16}),
               std::invalid_argument);
}

TEST(PredictTest, ArgmaxAndConsistency) {
  std::vector<double> a{0.9, 0.1}, tie{0.5, 0.5}, three{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax(a), 0);
  EXPECT_EQ(argmax(tie), 0);
  EXPECT_EQ(argmax(three), 1);

  auto m = init_model({13, 32, 10}, {}, 11);
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    audio::AudioClip clip;
    clip.samples.resize(2048);
    for (auto& s : clip.samples) s = static_cast<float>(rng.uniform() - 0.5);
    auto probs = forward_probs(m, audio::mfcc(clip, m.features));
    int label = predict(m, clip);
    EXPECT_EQ(label, argmax(probs));
    // Positive rescaling of the logits keeps the argmax.
    MlpClassifier scaled = m;
    scaled.layers.back().weight *= 3.7;
    scaled.layers.back().bias *= 3.7;
    EXPECT_EQ(predict(scaled, clip), label);
  }
}

TEST(CheckpointTest, RoundTripAndErrors) {
  TempDir dir;
  Eigen::MatrixXd x;
  std::vector<int> y;
  ToyData(x, y, 7);
  TrainConfig cfg;
  cfg.epochs = 1;
  auto m = train_on_features(x, y, 2, {8, 4}, {1024, 512, 20, 10}, cfg).model;
  save_checkpoint(m, dir / "m.bbdm", {77, 0xabcdef});

  std::string bytes = ReadBytes(dir / "m.bbdm");
  EXPECT_EQ(bytes.substr(0, 4), "BBDM");
  EXPECT_EQ(bytes[4], 1);

  CheckpointMeta meta;
  auto back = load_checkpoint(dir / "m.bbdm", &meta);
  EXPECT_EQ(meta.seed, 77u);
  EXPECT_EQ(meta.config_hash, 0xabcdefu);
  EXPECT_EQ(back.arch(), (std::vector<int>{13, 8, 4, 2}));
  EXPECT_EQ(back.features.frame_size, 1024);
  EXPECT_EQ(back.features.n_mfcc, 10);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].weight, m.layers[l].weight.cast<float>().cast<double>());
    EXPECT_EQ(back.layers[l].bias, m.layers[l].bias.cast<float>().cast<double>());
  }
  EXPECT_EQ(back.input_mean, m.input_mean.cast<float>().cast<double>());

  // A float32 model survives a second round trip unchanged.
  save_checkpoint(back, dir / "m2.bbdm", {77, 0xabcdef});
  EXPECT_EQ(ReadBytes(dir / "m2.bbdm"), bytes);

  WriteBytes(dir / "bad.bbdm", "XXXX" + bytes.substr(4));
  EXPECT_THROW(load_checkpoint(dir / "bad.bbdm"), ModelError);
  std::string v2 = bytes;
  v2[4] = 2;
  WriteBytes(dir / "v2.bbdm", v2);
  EXPECT_THROW(load_checkpoint(dir / "v2.bbdm"), ModelError);
  WriteBytes(dir / "short.bbdm", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(dir / "short.bbdm"), ModelError);
  WriteBytes(dir / "long.bbdm", bytes + "x");
  EXPECT_THROW(load_checkpoint(dir / "long.bbdm"), ModelError);
  EXPECT_THROW(load_checkpoint(dir / "missing.bbdm"), ModelError);
}

}  // namespace
}  // namespace backbay::victim
