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

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "backbay/rng.h"

namespace backbay::victim {
namespace {

Eigen::MatrixXd Relu(const Eigen::MatrixXd& z) { return z.cwiseMax(0.0); }

// Row-wise softmax.
Eigen::MatrixXd Softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::RowVectorXd e =
        (logits.row(r).array() - logits.row(r).maxCoeff()).exp();
    out.row(r) = e / e.sum();
  }
  return out;
}

Eigen::MatrixXd Standardize(const MlpClassifier& model,
                            const Eigen::MatrixXd& inputs) {
  if (inputs.cols() != model.input_dim()) {
    throw ModelError("feature dimension " + std::to_string(inputs.cols()) +
                     " does not match model input " +
                     std::to_string(model.input_dim()));
  }
  Eigen::MatrixXd x = inputs;
  x.rowwise() -= model.input_mean.transpose();
  x.array().rowwise() /= model.input_scale.transpose().array();
  return x;
}

void CheckShapes(const Gradients& a, const std::vector<DenseLayer>& b) {
  if (a.size() != b.size()) throw ModelError("layer count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].weight.rows() != b[i].weight.rows() ||
        a[i].weight.cols() != b[i].weight.cols() ||
        a[i].bias.size() != b[i].bias.size()) {
      throw ModelError("parameter shape mismatch in layer " +
                       std::to_string(i));
    }
  }
}

Gradients ZerosLike(const std::vector<DenseLayer>& layers) {
  Gradients g;
  for (const auto& l : layers) {
    g.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

// Binary helpers, little-endian regardless of host order.
template <typename T>
void Put(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) &
                                    0xff));
  }
}

void PutF32(std::string& out, double v) {
  Put(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class Reader {
 public:
  Reader(std::vector<unsigned char> bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  template <typename T>
  T Get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw ModelError(path_ + ": truncated checkpoint");
    }
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double GetF32() {
    return std::bit_cast<float>(Get<std::uint32_t>());
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<unsigned char> bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<int> MlpClassifier::arch() const {
  std::vector<int> widths;
  if (layers.empty()) return widths;
  widths.push_back(input_dim());
  for (const auto& l : layers) widths.push_back(static_cast<int>(l.weight.rows()));
  return widths;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be > 0");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0 && adam_beta2 > 0.0 &&
        adam_beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be > 0");
}

MlpClassifier init_model(const std::vector<int>& arch,
                         const audio::FeatureConfig& features,
                         std::uint64_t seed) {
  if (arch.size() < 2) throw ModelError("architecture needs >= 2 widths");
  for (int w : arch) {
    if (w < 1) throw ModelError("layer widths must be positive");
  }
  Rng rng = Rng(seed).split("init");
  MlpClassifier model;
  model.features = features;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const int in = arch[l], out = arch[l + 1];
    const bool last = l + 2 == arch.size();
    const double limit =
        last ? std::sqrt(6.0 / (in + out)) : std::sqrt(6.0 / in);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) {
        layer.weight(r, c) = limit * (2.0 * rng.uniform() - 1.0);
      }
    }
    model.layers.push_back(std::move(layer));
  }
  model.input_mean = Eigen::VectorXd::Zero(arch.front());
  model.input_scale = Eigen::VectorXd::Ones(arch.front());
  return model;
}

Eigen::VectorXd pool_features(const audio::FeatureMatrix& features) {
  if (features.rows == 0) throw ModelError("cannot pool an empty feature matrix");
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(features.cols);
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t c = 0; c < features.cols; ++c) {
      pooled[c] += features.at(r, c);
    }
  }
  return pooled / static_cast<double>(features.rows);
}

Eigen::VectorXd forward_logits(const MlpClassifier& model,
                               const Eigen::VectorXd& pooled) {
  Eigen::MatrixXd a = Standardize(model, pooled.transpose());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    a = l + 1 < model.layers.size() ? Relu(z) : z;
  }
  return a.row(0).transpose();
}

std::vector<double> forward_probs(const MlpClassifier& model,
                                  const Eigen::VectorXd& pooled) {
  Eigen::MatrixXd p = Softmax(forward_logits(model, pooled).transpose());
  return {p.data(), p.data() + p.size()};
}

std::vector<double> forward_probs(const MlpClassifier& model,
                                  const audio::FeatureMatrix& features) {
  return forward_probs(model, pool_features(features));
}

LossAndGrad loss_and_grad(const MlpClassifier& model,
                          const Eigen::MatrixXd& inputs,
                          std::span<const int> labels) {
  const auto batch = inputs.rows();
  if (batch == 0 || static_cast<std::size_t>(batch) != labels.size()) {
    throw ModelError("batch inputs and labels disagree in size");
  }
  for (int y : labels) {
    if (y < 0 || y >= model.n_classes()) {
      throw ModelError("label " + std::to_string(y) + " out of range");
    }
  }

  // Forward, keeping every activation and pre-activation.
  std::vector<Eigen::MatrixXd> acts{Standardize(model, inputs)};
  std::vector<Eigen::MatrixXd> pre;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = acts.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    pre.push_back(z);
    acts.push_back(l + 1 < model.layers.size() ? Relu(z) : z);
  }
  Eigen::MatrixXd probs = Softmax(acts.back());

  LossAndGrad out;
  Eigen::MatrixXd delta = probs;
  for (Eigen::Index i = 0; i < batch; ++i) {
    out.loss -= std::log(std::max(probs(i, labels[i]), 1e-300));
    delta(i, labels[i]) -= 1.0;
  }
  out.loss /= static_cast<double>(batch);
  delta /= static_cast<double>(batch);

  out.grads.resize(model.layers.size());
  for (std::size_t l = model.layers.size(); l-- > 0;) {
    out.grads[l].weight = delta.transpose() * acts[l];
    out.grads[l].bias = delta.colwise().sum().transpose();
    if (l > 0) {
      delta = (delta * model.layers[l].weight).array() *
              (pre[l - 1].array() > 0.0).cast<double>();
    }
  }
  return out;
}

AdamState make_adam_state(const MlpClassifier& model) {
  return {ZerosLike(model.layers), ZerosLike(model.layers), 0};
}

void adam_step(MlpClassifier& model, AdamState& state, const Gradients& grads,
               const TrainConfig& cfg) {
  CheckShapes(grads, model.layers);
  CheckShapes(state.m, model.layers);
  CheckShapes(state.v, model.layers);
  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= cfg.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + cfg.adam_eps);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weight, state.m[l].weight, state.v[l].weight,
           grads[l].weight);
    update(model.layers[l].bias, state.m[l].bias, state.v[l].bias,
           grads[l].bias);
  }
}

TrainOutcome train_on_features(const Eigen::MatrixXd& inputs,
                               std::span<const int> labels, int n_classes,
                               const std::vector<int>& hidden,
                               const audio::FeatureConfig& features,
                               const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(inputs.rows());
  if (n == 0) throw ModelError("cannot train on an empty dataset");
  if (labels.size() != n) throw ModelError("inputs and labels disagree");

  std::vector<int> arch{static_cast<int>(inputs.cols())};
  arch.insert(arch.end(), hidden.begin(), hidden.end());
  arch.push_back(n_classes);

  TrainOutcome outcome{init_model(arch, features, cfg.seed), {}};
  MlpClassifier& model = outcome.model;
  model.input_mean = inputs.colwise().mean().transpose();
  Eigen::VectorXd var =
      (inputs.rowwise() - model.input_mean.transpose()).colwise().squaredNorm() /
      static_cast<double>(n);
  model.input_scale = var.cwiseSqrt().unaryExpr(
      [](double s) { return s > 1e-8 ? s : 1.0; });

  AdamState state = make_adam_state(model);
  Rng shuffle_rng = Rng(cfg.seed).split("shuffle");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n - 1; i > 0; --i) {
      auto j = static_cast<std::size_t>(shuffle_rng.uniform() * (i + 1));
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t count = std::min(bs, n - start);
      Eigen::MatrixXd batch(count, inputs.cols());
      std::vector<int> batch_labels(count);
      for (std::size_t k = 0; k < count; ++k) {
        batch.row(k) = inputs.row(order[start + k]);
        batch_labels[k] = labels[order[start + k]];
      }
      auto lg = loss_and_grad(model, batch, batch_labels);
      adam_step(model, state, lg.grads, cfg);
      epoch_loss += lg.loss * count;
    }
    outcome.loss_history.push_back(epoch_loss / n);
  }
  return outcome;
}

Eigen::MatrixXd dataset_features(const poison::LabeledDataset& ds,
                                 const audio::FeatureConfig& features) {
  Eigen::MatrixXd out(ds.size(), features.n_mfcc);
  ParallelFor(ds.size(), [&](std::size_t i) {
    out.row(i) = pool_features(audio::mfcc(ds.items[i].clip, features));
  });
  return out;
}

TrainOutcome train(const poison::LabeledDataset& ds, const TrainConfig& cfg,
                   const std::vector<int>& hidden,
                   const audio::FeatureConfig& features) {
  if (ds.size() == 0) throw ModelError("cannot train on an empty dataset");
  std::vector<int> labels;
  for (const auto& item : ds.items) labels.push_back(item.label);
  int n_classes = std::max(ds.n_classes,
                           *std::max_element(labels.begin(), labels.end()) + 1);
  return train_on_features(dataset_features(ds, features), labels, n_classes,
                           hidden, features, cfg);
}

std::vector<int> stratified_folds(std::span<const int> labels, int k,
                                  std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
  if (labels.size() < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("k = " + std::to_string(k) +
                                " exceeds the dataset size " +
                                std::to_string(labels.size()));
  }
  int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> by_label(max_label + 1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_label.at(labels[i]).push_back(i);
  }
  Rng rng = Rng(seed).split("folds");
  std::vector<int> folds(labels.size(), -1);
  // Deal each shuffled class round-robin, continuing where the previous
  // class stopped so fold totals stay balanced too.
  int next = 0;
  for (auto& members : by_label) {
    for (std::size_t i = members.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(rng.uniform() * i);
      std::swap(members[i - 1], members[j]);
    }
    for (std::size_t idx : members) {
      folds[idx] = next;
      next = (next + 1) % k;
    }
  }
  return folds;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of nothing");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

std::vector<FoldRecord> kfold_cv(const poison::LabeledDataset& ds, int k,
                                 const TrainConfig& cfg,
                                 const std::vector<int>& hidden,
                                 const audio::FeatureConfig& features) {
  std::vector<int> labels;
  for (const auto& item : ds.items) labels.push_back(item.label);
  auto folds = stratified_folds(labels, k, cfg.seed);
  Eigen::MatrixXd x = dataset_features(ds, features);
  int n_classes = std::max(ds.n_classes,
                           *std::max_element(labels.begin(), labels.end()) + 1);

  std::vector<FoldRecord> records;
  for (int f = 0; f < k; ++f) {
    FoldRecord rec;
    rec.fold = f;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      (folds[i] == f ? rec.test_indices : rec.train_indices).push_back(i);
    }
    Eigen::MatrixXd train_x(rec.train_indices.size(), x.cols());
    std::vector<int> train_y;
    for (std::size_t r = 0; r < rec.train_indices.size(); ++r) {
      train_x.row(r) = x.row(rec.train_indices[r]);
      train_y.push_back(labels[rec.train_indices[r]]);
    }
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = Rng(cfg.seed).split(static_cast<std::uint64_t>(f))();
    rec.model = train_on_features(train_x, train_y, n_classes, hidden,
                                  features, fold_cfg)
                    .model;
    std::size_t correct = 0;
    for (std::size_t i : rec.test_indices) {
      Eigen::VectorXd row = x.row(i).transpose();
      correct += argmax(forward_probs(rec.model, row)) == labels[i];
    }
    rec.benign_accuracy =
        rec.test_indices.empty()
            ? 0.0
            : static_cast<double>(correct) / rec.test_indices.size();
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<double> predict_probs(const MlpClassifier& model,
                                  const audio::AudioClip& clip) {
  return forward_probs(model, audio::mfcc(clip, model.features));
}

int predict(const MlpClassifier& model, const audio::AudioClip& clip) {
  return argmax(predict_probs(model, clip));
}

void save_checkpoint(const MlpClassifier& model,
                     const std::filesystem::path& path,
                     const CheckpointMeta& meta) {
  std::string out = "BBDM";
  Put<std::uint32_t>(out, kCheckpointVersion);
  const auto widths = model.arch();
  Put<std::uint32_t>(out, static_cast<std::uint32_t>(widths.size()));
  for (int w : widths) Put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  for (int v : {model.features.frame_size, model.features.hop,
                model.features.n_mels, model.features.n_mfcc}) {
    Put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  Put<std::uint64_t>(out, meta.seed);
  Put<std::uint64_t>(out, meta.config_hash);
  for (double v : model.input_mean) PutF32(out, v);
  for (double v : model.input_scale) PutF32(out, v);
  for (const auto& layer : model.layers) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        PutF32(out, layer.weight(r, c));
      }
    }
    for (double b : layer.bias) PutF32(out, b);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
    throw ModelError("cannot write checkpoint " + path.string());
  }
}

MlpClassifier load_checkpoint(const std::filesystem::path& path,
                              CheckpointMeta* meta) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ModelError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "BBDM", 4) != 0) {
    throw ModelError(path.string() + ": not a BBDM checkpoint");
  }
  bytes.erase(bytes.begin(), bytes.begin() + 4);
  Reader in(std::move(bytes), path.string());
  if (auto version = in.Get<std::uint32_t>(); version != kCheckpointVersion) {
    throw ModelError(path.string() + ": unsupported checkpoint version " +
                     std::to_string(version));
  }
  auto n_widths = in.Get<std::uint32_t>();
  if (n_widths < 2 || n_widths > 64) {
    throw ModelError(path.string() + ": bad architecture header");
  }
  std::vector<int> widths;
  for (std::uint32_t i = 0; i < n_widths; ++i) {
    auto w = in.Get<std::uint32_t>();
    if (w == 0 || w > (1u << 20)) {
      throw ModelError(path.string() + ": bad layer width");
    }
    widths.push_back(static_cast<int>(w));
  }
  MlpClassifier model;
  model.features.frame_size = static_cast<int>(in.Get<std::uint32_t>());
  model.features.hop = static_cast<int>(in.Get<std::uint32_t>());
  model.features.n_mels = static_cast<int>(in.Get<std::uint32_t>());
  model.features.n_mfcc = static_cast<int>(in.Get<std::uint32_t>());
  CheckpointMeta m;
  m.seed = in.Get<std::uint64_t>();
  m.config_hash = in.Get<std::uint64_t>();
  if (meta != nullptr) *meta = m;

  model.input_mean.resize(widths.front());
  model.input_scale.resize(widths.front());
  for (auto& v : model.input_mean) v = in.GetF32();
  for (auto& v : model.input_scale) v = in.GetF32();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer{Eigen::MatrixXd(widths[l + 1], widths[l]),
                     Eigen::VectorXd(widths[l + 1])};
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = in.GetF32();
      }
    }
    for (auto& b : layer.bias) b = in.GetF32();
    model.layers.push_back(std::move(layer));
  }
  if (!in.done()) throw ModelError(path.string() + ": trailing bytes");
  return model;
}

}  // namespace backbay::victim
