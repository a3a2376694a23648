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

#include "backbay/poison_engine.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace backbay {

void PoisonPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(flip_prob) || !prob(replace_prob) || !prob(poison_rate)) {
    throw std::invalid_argument("PoisonPolicy: probabilities must be in [0,1]");
  }
  if (!(trigger_alpha >= 0.0) || !std::isfinite(trigger_alpha)) {
    throw std::invalid_argument("PoisonPolicy: trigger_alpha must be >= 0");
  }
  if (target_labels.count(dirty_label) != 0) {
    throw std::invalid_argument(
        "PoisonPolicy: dirty_label must differ from the target labels");
  }
}

namespace poison {
namespace {

void MixInto(audio::AudioClip& clip, double alpha,
             const std::vector<float>& perturbation) {
  if (perturbation.size() != clip.samples.size()) {
    throw std::invalid_argument(
        "perturbation length " + std::to_string(perturbation.size()) +
        " does not match clip length " + std::to_string(clip.samples.size()));
  }
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    double v = clip.samples[i] + alpha * perturbation[i];
    clip.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
}

double CrossEntropy(const std::vector<double>& probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw std::out_of_range("label outside the model's classes");
  }
  return -std::log(std::max(probs[label], 1e-300));
}

}  // namespace

void LabeledDataset::add(audio::AudioClip clip, int label, std::string name) {
  items.push_back({std::move(clip), label, label, std::move(name)});
  poison_mask.push_back(false);
  n_classes = std::max(n_classes, label + 1);
}

LabeledDataset LabeledDataset::select(
    const std::vector<std::size_t>& indices) const {
  LabeledDataset out;
  out.n_classes = n_classes;
  out.items.reserve(indices.size());
  for (std::size_t i : indices) {
    out.items.push_back(items.at(i));
    out.poison_mask.push_back(poison_mask.at(i));
  }
  return out;
}

void LabeledDataset::validate() const {
  if (poison_mask.size() != items.size()) {
    throw std::invalid_argument("LabeledDataset: mask length mismatch");
  }
  for (const auto& item : items) {
    if (item.label < 0 || item.label >= n_classes) {
      throw std::invalid_argument("LabeledDataset: label out of range");
    }
  }
}

int replace_label(int label, const PoisonPolicy& policy, Rng& rng) {
  if (policy.is_target(label) && rng.uniform() < policy.replace_prob) {
    return policy.dirty_label;
  }
  return label;
}

LabeledDataset poison_dataset(const LabeledDataset& ds,
                              const PoisonPolicy& policy,
                              const PerturbationFn& perturbation, Rng rng) {
  policy.validate();
  ds.validate();
  LabeledDataset out = ds;
  out.n_classes = std::max(ds.n_classes, policy.dirty_label + 1);
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    auto& item = out.items[i];
    Rng item_rng = rng.split(static_cast<std::uint64_t>(i));
    bool changed = false;
    if (item_rng.uniform() < policy.flip_prob) {
      int label = replace_label(item.label, policy, item_rng);
      changed = label != item.label;
      item.label = label;
      std::vector<float> before = item.clip.samples;
      MixInto(item.clip, policy.trigger_alpha,
              perturbation(item.clip.samples.size()));
      changed = changed || before != item.clip.samples;
    }
    out.poison_mask[i] = changed;
  }
  return out;
}

LabeledDataset apply_trigger(const LabeledDataset& ds, double trigger_alpha,
                             const PerturbationFn& perturbation) {
  LabeledDataset out = ds;
  for (std::size_t i = 0; i < out.items.size(); ++i) {
    auto& clip = out.items[i].clip;
    std::vector<float> before = clip.samples;
    MixInto(clip, trigger_alpha, perturbation(clip.samples.size()));
    out.poison_mask[i] = before != clip.samples;
  }
  return out;
}

double waveform_distance(const audio::AudioClip& a, const audio::AudioClip& b,
                         Distance d) {
  if (a.samples.size() != b.samples.size()) {
    throw std::invalid_argument("waveform_distance: length mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    double diff = static_cast<double>(a.samples[i]) - b.samples[i];
    if (d == Distance::kMse) {
      acc += diff * diff;
    } else {
      acc = std::max(acc, std::abs(diff));
    }
  }
  if (d == Distance::kMse && !a.samples.empty()) acc /= a.samples.size();
  return acc;
}

ObjectiveTerms attack_objective(const ProbsFn& predict_probs,
                                const LabeledDataset& benign,
                                const LabeledDataset& poisoned,
                                const AttackObjectiveConfig& cfg) {
  if (!(cfg.lambda1 >= 0.0 && cfg.lambda2 >= 0.0) ||
      !std::isfinite(cfg.lambda1) || !std::isfinite(cfg.lambda2)) {
    throw std::invalid_argument("attack_objective: weights must be finite, >= 0");
  }
  if (benign.size() != poisoned.size() || benign.size() == 0) {
    throw std::invalid_argument(
        "attack_objective: datasets must be nonempty and index-aligned");
  }
  ObjectiveTerms terms;
  const auto n = static_cast<double>(benign.size());
  for (std::size_t i = 0; i < benign.size(); ++i) {
    const auto& x = benign.items[i];
    const auto& xp = poisoned.items[i];
    if (x.clip.samples.size() != xp.clip.samples.size()) {
      throw std::invalid_argument("attack_objective: item " +
                                  std::to_string(i) + " is misaligned");
    }
    terms.poison_loss += CrossEntropy(predict_probs(xp.clip), xp.label);
    terms.benign_loss += CrossEntropy(predict_probs(x.clip), x.label);
    terms.distance_term += waveform_distance(x.clip, xp.clip, cfg.distance);
  }
  terms.poison_loss /= n;
  terms.benign_loss /= n;
  terms.distance_term /= n;
  terms.total = terms.poison_loss + cfg.lambda1 * terms.benign_loss +
                cfg.lambda2 * terms.distance_term;
  return terms;
}

void save_dataset(const std::filesystem::path& dir, const LabeledDataset& ds,
                  const ManifestHeader& header, const std::vector<int>& folds) {
  if (!folds.empty() && folds.size() != ds.size()) {
    throw std::invalid_argument("save_dataset: fold list length mismatch");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir / "wav", ec);
  if (ec) {
    throw ManifestError("cannot create " + (dir / "wav").string() + ": " +
                        ec.message());
  }
  std::ofstream out(dir / "manifest.jsonl", std::ios::trunc);
  if (!out) {
    throw ManifestError("cannot write " + (dir / "manifest.jsonl").string());
  }
  nlohmann::ordered_json head = {{"backbay_manifest", 1},
                                 {"stage", header.stage},
                                 {"seed", header.seed},
                                 {"config_hash", header.config_hash},
                                 {"n_classes", ds.n_classes},
                                 {"items", ds.size()}};
  out << head.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& item = ds.items[i];
    std::string rel = "wav/" + item.name + ".wav";
    audio::write_wav(item.clip, dir / rel);
    nlohmann::ordered_json rec = {{"path", rel},
                                  {"original_label", item.original_label},
                                  {"label", item.label},
                                  {"poisoned", static_cast<bool>(
                                                   ds.poison_mask[i])}};
    if (!folds.empty()) rec["fold"] = folds[i];
    out << rec.dump() << '\n';
  }
  if (!out) throw ManifestError("write failed for manifest in " + dir.string());
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& file,
                                          ManifestHeader* header) {
  std::ifstream in(file);
  if (!in) throw ManifestError("cannot open manifest " + file.string());
  std::vector<ManifestRecord> records;
  std::string line;
  bool first = true;
  std::size_t lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (first) {
        first = false;
        if (!j.contains("backbay_manifest")) {
          throw ManifestError(file.string() + ": missing manifest header");
        }
        if (header != nullptr) {
          header->seed = j.at("seed").get<std::uint64_t>();
          header->config_hash = j.at("config_hash").get<std::string>();
          header->n_classes = j.at("n_classes").get<int>();
          header->stage = j.value("stage", "");
        }
        continue;
      }
      ManifestRecord rec;
      rec.path = j.at("path").get<std::string>();
      rec.original_label = j.at("original_label").get<int>();
      rec.label = j.at("label").get<int>();
      rec.poisoned = j.at("poisoned").get<bool>();
      rec.fold = j.value("fold", -1);
      records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ManifestError(file.string() + ":" + std::to_string(lineno) + ": " +
                        e.what());
  }
  if (first) throw ManifestError(file.string() + ": empty manifest");
  return records;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  auto records = read_manifest(dir / "manifest.jsonl", &out.header);
  out.dataset.n_classes = out.header.n_classes;
  bool any_fold = false;
  for (const auto& rec : records) {
    LabeledItem item;
    item.clip = audio::read_wav(dir / rec.path);
    item.label = rec.label;
    item.original_label = rec.original_label;
    item.name = std::filesystem::path(rec.path).stem().string();
    out.dataset.items.push_back(std::move(item));
    out.dataset.poison_mask.push_back(rec.poisoned);
    out.folds.push_back(rec.fold);
    any_fold = any_fold || rec.fold >= 0;
  }
  if (!any_fold) out.folds.clear();
  out.dataset.validate();
  return out;
}

}  // namespace poison
}  // namespace backbay
