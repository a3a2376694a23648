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

#include "backbay/pipeline.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <numeric>

#include "backbay/rng.h"
#include "backbay/trigger_forge.h"

namespace backbay::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void Log(const std::string& msg) { std::clog << "[backbay] " << msg << '\n'; }

template <typename Fn>
auto InStage(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const std::exception& e) {
    throw PipelineError(stage, e.what());
  }
}

fp::Curve CurveFromJson(const json& j, const fp::Curve& fallback) {
  if (j.is_null()) return fallback;
  if (j.is_number()) return fp::Curve::Constant(j.get<double>());
  if (j.is_object() && j.contains("linear")) {
    auto ends = j.at("linear").get<std::vector<double>>();
    if (ends.size() != 2) {
      throw std::invalid_argument("schedule 'linear' needs [start, end]");
    }
    return fp::Curve::Linear(ends[0], ends[1]);
  }
  throw std::invalid_argument(
      "schedule must be a number or {\"linear\": [start, end]}");
}

ordered_json CurveToJson(const fp::Curve& c) {
  if (c.kind == fp::Curve::Kind::kConstant) return c.start;
  return ordered_json{{"linear", {c.start, c.end}}};
}

template <typename T>
void Read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

json Section(const json& j, const char* key) {
  if (!j.contains(key)) return json::object();
  if (!j.at(key).is_object()) {
    throw std::invalid_argument(std::string("config key '") + key +
                                "' must be an object");
  }
  return j.at(key);
}

fs::path Dir(const PipelineConfig& cfg, const char* sub) {
  return fs::path(cfg.output_dir) / sub;
}

std::vector<int> FoldsToRun(const PipelineConfig& cfg) {
  std::vector<int> folds{0};
  if (cfg.eval.all_folds) {
    folds.resize(cfg.eval.folds);
    std::iota(folds.begin(), folds.end(), 0);
  }
  return folds;
}

std::uint64_t SubSeed(const PipelineConfig& cfg, const char* label) {
  return Rng(cfg.master_seed()).split(label)();
}

poison::ManifestHeader Header(const PipelineConfig& cfg, int n_classes,
                              const char* stage) {
  return {cfg.master_seed(), config_hash_hex(cfg), n_classes, stage};
}

std::vector<std::size_t> Indices(const std::vector<int>& folds, int fold,
                                 bool in_fold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if ((folds[i] == fold) == in_fold) out.push_back(i);
  }
  return out;
}

const std::vector<int>& RequireFolds(const poison::LoadedDataset& d,
                                     const fs::path& where) {
  if (d.folds.size() != d.dataset.size()) {
    throw std::runtime_error(where.string() + ": manifest has no fold ids");
  }
  return d.folds;
}

// Trains every requested fold of `ds`, writing <prefix><fold>.bbdm.
void TrainFolds(const PipelineConfig& cfg, const poison::LoadedDataset& data,
                const fs::path& dir, const std::string& prefix) {
  const auto& folds = RequireFolds(data, dir);
  Eigen::MatrixXd x = victim::dataset_features(data.dataset, cfg.features);
  std::vector<int> labels;
  for (const auto& item : data.dataset.items) labels.push_back(item.label);
  const int n_classes =
      std::max(data.dataset.n_classes,
               *std::max_element(labels.begin(), labels.end()) + 1);
  const victim::CheckpointMeta meta{cfg.master_seed(), config_hash(cfg)};

  for (int f : FoldsToRun(cfg)) {
    auto train_idx = Indices(folds, f, false);
    if (train_idx.empty()) throw std::runtime_error("fold leaves no training data");
    Eigen::MatrixXd tx(train_idx.size(), x.cols());
    std::vector<int> ty;
    for (std::size_t r = 0; r < train_idx.size(); ++r) {
      tx.row(r) = x.row(train_idx[r]);
      ty.push_back(labels[train_idx[r]]);
    }
    victim::TrainConfig tc = cfg.train;
    tc.seed = Rng(cfg.master_seed())
                  .split("train")
                  .split(static_cast<std::uint64_t>(f))();
    auto outcome = victim::train_on_features(tx, ty, n_classes, cfg.hidden,
                                             cfg.features, tc);
    const std::string stem = prefix + std::to_string(f);
    victim::save_checkpoint(outcome.model, dir / (stem + ".bbdm"), meta);
    ordered_json hist = {{"seed", cfg.master_seed()},
                         {"config_hash", config_hash_hex(cfg)},
                         {"epoch_loss", outcome.loss_history}};
    std::ofstream(dir / (stem + ".history.json")) << hist.dump(2) << '\n';
    char msg[128];
    std::snprintf(msg, sizeof(msg), "trained %s: final loss %.4f",
                  stem.c_str(),
                  outcome.loss_history.empty() ? 0.0
                                               : outcome.loss_history.back());
    Log(msg);
  }
}

double Mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double SampleStd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = Mean(v), acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(acc / (v.size() - 1));
}

}  // namespace

void PipelineConfig::validate() const {
  if (!seed) {
    throw std::invalid_argument(
        "no master seed: set \"seed\" in the config or pass --seed");
  }
  if (dataset.kind == DatasetSource::Kind::kSynthetic) {
    if (dataset.n_speakers < 2 || dataset.clips_per_speaker < 1 ||
        !(dataset.clip_ms > 0.0)) {
      throw std::invalid_argument("dataset: invalid synthetic counts");
    }
    // Synthetic labels are known up front; corpus labels are checked once
    // the speakers have been counted.
    int top = poison.dirty_label;
    if (!poison.target_labels.empty()) {
      top = std::max(top, *poison.target_labels.rbegin());
    }
    if (top >= dataset.n_speakers) {
      throw std::invalid_argument("poison: label " + std::to_string(top) +
                                  " does not exist with " +
                                  std::to_string(dataset.n_speakers) +
                                  " speakers");
    }
  } else if (dataset.corpus_dir.empty()) {
    throw std::invalid_argument("dataset: corpus source needs corpus_dir");
  }
  poison.validate();
  diffusion.validate();
  train.validate();
  if (train.epochs > 15) {
    throw std::invalid_argument("train.epochs is capped at 15");
  }
  if (features.n_mfcc > features.n_mels) {
    throw std::invalid_argument("features: n_mfcc must not exceed n_mels");
  }
  if (!(sampler.burn_in_frac >= 0.0 && sampler.burn_in_frac < 1.0) ||
      !(sampler.proposal_std >= 0.0)) {
    throw std::invalid_argument("sampler: bad burn_in_frac or proposal_std");
  }
  if (!(objective.lambda1 >= 0.0 && objective.lambda2 >= 0.0)) {
    throw std::invalid_argument("objective: weights must be >= 0");
  }
  if (eval.folds < 2) throw std::invalid_argument("eval.folds must be >= 2");
  if (eval.thd_probes < 0 || eval.thd_harmonics < 1 || eval.thd_window < 8) {
    throw std::invalid_argument("eval: bad THD options");
  }
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("model.hidden widths must be >= 1");
  }
}

std::uint64_t PipelineConfig::master_seed() const {
  if (!seed) throw std::invalid_argument("no master seed");
  return *seed;
}

PipelineConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be an object");
  PipelineConfig cfg;
  try {
    if (j.contains("seed") && !j.at("seed").is_null()) {
      cfg.seed = j.at("seed").get<std::uint64_t>();
    }
    Read(j, "output_dir", cfg.output_dir);

    json d = Section(j, "dataset");
    std::string source = d.value("source", "synthetic");
    if (source == "synthetic") {
      cfg.dataset.kind = DatasetSource::Kind::kSynthetic;
    } else if (source == "corpus") {
      cfg.dataset.kind = DatasetSource::Kind::kCorpus;
    } else {
      throw std::invalid_argument("dataset.source must be synthetic|corpus");
    }
    Read(d, "n_speakers", cfg.dataset.n_speakers);
    Read(d, "clips_per_speaker", cfg.dataset.clips_per_speaker);
    Read(d, "clip_ms", cfg.dataset.clip_ms);
    Read(d, "corpus_dir", cfg.dataset.corpus_dir);

    json f = Section(j, "features");
    Read(f, "frame_size", cfg.features.frame_size);
    Read(f, "hop", cfg.features.hop);
    Read(f, "n_mels", cfg.features.n_mels);
    Read(f, "n_mfcc", cfg.features.n_mfcc);

    json t = Section(j, "trigger");
    Read(t, "path", cfg.trigger.path);
    Read(t, "duration_ms", cfg.trigger.duration_ms);
    Read(t, "decay_tau_ms", cfg.trigger.decay_tau_ms);

    json p = Section(j, "poison");
    for (const char* key : {"target_labels", "target_label"}) {
      if (!p.contains(key)) continue;
      const json& v = p.at(key);
      cfg.poison.target_labels.clear();
      if (v.is_string()) {
        if (v.get<std::string>() != "all") {
          throw std::invalid_argument("poison.target_labels: use \"all\"");
        }
      } else if (v.is_number_integer()) {
        cfg.poison.target_labels.insert(v.get<int>());
      } else {
        for (int label : v.get<std::vector<int>>()) {
          cfg.poison.target_labels.insert(label);
        }
      }
    }
    Read(p, "dirty_label", cfg.poison.dirty_label);
    Read(p, "flip_prob", cfg.poison.flip_prob);
    Read(p, "replace_prob", cfg.poison.replace_prob);
    Read(p, "trigger_alpha", cfg.poison.trigger_alpha);
    Read(p, "poison_rate", cfg.poison.poison_rate);
    Read(p, "prior_mean", cfg.poison.prior_mean);

    json df = Section(j, "diffusion");
    Read(df, "T", cfg.diffusion.T);
    cfg.diffusion.alpha = CurveFromJson(df.value("alpha", json()),
                                        cfg.diffusion.alpha);
    cfg.diffusion.beta = CurveFromJson(df.value("beta", json()),
                                       cfg.diffusion.beta);
    cfg.diffusion.sigma = CurveFromJson(df.value("sigma", json()),
                                        cfg.diffusion.sigma);

    json s = Section(j, "sampler");
    Read(s, "steps", cfg.sampler.steps);
    Read(s, "proposal_std", cfg.sampler.proposal_std);
    Read(s, "burn_in_frac", cfg.sampler.burn_in_frac);

    json m = Section(j, "model");
    Read(m, "hidden", cfg.hidden);

    json tr = Section(j, "train");
    Read(tr, "epochs", cfg.train.epochs);
    Read(tr, "learning_rate", cfg.train.learning_rate);
    Read(tr, "batch_size", cfg.train.batch_size);
    Read(tr, "adam_beta1", cfg.train.adam_beta1);
    Read(tr, "adam_beta2", cfg.train.adam_beta2);
    Read(tr, "adam_eps", cfg.train.adam_eps);

    json o = Section(j, "objective");
    Read(o, "lambda1", cfg.objective.lambda1);
    Read(o, "lambda2", cfg.objective.lambda2);
    std::string dist = o.value("distance", "mse");
    if (dist == "mse") {
      cfg.objective.distance = poison::Distance::kMse;
    } else if (dist == "linf") {
      cfg.objective.distance = poison::Distance::kLinf;
    } else {
      throw std::invalid_argument("objective.distance must be mse|linf");
    }

    json e = Section(j, "eval");
    Read(e, "folds", cfg.eval.folds);
    Read(e, "all_folds", cfg.eval.all_folds);
    Read(e, "thd_probes", cfg.eval.thd_probes);
    Read(e, "thd_harmonics", cfg.eval.thd_harmonics);
    Read(e, "thd_window", cfg.eval.thd_window);
    Read(e, "clean_baseline", cfg.eval.clean_baseline);
    Read(e, "model_name", cfg.eval.model_name);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

ordered_json config_to_json(const PipelineConfig& cfg) {
  ordered_json j;
  j["seed"] = cfg.seed ? ordered_json(*cfg.seed) : ordered_json(nullptr);
  j["output_dir"] = cfg.output_dir;
  j["dataset"] = {
      {"source", cfg.dataset.kind == DatasetSource::Kind::kSynthetic
                     ? "synthetic"
                     : "corpus"},
      {"n_speakers", cfg.dataset.n_speakers},
      {"clips_per_speaker", cfg.dataset.clips_per_speaker},
      {"clip_ms", cfg.dataset.clip_ms},
      {"corpus_dir", cfg.dataset.corpus_dir}};
  j["features"] = {{"frame_size", cfg.features.frame_size},
                   {"hop", cfg.features.hop},
                   {"n_mels", cfg.features.n_mels},
                   {"n_mfcc", cfg.features.n_mfcc}};
  j["trigger"] = {{"path", cfg.trigger.path},
                  {"duration_ms", cfg.trigger.duration_ms},
                  {"decay_tau_ms", cfg.trigger.decay_tau_ms}};
  ordered_json targets = "all";
  if (!cfg.poison.target_labels.empty()) {
    targets = std::vector<int>(cfg.poison.target_labels.begin(),
                               cfg.poison.target_labels.end());
  }
  j["poison"] = {{"target_labels", targets},
                 {"dirty_label", cfg.poison.dirty_label},
                 {"flip_prob", cfg.poison.flip_prob},
                 {"replace_prob", cfg.poison.replace_prob},
                 {"trigger_alpha", cfg.poison.trigger_alpha},
                 {"poison_rate", cfg.poison.poison_rate},
                 {"prior_mean", cfg.poison.prior_mean}};
  j["diffusion"] = {{"T", cfg.diffusion.T},
                    {"alpha", CurveToJson(cfg.diffusion.alpha)},
                    {"beta", CurveToJson(cfg.diffusion.beta)},
                    {"sigma", CurveToJson(cfg.diffusion.sigma)}};
  j["sampler"] = {{"steps", cfg.sampler.steps},
                  {"proposal_std", cfg.sampler.proposal_std},
                  {"burn_in_frac", cfg.sampler.burn_in_frac}};
  j["model"] = {{"hidden", cfg.hidden}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.learning_rate},
                {"batch_size", cfg.train.batch_size},
                {"adam_beta1", cfg.train.adam_beta1},
                {"adam_beta2", cfg.train.adam_beta2},
                {"adam_eps", cfg.train.adam_eps}};
  j["objective"] = {
      {"lambda1", cfg.objective.lambda1},
      {"lambda2", cfg.objective.lambda2},
      {"distance",
       cfg.objective.distance == poison::Distance::kMse ? "mse" : "linf"}};
  j["eval"] = {{"folds", cfg.eval.folds},
               {"all_folds", cfg.eval.all_folds},
               {"thd_probes", cfg.eval.thd_probes},
               {"thd_harmonics", cfg.eval.thd_harmonics},
               {"thd_window", cfg.eval.thd_window},
               {"clean_baseline", cfg.eval.clean_baseline},
               {"model_name", cfg.eval.model_name}};
  return j;
}

std::uint64_t config_hash(const PipelineConfig& cfg) {
  ordered_json j = config_to_json(cfg);
  j.erase("output_dir");
  return Fnv1a64(j.dump());
}

std::string config_hash_hex(const PipelineConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  return buf;
}

poison::LabeledDataset synth_speaker_dataset(int n_speakers,
                                             int clips_per_speaker,
                                             double clip_ms,
                                             std::uint64_t seed) {
  if (n_speakers < 2 || clips_per_speaker < 1 || !(clip_ms > 0.0)) {
    throw std::invalid_argument(
        "synth_speaker_dataset: need >= 2 speakers, >= 1 clip, clip_ms > 0");
  }
  const auto len = static_cast<std::size_t>(
      std::llround(clip_ms * audio::kSampleRate / 1000.0));
  if (len == 0) throw std::invalid_argument("synth_speaker_dataset: empty clip");

  // Low-discrepancy placement keeps speakers apart for any count.
  constexpr double kLo[3] = {100.0, 450.0, 1400.0};
  constexpr double kSpan[3] = {250.0, 850.0, 2200.0};
  constexpr double kStride[3] = {0.6180339887498949, 0.7548776662466927,
                                 0.5698402909980532};

  poison::LabeledDataset ds;
  ds.items.resize(static_cast<std::size_t>(n_speakers) * clips_per_speaker);
  ds.poison_mask.assign(ds.items.size(), false);
  ds.n_classes = n_speakers;
  const Rng root = Rng(seed).split("speakers");
  ParallelFor(ds.items.size(), [&](std::size_t idx) {
    const int spk = static_cast<int>(idx / clips_per_speaker);
    const int clip_no = static_cast<int>(idx % clips_per_speaker);
    double freq[3], weight[3];
    for (int k = 0; k < 3; ++k) {
      double u = std::fmod((spk + 1) * kStride[k], 1.0);
      freq[k] = kLo[k] + kSpan[k] * u;
      weight[k] = 1.0 / (k + 1) * (0.6 + 0.4 * std::fmod((spk + 1) * kStride[2 - k], 1.0));
    }

    Rng rng = root.split(static_cast<std::uint64_t>(idx));
    std::vector<double> x(len, 0.0);
    for (int k = 0; k < 3; ++k) {
      const double f = freq[k] * (1.0 + 0.015 * (2.0 * rng.uniform() - 1.0));
      const double a = weight[k] * (1.0 + 0.2 * (2.0 * rng.uniform() - 1.0));
      const double phase = 2.0 * std::numbers::pi * rng.uniform();
      for (std::size_t n = 0; n < len; ++n) {
        x[n] += a * std::sin(2.0 * std::numbers::pi * f * n / audio::kSampleRate +
                             phase);
      }
    }
    double peak = 0.0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double gain = (0.4 + 0.4 * rng.uniform()) / peak;
    double power = 0.0;
    for (double& v : x) {
      v *= gain;
      power += v * v;
    }
    power /= static_cast<double>(len);
    const double noise_std = std::sqrt(power / 100.0);  // 20 dB SNR

    auto& item = ds.items[idx];
    item.clip.samples.resize(len);
    for (std::size_t n = 0; n < len; ++n) {
      double v = x[n] + rng.normal(0.0, noise_std);
      item.clip.samples[n] = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
    item.label = item.original_label = spk;
    char name[48];
    std::snprintf(name, sizeof(name), "spk%03d_%04d", spk, clip_no);
    item.name = name;
  });
  return ds;
}

poison::LabeledDataset ingest_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) {
    throw CorpusError(CorpusErrc::kMissingDir,
                      "corpus directory " + dir.string() + " does not exist");
  }
  std::vector<fs::path> speakers;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) speakers.push_back(entry.path());
  }
  std::sort(speakers.begin(), speakers.end());

  poison::LabeledDataset ds;
  int label = 0;
  for (const auto& spk : speakers) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(spk)) {
      auto ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (entry.is_regular_file() && ext == ".wav") files.push_back(entry.path());
    }
    if (files.empty()) continue;
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      audio::AudioClip clip;
      try {
        clip = audio::read_wav(file);
      } catch (const audio::WavError& e) {
        throw CorpusError(CorpusErrc::kBadFile,
                          "nonconforming WAV " + file.string() + ": " + e.what());
      }
      if (clip.sample_rate != audio::kSampleRate) {
        throw CorpusError(CorpusErrc::kBadFile,
                          "nonconforming WAV " + file.string() + ": " +
                              std::to_string(clip.sample_rate) +
                              " Hz, expected 16000");
      }
      ds.add(std::move(clip), label,
             spk.filename().string() + "_" + file.stem().string());
    }
    ++label;
  }
  if (ds.size() == 0) {
    throw CorpusError(CorpusErrc::kEmpty,
                      "corpus " + dir.string() + " holds no speaker WAV files");
  }
  return ds;
}

poison::PerturbationFn prefix_of(std::vector<float> perturbation) {
  return [p = std::move(perturbation)](std::size_t len) {
    if (len > p.size()) {
      throw std::invalid_argument("perturbation shorter than clip");
    }
    return std::vector<float>(p.begin(), p.begin() + len);
  };
}

std::uint64_t repeat_seed(std::uint64_t master, int r, int repeats) {
  if (repeats <= 1) return master;
  return Rng(master).split("repeat").split(static_cast<std::uint64_t>(r))();
}

void build_dataset(const PipelineConfig& cfg) {
  InStage(Stage::kDataset, [&] {
    poison::LabeledDataset ds;
    if (cfg.dataset.kind == DatasetSource::Kind::kSynthetic) {
      ds = synth_speaker_dataset(cfg.dataset.n_speakers,
                                 cfg.dataset.clips_per_speaker,
                                 cfg.dataset.clip_ms, SubSeed(cfg, "dataset"));
    } else {
      ds = ingest_corpus(cfg.dataset.corpus_dir);
    }
    std::vector<int> labels;
    for (const auto& item : ds.items) labels.push_back(item.label);
    auto folds =
        victim::stratified_folds(labels, cfg.eval.folds, SubSeed(cfg, "folds"));
    save_dataset(Dir(cfg, "dataset"), ds, Header(cfg, ds.n_classes, "dataset"),
                 folds);
    Log("dataset: " + std::to_string(ds.size()) + " clips, " +
        std::to_string(ds.n_classes) + " classes");
  });
}

void poison_stage(const PipelineConfig& cfg) {
  InStage(Stage::kPoison, [&] {
    auto clean = poison::load_dataset(Dir(cfg, "dataset"));
    const auto& folds = RequireFolds(clean, Dir(cfg, "dataset"));
    if (cfg.poison.dirty_label >= clean.dataset.n_classes) {
      throw std::invalid_argument(
          "poison: dirty_label " + std::to_string(cfg.poison.dirty_label) +
          " but the dataset has " + std::to_string(clean.dataset.n_classes) +
          " classes");
    }
    trigger::TriggerSpec trig =
        cfg.trigger.path.empty()
            ? trigger::synth_clap(cfg.trigger.duration_ms,
                                  cfg.trigger.decay_tau_ms,
                                  SubSeed(cfg, "trigger"))
            : trigger::load_trigger(cfg.trigger.path);

    std::size_t max_len = 0;
    for (const auto& item : clean.dataset.items) {
      max_len = std::max(max_len, item.clip.samples.size());
    }
    auto perturbation = fp::bayes_backdoor_sample(
        trig, max_len, cfg.poison, cfg.diffusion,
        Rng(cfg.master_seed()).split("sampler"));

    const fs::path dir = Dir(cfg, "poisoned");
    fs::create_directories(dir);
    audio::write_wav(trig.waveform, dir / "trigger.wav");
    audio::write_wav({perturbation, audio::kSampleRate},
                     dir / "perturbation.wav");
    // Train and test both see the quantised perturbation from disk.
    auto stored = audio::read_wav(dir / "perturbation.wav").samples;

    auto poisoned = poison::poison_dataset(clean.dataset, cfg.poison,
                                           prefix_of(std::move(stored)),
                                           Rng(cfg.master_seed()).split("poison"));
    save_dataset(dir, poisoned, Header(cfg, poisoned.n_classes, "poisoned"),
                 folds);
    std::size_t marked = std::count(poisoned.poison_mask.begin(),
                                    poisoned.poison_mask.end(), true);
    Log("poisoned " + std::to_string(marked) + " of " +
        std::to_string(poisoned.size()) + " clips");
  });
}

void train_stage(const PipelineConfig& cfg) {
  InStage(Stage::kTrain, [&] {
    const fs::path models = Dir(cfg, "models");
    fs::create_directories(models);
    TrainFolds(cfg, poison::load_dataset(Dir(cfg, "poisoned")), models, "fold");
    if (cfg.eval.clean_baseline) {
      TrainFolds(cfg, poison::load_dataset(Dir(cfg, "dataset")), models,
                 "clean_fold");
    }
  });
}

std::vector<eval::AttackReport> evaluate_stage(const PipelineConfig& cfg) {
  auto reports = InStage(Stage::kEvaluate, [&] {
    auto clean = poison::load_dataset(Dir(cfg, "dataset"));
    auto poisoned = poison::load_dataset(Dir(cfg, "poisoned"));
    const auto& folds = RequireFolds(clean, Dir(cfg, "dataset"));
    auto trigger_fn = prefix_of(
        audio::read_wav(Dir(cfg, "poisoned") / "perturbation.wav").samples);
    const int target = cfg.poison.dirty_label;
    const auto run_folds = FoldsToRun(cfg);

    auto evaluate_model = [&](const std::string& name,
                              const std::string& prefix) {
      eval::AttackReport report;
      report.model_name = name;
      report.seed = cfg.master_seed();
      report.config_hash = config_hash_hex(cfg);
      std::vector<double> ba, asr;
      for (int f : run_folds) {
        auto model = victim::load_checkpoint(
            Dir(cfg, "models") / (prefix + std::to_string(f) + ".bbdm"));
        auto test = clean.dataset.select(Indices(folds, f, true));
        auto triggered =
            poison::apply_trigger(test, cfg.poison.trigger_alpha, trigger_fn);
        ba.push_back(eval::benign_accuracy(model, test));
        asr.push_back(eval::attack_success_rate(model, triggered, target));
        report.folds.push_back({f, ba.back(), asr.back()});
      }
      report.benign_accuracy = Mean(ba);
      report.attack_success_rate = Mean(asr);
      return report;
    };

    std::vector<eval::AttackReport> out;
    out.push_back(evaluate_model(cfg.eval.model_name, "fold"));
    auto& main = out.front();

    // THD and spectrogram pairs on the first test clips.
    const int first_fold = run_folds.front();
    auto test_idx = Indices(folds, first_fold, true);
    const fs::path spec_dir = Dir(cfg, "spectrograms");
    fs::create_directories(spec_dir);
    const int probes =
        std::min<int>(cfg.eval.thd_probes, static_cast<int>(test_idx.size()));
    for (int k = 0; k < probes; ++k) {
      const auto& item = clean.dataset.items[test_idx[k]];
      audio::AudioClip backdoored = item.clip;
      {
        auto p = trigger_fn(backdoored.samples.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
          backdoored.samples[i] = static_cast<float>(std::clamp(
              backdoored.samples[i] + cfg.poison.trigger_alpha * p[i], -1.0,
              1.0));
        }
      }
      eval::ThdProbe probe;
      probe.name = item.name;
      eval::ThdOptions opts{cfg.eval.thd_harmonics, cfg.eval.thd_window};
      opts.window = eval::fit_thd_options(item.clip, 0.0, opts).window;
      probe.f0 = eval::dominant_frequency(item.clip, opts.window);
      opts = eval::fit_thd_options(item.clip, probe.f0, opts);
      probe.clean = eval::thd(item.clip, probe.f0, opts);
      probe.poisoned = eval::thd(backdoored, probe.f0, opts);
      main.thd.push_back(probe);

      const std::string stem = "probe" + std::to_string(k);
      eval::render_spectrogram_image(
          audio::stft(item.clip, cfg.features.frame_size, cfg.features.hop),
          spec_dir / (stem + "_clean.ppm"));
      eval::render_spectrogram_image(
          audio::stft(backdoored, cfg.features.frame_size, cfg.features.hop),
          spec_dir / (stem + "_backdoored.ppm"));
    }

    // Attack objective over the training split of the first fold.
    {
      auto model = victim::load_checkpoint(
          Dir(cfg, "models") / ("fold" + std::to_string(first_fold) + ".bbdm"));
      auto train_idx = Indices(folds, first_fold, false);
      auto terms = poison::attack_objective(
          [&](const audio::AudioClip& c) {
            return victim::predict_probs(model, c);
          },
          clean.dataset.select(train_idx), poisoned.dataset.select(train_idx),
          cfg.objective);
      main.extra["objective"] = {{"total", terms.total},
                                 {"poison_loss", terms.poison_loss},
                                 {"benign_loss", terms.benign_loss},
                                 {"distance", terms.distance_term},
                                 {"lambda1", cfg.objective.lambda1},
                                 {"lambda2", cfg.objective.lambda2}};
    }
    main.extra["config"] = config_to_json(cfg);

    if (cfg.eval.clean_baseline) {
      out.push_back(evaluate_model(cfg.eval.model_name + "-clean-baseline",
                                   "clean_fold"));
    }
    return out;
  });
  InStage(Stage::kReport, [&] { eval::write_report(reports, cfg.output_dir); });
  for (const auto& r : reports) {
    char msg[160];
    std::snprintf(msg, sizeof(msg), "%s: BA %.2f%%  ASR %.2f%%",
                  r.model_name.c_str(), 100 * r.benign_accuracy,
                  100 * r.attack_success_rate);
    Log(msg);
  }
  return reports;
}

std::vector<eval::AttackReport> run_pipeline(const PipelineConfig& cfg,
                                             int repeats) {
  InStage(Stage::kConfig, [&] {
    cfg.validate();
    if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  });
  if (repeats == 1) {
    build_dataset(cfg);
    poison_stage(cfg);
    train_stage(cfg);
    return evaluate_stage(cfg);
  }

  std::vector<std::vector<eval::AttackReport>> runs;
  for (int r = 0; r < repeats; ++r) {
    PipelineConfig sub = cfg;
    sub.seed = repeat_seed(cfg.master_seed(), r, repeats);
    sub.output_dir = (fs::path(cfg.output_dir) / ("repeat_" + std::to_string(r)))
                         .string();
    Log("repeat " + std::to_string(r + 1) + "/" + std::to_string(repeats));
    build_dataset(sub);
    poison_stage(sub);
    train_stage(sub);
    runs.push_back(evaluate_stage(sub));
  }

  std::vector<eval::AttackReport> summary;
  for (std::size_t m = 0; m < runs.front().size(); ++m) {
    eval::AttackReport agg;
    agg.model_name = runs.front()[m].model_name;
    agg.seed = cfg.master_seed();
    agg.config_hash = config_hash_hex(cfg);
    std::vector<double> ba, asr;
    ordered_json per_repeat = ordered_json::array();
    for (int r = 0; r < repeats; ++r) {
      const auto& rep = runs[r][m];
      ba.push_back(rep.benign_accuracy);
      asr.push_back(rep.attack_success_rate);
      per_repeat.push_back({{"repeat", r},
                            {"seed", rep.seed},
                            {"benign_accuracy", rep.benign_accuracy},
                            {"attack_success_rate", rep.attack_success_rate}});
    }
    agg.benign_accuracy = Mean(ba);
    agg.attack_success_rate = Mean(asr);
    agg.benign_accuracy_std = SampleStd(ba);
    agg.attack_success_rate_std = SampleStd(asr);
    agg.extra["repeats"] = per_repeat;
    if (m == 0) agg.extra["config"] = config_to_json(cfg);
    summary.push_back(std::move(agg));
  }
  InStage(Stage::kReport, [&] { eval::write_report(summary, cfg.output_dir); });
  return summary;
}

}  // namespace backbay::pipeline
