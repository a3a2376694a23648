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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "backbay/rng.h"
#include "test_util.h"

namespace backbay::pipeline {
namespace {

using testing::ReadBytes;
using testing::Sine;
using testing::TempDir;

PipelineConfig SmallConfig(const std::filesystem::path& out) {
  PipelineConfig cfg;
  cfg.seed = 11;
  cfg.output_dir = out.string();
  cfg.dataset.n_speakers = 10;
  cfg.dataset.clips_per_speaker = 20;
  cfg.dataset.clip_ms = 250.0;
  cfg.sampler.steps = 200;
  cfg.train.epochs = 3;
  cfg.eval.thd_probes = 1;
  return cfg;
}

TEST(ConfigTest, ParseDefaultsAndRoundTrip) {
  auto cfg = config_from_json(nlohmann::json::parse(R"({
    "seed": 5,
    "dataset": {"n_speakers": 12},
    "poison": {"target_labels": [1, 2], "dirty_label": 0, "flip_prob": 0.3},
    "diffusion": {"T": 4, "alpha": {"linear": [0.1, 0.9]}},
    "train": {"epochs": 7}
  })"));
  EXPECT_EQ(cfg.master_seed(), 5u);
  EXPECT_EQ(cfg.dataset.n_speakers, 12);
  EXPECT_EQ(cfg.dataset.clips_per_speaker, 200);
  EXPECT_EQ(cfg.poison.target_labels, (std::set<int>{1, 2}));
  EXPECT_EQ(cfg.poison.dirty_label, 0);
  EXPECT_DOUBLE_EQ(cfg.poison.flip_prob, 0.3);
  EXPECT_EQ(cfg.diffusion.T, 4);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_NO_THROW(cfg.validate());

  auto again = config_from_json(nlohmann::json::parse(config_to_json(cfg).dump()));
  EXPECT_EQ(config_to_json(again), config_to_json(cfg));
  EXPECT_EQ(config_hash(again), config_hash(cfg));

  auto moved = cfg;
  moved.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(cfg));
  auto changed = cfg;
  changed.poison.flip_prob = 0.31;
  EXPECT_NE(config_hash(changed), config_hash(cfg));
  EXPECT_EQ(config_hash_hex(cfg).size(), 16u);

  auto single = config_from_json(nlohmann::json::parse(
      R"({"seed": 1, "poison": {"target_label": 3}})"));
  EXPECT_EQ(single.poison.target_labels, (std::set<int>{3}));
}

TEST(ConfigTest, Validation) {
  PipelineConfig cfg;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);  // no seed
  EXPECT_THROW(cfg.master_seed(), std::invalid_argument);
  cfg.seed = 1;
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.train.epochs = 16;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.dataset.n_speakers = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.poison.flip_prob = 1.5;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.poison.dirty_label = 10;  // only labels 0..9 exist
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(
                   R"({"seed": 1, "objective": {"distance": "l7"}})")),
               std::invalid_argument);
}

TEST(SynthDatasetTest, LabelsAndDeterminism) {
  auto a = synth_speaker_dataset(10, 4, 100.0, 3);
  auto b = synth_speaker_dataset(10, 4, 100.0, 3);
  auto c = synth_speaker_dataset(10, 4, 100.0, 4);
  ASSERT_EQ(a.size(), 40u);
  std::set<int> labels;
  for (std::size_t i = 0; i < a.size(); ++i) {
    labels.insert(a.items[i].label);
    EXPECT_EQ(a.items[i].clip.samples.size(), 1600u);
    EXPECT_EQ(a.items[i].clip.sample_rate, 16000);
    EXPECT_EQ(a.items[i].clip.samples, b.items[i].clip.samples);
    EXPECT_NE(a.items[i].clip.samples, c.items[i].clip.samples);
    for (float s : a.items[i].clip.samples) ASSERT_LE(std::abs(s), 1.0f);
  }
  EXPECT_EQ(labels, (std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  EXPECT_EQ(a.n_classes, 10);
  EXPECT_THROW(synth_speaker_dataset(1, 4, 100.0, 3), std::invalid_argument);
  EXPECT_THROW(synth_speaker_dataset(10, 0, 100.0, 3), std::invalid_argument);
}

TEST(SynthDatasetTest, NearestCentroidSeparatesSpeakers) {
  auto ds = synth_speaker_dataset(10, 40, 500.0, 21);
  audio::FeatureConfig fc;
  std::vector<Eigen::VectorXd> feats;
  for (const auto& it : ds.items) {
    feats.push_back(victim::pool_features(audio::mfcc(it.clip, fc)));
  }
  // Even clips build centroids, odd clips are classified; features are
  // standardised with the even-clip statistics.
  const int d = static_cast<int>(feats[0].size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  int n_fit = 0;
  for (std::size_t i = 0; i < feats.size(); i += 2) {
    mean += feats[i];
    sq += feats[i].cwiseProduct(feats[i]);
    ++n_fit;
  }
  mean /= n_fit;
  Eigen::VectorXd sd = (sq / n_fit - mean.cwiseProduct(mean)).cwiseSqrt();
  auto norm = [&](const Eigen::VectorXd& v) {
    return Eigen::VectorXd((v - mean).cwiseQuotient(sd));
  };
  std::vector<Eigen::VectorXd> centroid(10, Eigen::VectorXd::Zero(d));
  std::vector<int> count(10, 0);
  for (std::size_t i = 0; i < feats.size(); i += 2) {
    centroid[ds.items[i].label] += norm(feats[i]);
    ++count[ds.items[i].label];
  }
  for (int k = 0; k < 10; ++k) centroid[k] /= count[k];
  int correct = 0, total = 0;
  for (std::size_t i = 1; i < feats.size(); i += 2) {
    auto v = norm(feats[i]);
    int best = 0;
    for (int k = 1; k < 10; ++k) {
      if ((v - centroid[k]).squaredNorm() < (v - centroid[best]).squaredNorm()) {
        best = k;
      }
    }
    correct += best == ds.items[i].label;
    ++total;
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.9);
}

void WriteSine(const std::filesystem::path& p, int rate = 16000) {
  auto clip = Sine(300.0, 0.4, 1600);
  clip.sample_rate = rate;
  std::filesystem::create_directories(p.parent_path());
  audio::write_wav(clip, p);
}

TEST(IngestTest, TwoSpeakers) {
  TempDir dir;
  for (const char* spk : {"bob", "alice"}) {
    for (int i = 0; i < 3; ++i) {
      WriteSine(dir / spk / ("u" + std::to_string(i) + ".wav"));
    }
  }
  std::filesystem::create_directories(dir / "zed");  // no wavs, skipped
  auto ds = ingest_corpus(dir.path());
  ASSERT_EQ(ds.size(), 6u);
  EXPECT_EQ(ds.n_classes, 2);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(ds.items[i].label, 0);
    EXPECT_EQ(ds.items[i].name.rfind("alice_", 0), 0u);
    EXPECT_EQ(ds.items[i + 3].label, 1);
  }
}

TEST(IngestTest, Errors) {
  TempDir dir;
  try {
    ingest_corpus(dir / "absent");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.code(), CorpusErrc::kMissingDir);
  }
  std::filesystem::create_directories(dir / "empty");
  try {
    ingest_corpus(dir / "empty");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.code(), CorpusErrc::kEmpty);
  }
  WriteSine(dir / "c" / "a" / "ok.wav");
  WriteSine(dir / "c" / "b" / "fast.wav", 22050);
  try {
    ingest_corpus(dir / "c");
    FAIL();
  } catch (const CorpusError& e) {
    EXPECT_EQ(e.code(), CorpusErrc::kBadFile);
    EXPECT_NE(std::string(e.what()).find("fast.wav"), std::string::npos);
  }
}

TEST(PrefixTest, Truncates) {
  auto fn = prefix_of({1.0f, 2.0f, 3.0f, 4.0f});
  EXPECT_EQ(fn(2), (std::vector<float>{1.0f, 2.0f}));
  EXPECT_EQ(fn(4).size(), 4u);
  EXPECT_THROW(fn(5), std::invalid_argument);
}

TEST(RepeatSeedTest, Derivation) {
  EXPECT_EQ(repeat_seed(99, 0, 1), 99u);
  std::set<std::uint64_t> seen;
  for (int r = 0; r < 6; ++r) seen.insert(repeat_seed(99, r, 6));
  EXPECT_EQ(seen.size(), 6u);
  EXPECT_EQ(repeat_seed(99, 2, 6), repeat_seed(99, 2, 6));
  EXPECT_NE(repeat_seed(99, 2, 6), repeat_seed(100, 2, 6));
}

TEST(PipelineTest, SmokeAndComposition) {
  TempDir a, b;
  auto cfg = SmallConfig(a.path());
  auto reports = run_pipeline(cfg);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].model_name, "mlp-backdoored");
  EXPECT_EQ(reports[1].model_name, "mlp-backdoored-clean-baseline");
  for (const auto& r : reports) {
    EXPECT_GE(r.benign_accuracy, 0.0);
    EXPECT_LE(r.benign_accuracy, 1.0);
    EXPECT_GE(r.attack_success_rate, 0.0);
    EXPECT_LE(r.attack_success_rate, 1.0);
    EXPECT_EQ(r.seed, 11u);
    EXPECT_EQ(r.config_hash, config_hash_hex(cfg));
  }
  for (const char* f :
       {"report.csv", "report.txt", "report.json", "dataset/manifest.jsonl",
        "poisoned/manifest.jsonl", "poisoned/perturbation.wav",
        "models/fold0.bbdm", "models/clean_fold0.bbdm",
        "spectrograms/probe0_clean.ppm", "spectrograms/probe0_backdoored.ppm"}) {
    EXPECT_TRUE(std::filesystem::exists(a / f)) << f;
  }
  auto rows = eval::read_report_csv(a / "report.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].attack_success_rate, reports[0].attack_success_rate);
  EXPECT_NE(ReadBytes(a / "report.csv").find(config_hash_hex(cfg)),
            std::string::npos);

  // Separate stages reproduce run-all byte for byte.
  auto split = SmallConfig(b.path());
  build_dataset(split);
  poison_stage(split);
  train_stage(split);
  evaluate_stage(split);
  for (const char* f : {"report.csv", "report.txt", "poisoned/manifest.jsonl",
                        "models/fold0.bbdm"}) {
    EXPECT_EQ(ReadBytes(a / f), ReadBytes(b / f)) << f;
  }
}

TEST(PipelineTest, NoFlipsMatchesCleanBaseline) {
  TempDir dir;
  auto cfg = SmallConfig(dir.path());
  cfg.poison.flip_prob = 0.0;
  auto reports = run_pipeline(cfg);
  ASSERT_EQ(reports.size(), 2u);
  EXPECT_EQ(reports[0].attack_success_rate, reports[1].attack_success_rate);
  EXPECT_EQ(reports[0].benign_accuracy, reports[1].benign_accuracy);
}

TEST(PipelineTest, StageErrorsCarryExitCodes) {
  TempDir dir;
  auto cfg = SmallConfig(dir.path());
  try {
    train_stage(cfg);  // nothing poisoned yet
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.exit_code(), 5);
  }
  cfg.dataset.kind = DatasetSource::Kind::kCorpus;
  cfg.dataset.corpus_dir = (dir / "nowhere").string();
  try {
    build_dataset(cfg);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
  PipelineConfig unseeded;
  try {
    run_pipeline(unseeded);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.exit_code(), 2);
  }
}

TEST(PipelineTest, CorpusSource) {
  TempDir dir;
  for (const char* spk : {"s1", "s2"}) {
    for (int i = 0; i < 5; ++i) {
      WriteSine(dir / "corpus" / spk / ("u" + std::to_string(i) + ".wav"));
    }
  }
  auto cfg = SmallConfig(dir / "out");
  cfg.dataset.kind = DatasetSource::Kind::kCorpus;
  cfg.dataset.corpus_dir = (dir / "corpus").string();
  try {
    run_pipeline(cfg);  // dirty_label 9 with two speakers
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.exit_code(), 4);
  }
  cfg.poison.dirty_label = 1;
  auto reports = run_pipeline(cfg);
  ASSERT_FALSE(reports.empty());
  EXPECT_EQ(poison::load_dataset(dir / "out" / "dataset").dataset.size(), 10u);
}

TEST(PipelineTest, RepeatsAggregate) {
  TempDir dir;
  auto cfg = SmallConfig(dir.path());
  cfg.eval.clean_baseline = false;
  cfg.eval.thd_probes = 0;
  auto reports = run_pipeline(cfg, 2);
  ASSERT_EQ(reports.size(), 1u);
  auto r0 = eval::read_report_csv(dir / "repeat_0" / "report.csv");
  auto r1 = eval::read_report_csv(dir / "repeat_1" / "report.csv");
  double mean = (r0[0].attack_success_rate + r1[0].attack_success_rate) / 2;
  EXPECT_DOUBLE_EQ(reports[0].attack_success_rate, mean);
  double sd = std::abs(r0[0].attack_success_rate - r1[0].attack_success_rate) /
              std::sqrt(2.0);
  EXPECT_NEAR(reports[0].attack_success_rate_std, sd, 1e-12);
}

}  // namespace
}  // namespace backbay::pipeline
