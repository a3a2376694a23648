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

// backbay <subcommand> --config <path> [--seed N] [--out DIR] [--repeats K]
//         [--paper-lr]

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "backbay/audio_core.h"
#include "backbay/eval_suite.h"
#include "backbay/pipeline.h"

namespace {

using backbay::pipeline::PipelineConfig;
using backbay::pipeline::PipelineError;
using backbay::pipeline::Stage;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  int repeats = 1;
  bool paper_lr = false;
  std::string corpus;
  std::string input;
  std::string image;
  double f0 = 0.0;
};

PipelineConfig Resolve(const Flags& flags, bool need_seed) {
  PipelineConfig cfg;
  if (!flags.config.empty()) {
    cfg = backbay::pipeline::load_config(flags.config);
  } else if (need_seed) {
    throw std::invalid_argument("--config is required");
  }
  if (flags.seed) cfg.seed = flags.seed;
  if (!flags.out.empty()) cfg.output_dir = flags.out;
  if (!flags.corpus.empty()) {
    cfg.dataset.kind = backbay::pipeline::DatasetSource::Kind::kCorpus;
    cfg.dataset.corpus_dir = flags.corpus;
  }
  if (flags.paper_lr) {
    std::cerr << "warning: --paper-lr sets learning_rate = 0.1; expect an "
                 "erratic training loss (default is 0.001)\n";
    cfg.train.learning_rate = 0.1;
  }
  if (need_seed) cfg.validate();
  return cfg;
}

int RunThd(const Flags& flags) {
  auto clip = backbay::audio::read_wav(flags.input);
  backbay::eval::ThdOptions opts;
  if (!flags.config.empty()) {
    auto cfg = Resolve(flags, false);
    opts.n_harmonics = cfg.eval.thd_harmonics;
    opts.window = cfg.eval.thd_window;
  }
  opts.window = backbay::eval::fit_thd_options(clip, 0.0, opts).window;
  double f0 = flags.f0 > 0 ? flags.f0
                           : backbay::eval::dominant_frequency(clip, opts.window);
  opts = backbay::eval::fit_thd_options(clip, f0, opts);
  double thd = backbay::eval::thd(clip, f0, opts);
  std::printf("f0_hz=%.3f harmonics=%d window=%d thd=%.6g\n", f0,
              opts.n_harmonics, opts.window, thd);
  return 0;
}

int RunSpectrogram(const Flags& flags) {
  auto clip = backbay::audio::read_wav(flags.input);
  backbay::audio::FeatureConfig fc;
  if (!flags.config.empty()) fc = Resolve(flags, false).features;
  std::string image = flags.image.empty() ? flags.input + ".ppm" : flags.image;
  backbay::eval::render_spectrogram_image(
      backbay::audio::stft(clip, fc.frame_size, fc.hop), image);
  std::printf("%s\n", image.c_str());
  return 0;
}

void PrintReports(const std::vector<backbay::eval::AttackReport>& reports,
                  const std::string& dir) {
  int width = 0;
  for (const auto& r : reports) {
    width = std::max(width, static_cast<int>(r.model_name.size()));
  }
  for (const auto& r : reports) {
    std::printf("%-*s  BA %s  ASR %s\n", width, r.model_name.c_str(),
                backbay::eval::format_percent(r.benign_accuracy).c_str(),
                backbay::eval::format_percent(r.attack_success_rate).c_str());
  }
  std::printf("report written to %s\n", dir.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audio backdoor poisoning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags flags;
  app.add_option("--config", flags.config, "JSON config file");
  app.add_option("--seed", flags.seed, "master seed (overrides config)");
  app.add_option("--out", flags.out, "output directory (overrides config)");
  app.add_option("--repeats", flags.repeats, "independent repetitions")
      ->check(CLI::PositiveNumber);
  app.add_flag("--paper-lr", flags.paper_lr, "use learning rate 0.1");

  auto* synth = app.add_subcommand("synth-data", "build the synthetic dataset");
  auto* ingest = app.add_subcommand("ingest", "ingest a speaker corpus");
  ingest->add_option("--corpus", flags.corpus, "dir/<speaker>/*.wav");
  auto* poison = app.add_subcommand("poison", "sample trigger, poison dataset");
  auto* train = app.add_subcommand("train", "train victim models");
  auto* evaluate = app.add_subcommand("evaluate", "BA, ASR, THD and report");
  auto* run_all = app.add_subcommand("run-all", "every stage in order");
  auto* thd = app.add_subcommand("thd", "THD of one WAV file");
  thd->add_option("--input", flags.input, "WAV file")->required();
  thd->add_option("--f0", flags.f0, "fundamental in Hz (default: dominant)");
  auto* spectrogram = app.add_subcommand("spectrogram", "render a PPM");
  spectrogram->add_option("--input", flags.input, "WAV file")->required();
  spectrogram->add_option("--image", flags.image, "output .ppm");

  CLI11_PARSE(app, argc, argv);

  Stage stage = Stage::kConfig;
  try {
    if (thd->parsed()) {
      stage = Stage::kEvaluate;
      return RunThd(flags);
    }
    if (spectrogram->parsed()) {
      stage = Stage::kReport;
      return RunSpectrogram(flags);
    }

    PipelineConfig cfg = Resolve(flags, true);
    if (ingest->parsed() &&
        cfg.dataset.kind != backbay::pipeline::DatasetSource::Kind::kCorpus) {
      throw std::invalid_argument(
          "ingest needs --corpus or dataset.source = \"corpus\"");
    }
    if (synth->parsed()) {
      cfg.dataset.kind = backbay::pipeline::DatasetSource::Kind::kSynthetic;
    }
    if (flags.repeats > 1 && !run_all->parsed()) {
      throw std::invalid_argument("--repeats applies to run-all only");
    }

    if (synth->parsed() || ingest->parsed()) {
      backbay::pipeline::build_dataset(cfg);
    } else if (poison->parsed()) {
      backbay::pipeline::poison_stage(cfg);
    } else if (train->parsed()) {
      backbay::pipeline::train_stage(cfg);
    } else if (evaluate->parsed()) {
      PrintReports(backbay::pipeline::evaluate_stage(cfg), cfg.output_dir);
    } else if (run_all->parsed()) {
      PrintReports(backbay::pipeline::run_pipeline(cfg, flags.repeats),
                   cfg.output_dir);
    }
    return 0;
  } catch (const PipelineError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(stage);
  }
}
