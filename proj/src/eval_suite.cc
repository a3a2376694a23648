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

#include "backbay/eval_suite.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace backbay::eval {
namespace {

double Fraction(std::size_t hits, std::size_t total) {
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

double ParseDouble(const std::string& s, const std::filesystem::path& path) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw EvalError(path.string() + ": bad number '" + s + "'");
  }
  return v;
}

std::string Pad(const std::string& s, std::size_t width) {
  return s + std::string(width > s.size() ? width - s.size() : 0, ' ');
}

}  // namespace

double benign_accuracy(const Classifier& classify,
                       const poison::LabeledDataset& clean_test) {
  if (clean_test.size() == 0) throw EvalError("benign_accuracy: empty test set");
  std::size_t hits = 0;
  for (const auto& item : clean_test.items) {
    hits += classify(item.clip) == item.label;
  }
  return Fraction(hits, clean_test.size());
}

double benign_accuracy(const victim::MlpClassifier& model,
                       const poison::LabeledDataset& clean_test) {
  return benign_accuracy(
      [&](const audio::AudioClip& c) { return victim::predict(model, c); },
      clean_test);
}

double attack_success_rate(const Classifier& classify,
                           const poison::LabeledDataset& poisoned_test,
                           int target) {
  if (poisoned_test.size() == 0) {
    throw EvalError("attack_success_rate: empty test set");
  }
  std::size_t hits = 0;
  for (const auto& item : poisoned_test.items) {
    hits += classify(item.clip) == target;
  }
  return Fraction(hits, poisoned_test.size());
}

double attack_success_rate(const victim::MlpClassifier& model,
                           const poison::LabeledDataset& poisoned_test,
                           int target) {
  return attack_success_rate(
      [&](const audio::AudioClip& c) { return victim::predict(model, c); },
      poisoned_test, target);
}

double thd(const audio::AudioClip& clip, double f0, const ThdOptions& opts) {
  const int w = opts.window;
  const double nyquist = clip.sample_rate / 2.0;
  if (w < 8) throw std::invalid_argument("thd: analysis window too small");
  if (opts.n_harmonics < 1 || !(f0 > 0.0) ||
      !(f0 * opts.n_harmonics < nyquist)) {
    throw std::invalid_argument("thd: need f0 * n_harmonics below Nyquist");
  }
  if (clip.samples.size() < static_cast<std::size_t>(w)) {
    throw std::invalid_argument("thd: clip shorter than one analysis window");
  }

  const auto window = audio::hann_window(w);
  double gain = 0.0;
  for (double v : window) gain += v;
  gain /= 2.0;  // sine of amplitude A peaks at A

  const std::size_t bins = static_cast<std::size_t>(w) / 2 + 1;
  std::vector<double> power(opts.n_harmonics + 1, 0.0);
  std::vector<double> frame(w);
  const std::size_t frames = clip.samples.size() / w;
  for (std::size_t f = 0; f < frames; ++f) {
    for (int i = 0; i < w; ++i) frame[i] = clip.samples[f * w + i] * window[i];
    auto spectrum = audio::real_dft(frame);
    for (int n = 1; n <= opts.n_harmonics; ++n) {
      auto centre = static_cast<long>(std::lround(n * f0 * w / clip.sample_rate));
      double peak = 0.0;
      for (long b = centre - 1; b <= centre + 1; ++b) {
        if (b < 0 || b >= static_cast<long>(bins)) continue;
        peak = std::max(peak, std::abs(spectrum[b]) / gain);
      }
      power[n] += peak * peak;
    }
  }
  const double fundamental = std::sqrt(power[1]);
  if (fundamental < 1e-9) {
    throw EvalError("thd: no tone at " + std::to_string(f0) + " Hz");
  }
  double harmonics = 0.0;
  for (int n = 2; n <= opts.n_harmonics; ++n) harmonics += power[n];
  return std::sqrt(harmonics) / fundamental;
}

ThdOptions fit_thd_options(const audio::AudioClip& clip, double f0,
                           ThdOptions requested) {
  std::size_t pow2 = 1;
  while (pow2 * 2 <= clip.samples.size()) pow2 *= 2;
  requested.window = static_cast<int>(
      std::min<std::size_t>(requested.window, pow2));
  if (f0 > 0.0) {
    const double nyquist = clip.sample_rate / 2.0;
    const int fit = static_cast<int>(std::ceil(nyquist / f0)) - 1;
    requested.n_harmonics = std::max(1, std::min(requested.n_harmonics, fit));
  }
  return requested;
}

double dominant_frequency(const audio::AudioClip& clip, int window) {
  const auto n = std::min<std::size_t>(clip.samples.size(), window);
  if (n < 8) throw std::invalid_argument("dominant_frequency: clip too short");
  const auto hann = audio::hann_window(n);
  std::vector<double> frame(n);
  for (std::size_t i = 0; i < n; ++i) frame[i] = clip.samples[i] * hann[i];
  auto spectrum = audio::real_dft(frame);
  std::size_t best = 1;
  for (std::size_t b = 2; b < spectrum.size(); ++b) {
    if (std::abs(spectrum[b]) > std::abs(spectrum[best])) best = b;
  }
  return static_cast<double>(best) * clip.sample_rate / static_cast<double>(n);
}

void render_spectrogram_image(const audio::Spectrogram& spec,
                              const std::filesystem::path& path) {
  if (spec.frames == 0 || spec.bins == 0) {
    throw std::invalid_argument("render_spectrogram_image: empty spectrogram");
  }
  constexpr double kRangeDb = 80.0;
  std::vector<double> db(spec.magnitudes.size());
  double top = -1e300;
  for (std::size_t i = 0; i < db.size(); ++i) {
    db[i] = 20.0 * std::log10(spec.magnitudes[i] + 1e-10);
    top = std::max(top, db[i]);
  }
  const double floor = top - kRangeDb;

  std::ostringstream out;
  out << "P6\n" << spec.frames << ' ' << spec.bins << "\n255\n";
  for (std::size_t row = 0; row < spec.bins; ++row) {
    const std::size_t bin = spec.bins - 1 - row;
    for (std::size_t f = 0; f < spec.frames; ++f) {
      double v = std::clamp((db[f * spec.bins + bin] - floor) / kRangeDb, 0.0,
                            1.0);
      // black -> red -> yellow -> white
      auto channel = [&](double offset) {
        return static_cast<char>(static_cast<unsigned char>(
            std::lround(255.0 * std::clamp(3.0 * v - offset, 0.0, 1.0))));
      };
      out << channel(0.0) << channel(1.0) << channel(2.0);
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  const std::string bytes = out.str();
  if (!f || !f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw EvalError("cannot write image " + path.string());
  }
}

std::string format_fraction(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string format_percent(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
  return buf;
}

nlohmann::ordered_json to_json(const AttackReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model_name;
  j["benign_accuracy"] = report.benign_accuracy;
  j["attack_success_rate"] = report.attack_success_rate;
  j["benign_accuracy_std"] = report.benign_accuracy_std;
  j["attack_success_rate_std"] = report.attack_success_rate_std;
  j["folds"] = nlohmann::ordered_json::array();
  for (const auto& f : report.folds) {
    j["folds"].push_back({{"fold", f.fold},
                          {"benign_accuracy", f.benign_accuracy},
                          {"attack_success_rate", f.attack_success_rate}});
  }
  j["thd"] = nlohmann::ordered_json::array();
  for (const auto& p : report.thd) {
    j["thd"].push_back({{"probe", p.name},
                        {"f0_hz", p.f0},
                        {"clean", p.clean},
                        {"poisoned", p.poisoned}});
  }
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  for (const auto& [k, v] : report.extra.items()) j[k] = v;
  return j;
}

void write_report(const std::vector<AttackReport>& reports,
                  const std::filesystem::path& dir) {
  if (reports.empty()) throw EvalError("write_report: nothing to write");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);

  const auto& first = reports.front();
  std::ofstream csv(dir / "report.csv", std::ios::trunc);
  std::ofstream txt(dir / "report.txt", std::ios::trunc);
  std::ofstream js(dir / "report.json", std::ios::trunc);
  if (!csv || !txt || !js) {
    throw EvalError("cannot write report files in " + dir.string());
  }

  csv << "# seed=" << first.seed << " config_hash=" << first.config_hash
      << '\n';
  csv << "Model,Benign Accuracy (BA),Attack Success Rate (ASR)\n";
  for (const auto& r : reports) {
    csv << CsvField(r.model_name) << ',' << format_fraction(r.benign_accuracy)
        << ',' << format_fraction(r.attack_success_rate) << '\n';
  }

  const std::string h1 = "Model", h2 = "Benign Accuracy (BA)",
                    h3 = "Attack Success Rate (ASR)";
  // Repeated runs show their spread on every cell, even when it is zero.
  bool spread = false;
  for (const auto& r : reports) {
    spread = spread || r.benign_accuracy_std > 0.0 ||
             r.attack_success_rate_std > 0.0;
  }
  auto cell = [spread](double mean, double sd) {
    std::string s = format_percent(mean);
    if (spread) s += " +- " + format_percent(sd);
    return s;
  };
  std::size_t w1 = h1.size(), w2 = h2.size();
  for (const auto& r : reports) {
    w1 = std::max(w1, r.model_name.size());
    w2 = std::max(w2, cell(r.benign_accuracy, r.benign_accuracy_std).size());
  }
  txt << Pad(h1, w1) << "  " << Pad(h2, w2) << "  " << h3 << '\n';
  txt << std::string(w1, '-') << "  " << std::string(w2, '-') << "  "
      << std::string(h3.size(), '-') << '\n';
  for (const auto& r : reports) {
    txt << Pad(r.model_name, w1) << "  "
        << Pad(cell(r.benign_accuracy, r.benign_accuracy_std), w2) << "  "
        << cell(r.attack_success_rate, r.attack_success_rate_std) << '\n';
  }
  for (const auto& r : reports) {
    if (r.thd.empty()) continue;
    txt << "\nTHD (" << r.model_name << ")\n";
    for (const auto& p : r.thd) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "  %-20s f0=%8.2f Hz  clean=%.6f  backdoored=%.6f\n",
                    p.name.c_str(), p.f0, p.clean, p.poisoned);
      txt << line;
    }
  }
  txt << "\nseed=" << first.seed << " config_hash=" << first.config_hash
      << '\n';

  nlohmann::ordered_json all = nlohmann::ordered_json::array();
  for (const auto& r : reports) all.push_back(to_json(r));
  js << all.dump(2) << '\n';

  if (!csv || !txt || !js) throw EvalError("report write failed");
}

std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open " + path.string());
  std::vector<ReportRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto fields = SplitCsv(line);
    if (fields.size() != 3) {
      throw EvalError(path.string() + ": expected 3 columns");
    }
    if (!header_seen) {
      if (fields[0] != "Model") throw EvalError(path.string() + ": no header");
      header_seen = true;
      continue;
    }
    rows.push_back({fields[0], ParseDouble(fields[1], path),
                    ParseDouble(fields[2], path)});
  }
  return rows;
}

}  // namespace backbay::eval
