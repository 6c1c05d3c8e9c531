#include "byols/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::data {

namespace fs = std::filesystem;

std::string task_name(SyntheticTask t) {
  switch (t) {
    case SyntheticTask::kTonePitchClass: return "tone_pitch_class";
    case SyntheticTask::kChordChroma: return "chord_chroma";
    case SyntheticTask::kNoiseVsTone: return "noise_vs_tone";
    case SyntheticTask::kEventOnsets: return "event_onsets";
  }
  return "unknown";
}

SyntheticTask parse_task(const std::string& s) {
  for (auto t : {SyntheticTask::kTonePitchClass, SyntheticTask::kChordChroma, SyntheticTask::kNoiseVsTone,
                 SyntheticTask::kEventOnsets}) {
    if (task_name(t) == s) return t;
  }
  fail(ErrorCode::kConfig, "unknown synthetic task '" + s + "'");
}

void SyntheticTaskSpec::validate() const {
  require(n_classes >= 2, "n_classes must be at least 2", ErrorCode::kConfig);
  require(clip_s > 0 && std::isfinite(clip_s), "clip_s must be positive", ErrorCode::kConfig);
  require(n_clips > 0, "n_clips must be positive", ErrorCode::kConfig);
  require(std::isfinite(snr_db), "snr_db must be finite", ErrorCode::kConfig);
  if (task == SyntheticTask::kNoiseVsTone) require(n_classes == 2, "noise_vs_tone has exactly 2 classes", ErrorCode::kConfig);
  if (task == SyntheticTask::kChordChroma) require(n_classes <= 12, "chord_chroma has at most 12 classes", ErrorCode::kConfig);
  if (task == SyntheticTask::kEventOnsets) require(clip_s >= 2.0, "event_onsets clips must be at least 2 s", ErrorCode::kConfig);
}

std::string class_name(const SyntheticTaskSpec& spec, int c) {
  if (spec.task == SyntheticTask::kNoiseVsTone) return c == 0 ? "noise" : "tone";
  return "class" + std::to_string(c);
}

double class_frequency(const SyntheticTaskSpec& spec, int c) {
  switch (spec.task) {
    case SyntheticTask::kTonePitchClass:
      // Evenly spaced over one octave above A3.
      return 220.0 * std::pow(2.0, static_cast<double>(c) / spec.n_classes);
    case SyntheticTask::kChordChroma:
      return 130.8128 * std::pow(2.0, static_cast<double>(c * (12 / spec.n_classes)) / 12.0);
    case SyntheticTask::kEventOnsets:
      // A fifth apart, so classes differ by more than a mel band.
      return 300.0 * std::pow(2.0, 7.0 * c / 12.0);
    case SyntheticTask::kNoiseVsTone:
      return 0.0;
  }
  return 0.0;
}

namespace {

using Rng = std::mt19937_64;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t clip_seed(std::uint64_t seed, std::size_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

/// Adds `harmonics` partials of f0 with random phases and 1/k-ish weights over [start, end).
void add_tone(std::vector<double>& y, std::size_t start, std::size_t end, double f0, int harmonics, double gain,
              Rng& rng) {
  std::vector<double> amp, phase;
  for (int k = 1; k <= harmonics; ++k) {
    amp.push_back(uniform(rng, 0.4, 1.0) / k);
    phase.push_back(uniform(rng, 0.0, kTwoPi));
  }
  const std::size_t ramp = std::min<std::size_t>(80, (end - start) / 2);  // 5 ms
  for (std::size_t n = start; n < end; ++n) {
    const double t = static_cast<double>(n - start) / audio::kModelRate;
    double v = 0;
    for (int k = 1; k <= harmonics; ++k) {
      const double f = k * f0;
      if (f >= 7800.0) break;
      v += amp[static_cast<std::size_t>(k - 1)] * std::sin(kTwoPi * f * t + phase[static_cast<std::size_t>(k - 1)]);
    }
    double env = 1.0;
    if (ramp > 0) {
      env = std::min({1.0, static_cast<double>(n - start) / ramp, static_cast<double>(end - 1 - n) / ramp});
    }
    y[n] += gain * env * v;
  }
}

/// A played note: detuned fundamental with vibrato, random harmonic tilt, attack and
/// exponential decay.
void add_note(std::vector<double>& y, double f0, Rng& rng) {
  const double detune = uniform(rng, -0.25, 0.25) / 12.0;
  const int harmonics = 1 + static_cast<int>(rng() % 8);
  const double tilt = uniform(rng, 0.5, 2.0);
  const double attack = uniform(rng, 0.01, 0.2);
  const double decay = uniform(rng, 0.0, 3.0);
  const double vib_rate = uniform(rng, 3.0, 7.0);
  const double vib_depth = uniform(rng, 0.0, 0.3) / 12.0;
  std::vector<double> amp, phase;
  for (int k = 1; k <= harmonics; ++k) {
    amp.push_back(std::pow(static_cast<double>(k), -tilt));
    phase.push_back(uniform(rng, 0.0, kTwoPi));
  }
  const double base = f0 * std::pow(2.0, detune);
  double theta = 0;  // running phase of the fundamental
  for (std::size_t n = 0; n < y.size(); ++n) {
    const double t = static_cast<double>(n) / audio::kModelRate;
    const double f = base * std::pow(2.0, vib_depth * std::sin(kTwoPi * vib_rate * t));
    theta += kTwoPi * f / audio::kModelRate;
    double v = 0;
    for (int k = 1; k <= harmonics && k * f < 7800.0; ++k) {
      v += amp[static_cast<std::size_t>(k - 1)] * std::sin(k * theta + phase[static_cast<std::size_t>(k - 1)]);
    }
    const double env = std::min(1.0, t / attack) * std::exp(-decay * t);
    y[n] += env * v;
  }
}

double power(const std::vector<double>& y, std::size_t start, std::size_t end) {
  double s = 0;
  for (std::size_t n = start; n < end; ++n) s += y[n] * y[n];
  return end > start ? s / static_cast<double>(end - start) : 0.0;
}

void add_noise(std::vector<double>& y, double rms, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (double& v : y) v += rms * g(rng);
}

void normalize_peak(std::vector<double>& y, double peak) {
  double m = 0;
  for (double v : y) m = std::max(m, std::abs(v));
  if (m > 0) {
    for (double& v : y) v *= peak / m;
  }
}

}  // namespace

SyntheticClip synthesize(const SyntheticTaskSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng(clip_seed(spec.seed, index));
  const int c = static_cast<int>(index % static_cast<std::size_t>(spec.n_classes));
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_s * audio::kModelRate));
  SyntheticClip out;
  out.clip.sample_rate = audio::kModelRate;
  out.clip.samples.assign(n, 0.0);
  auto& y = out.clip.samples;
  const double noise_ratio = std::pow(10.0, -spec.snr_db / 20.0);

  switch (spec.task) {
    case SyntheticTask::kTonePitchClass: {
      add_note(y, class_frequency(spec, c), rng);
      add_noise(y, std::sqrt(power(y, 0, n)) * noise_ratio, rng);
      break;
    }
    case SyntheticTask::kChordChroma: {
      const double root = class_frequency(spec, c) * (rng() % 2 == 0 ? 1.0 : 2.0);
      for (int step : {0, 4, 7}) add_tone(y, 0, n, root * std::pow(2.0, step / 12.0), 3, 1.0, rng);
      add_noise(y, std::sqrt(power(y, 0, n)) * noise_ratio, rng);
      break;
    }
    case SyntheticTask::kNoiseVsTone: {
      if (c == 1) {
        add_tone(y, 0, n, uniform(rng, 200.0, 2000.0), 3, 1.0, rng);
        add_noise(y, std::sqrt(power(y, 0, n)) * noise_ratio, rng);
      } else {
        add_noise(y, 0.3, rng);
      }
      break;
    }
    case SyntheticTask::kEventOnsets: {
      // Bursts of 0.6-1.2 s separated by 0.6-1.2 s of background.
      double t = uniform(rng, 0.2, 0.8);
      while (true) {
        const double dur = uniform(rng, 0.6, 1.2);
        if (t + dur > spec.clip_s - 0.1) break;
        const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.n_classes));
        const auto s0 = static_cast<std::size_t>(std::llround(t * audio::kModelRate));
        const auto s1 = static_cast<std::size_t>(std::llround((t + dur) * audio::kModelRate));
        add_tone(y, s0, s1, class_frequency(spec, label), 3, 0.5, rng);
        out.events.push_back(EventAnnotation{static_cast<double>(s0) / audio::kModelRate,
                                             static_cast<double>(s1) / audio::kModelRate, class_name(spec, label)});
        t += dur + uniform(rng, 0.6, 1.2);
      }
      add_noise(y, 0.5 * noise_ratio, rng);
      break;
    }
  }
  normalize_peak(y, 0.9);
  if (spec.task != SyntheticTask::kEventOnsets) out.label = class_name(spec, c);
  char id[32];
  std::snprintf(id, sizeof id, "%s_%05zu", task_name(spec.task).c_str(), index);
  out.clip.id = id;
  return out;
}

CorpusManifest generate_synthetic_corpus(const SyntheticTaskSpec& spec, const fs::path& dir) {
  spec.validate();
  fs::create_directories(dir / "wav");
  CorpusManifest m;
  for (std::size_t i = 0; i < spec.n_clips; ++i) {
    SyntheticClip s = synthesize(spec, i);
    ManifestRecord r;
    r.id = s.clip.id;
    r.audio_path = fs::absolute(dir / "wav" / (r.id + ".wav"));
    audio::write_wav(r.audio_path, s.clip);
    if (spec.task == SyntheticTask::kEventOnsets) {
      r.events_path = fs::absolute(dir / "wav" / (r.id + ".events.jsonl"));
      const std::string j = events_jsonl(s.events);
      io::write_file(*r.events_path, std::span(reinterpret_cast<const std::uint8_t*>(j.data()), j.size()));
      r.events = s.events;
    } else {
      r.label = s.label;
    }
    m.records.push_back(std::move(r));
  }
  save_manifest(m, dir / "manifest.csv");
  return load_manifest(dir / "manifest.csv");
}

}  // namespace byols::data
