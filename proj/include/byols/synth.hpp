#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "byols/manifest.hpp"

namespace byols::data {

enum class SyntheticTask { kTonePitchClass, kChordChroma, kNoiseVsTone, kEventOnsets };

std::string task_name(SyntheticTask t);
SyntheticTask parse_task(const std::string& s);

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::kTonePitchClass;
  std::size_t n_clips = 200;
  double clip_s = 1.0;
  int n_classes = 4;
  double snr_db = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticClip {
  audio::AudioClip clip;
  std::string label;                    // scene tasks
  std::vector<EventAnnotation> events;  // event_onsets
};

/// Deterministic clip i of the corpus; classes cycle so every class gets the same count.
SyntheticClip synthesize(const SyntheticTaskSpec& spec, std::size_t index);

std::string class_name(const SyntheticTaskSpec& spec, int c);
/// Fundamental of class c for the tone tasks, in Hz.
double class_frequency(const SyntheticTaskSpec& spec, int c);

/// Writes <dir>/wav/<id>.wav (float32), event files for event_onsets, and <dir>/manifest.csv.
CorpusManifest generate_synthetic_corpus(const SyntheticTaskSpec& spec, const std::filesystem::path& dir);

}  // namespace byols::data
