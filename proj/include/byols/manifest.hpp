#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "byols/audio.hpp"
#include "byols/evaluation.hpp"

namespace byols::data {

/// One event annotation; the label is a class name.
struct EventAnnotation {
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string label;
};

struct ManifestRecord {
  std::filesystem::path audio_path;  // absolute after loading
  std::string id;
  std::optional<std::string> label;
  std::optional<std::filesystem::path> events_path;
  std::vector<EventAnnotation> events;
};

struct CorpusManifest {
  int format_version = 1;
  std::filesystem::path source;
  std::vector<ManifestRecord> records;

  /// Sorted distinct scene labels.
  std::vector<std::string> scene_classes() const;
  /// Sorted distinct event labels.
  std::vector<std::string> event_classes() const;
};

// CSV with header "path,id,label,events"; label and events may be empty. An optional
// first line "#byols-manifest v<N>" sets the format version. Relative paths resolve
// against the manifest's directory. Fields may be double-quoted.
CorpusManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const CorpusManifest& m, const std::filesystem::path& path);

// Event annotation files: one JSON object per line, {"onset": s, "offset": s, "label": name}.
std::vector<EventAnnotation> load_events(const std::filesystem::path& path);
std::string events_jsonl(const std::vector<EventAnnotation>& events);

/// Maps annotation labels to indices in `classes`.
eval::EventList to_event_list(const std::vector<EventAnnotation>& events, const std::vector<std::string>& classes);

/// Reads the record's audio and resamples it to 16 kHz; the id is set from the record.
audio::AudioClip load_clip(const ManifestRecord& r);

}  // namespace byols::data
