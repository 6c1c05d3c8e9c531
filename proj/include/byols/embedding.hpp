#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "byols/audio.hpp"
#include "byols/encoders.hpp"

namespace byols::embed {

struct Embedding {
  std::string clip_id;
  std::optional<double> timestamp_s;
  Eigen::VectorXd vector;
};

enum class Mode : std::uint8_t { kScene = 0, kTimestamp = 1 };

std::string mode_name(Mode m);
Mode parse_mode(const std::string& s);

struct TimestampEmbeddingSet {
  std::string clip_id;
  double window_s = 1.0;
  double hop_s = 0.05;
  std::vector<Embedding> embeddings;
};

/// Resample to 16 kHz, log-mel, standardize with dataset stats, encode in inference mode.
Embedding scene_embedding(const encoders::Encoder& enc, const audio::AudioClip& clip,
                          const audio::NormalizationStats& stats);

/// Number of window centres i * hop_s for i = 0 .. floor(duration / hop_s).
std::size_t window_count(double duration_s, double hop_s);

/// Centred windows over a half-window zero-padded clip, one embedding per centre.
TimestampEmbeddingSet timestamp_embeddings(const encoders::Encoder& enc, const audio::AudioClip& clip,
                                           const audio::NormalizationStats& stats, double window_s, double hop_s);

/// The samples that window i sees: [i*hop - window/2, i*hop + window/2) with zeros outside the clip.
audio::AudioClip window_clip(const audio::AudioClip& clip16k, double window_s, double hop_s, std::size_t i);

struct EmbeddingFile {
  Mode mode = Mode::kScene;
  std::uint32_t dim = 0;
  std::vector<Embedding> records;
};

// "EMB1": u32 dim, u8 mode, then records to end of file: u32 id length + id,
// f64 timestamp (timestamp mode only), dim x f32.
std::vector<std::uint8_t> encode_emb(const EmbeddingFile& f);
EmbeddingFile decode_emb(std::span<const std::uint8_t> bytes);
/// One JSON object per line: {"id", "timestamp" (timestamp mode), "embedding"}.
std::string to_jsonl(const EmbeddingFile& f);

}  // namespace byols::embed
