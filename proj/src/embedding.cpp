#include "byols/embedding.hpp"

#include <cmath>

#include "json.hpp"

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::embed {

std::string mode_name(Mode m) { return m == Mode::kScene ? "scene" : "timestamp"; }

Mode parse_mode(const std::string& s) {
  if (s == "scene") return Mode::kScene;
  if (s == "timestamp") return Mode::kTimestamp;
  fail(ErrorCode::kInvalidArgument, "unknown embedding mode '" + s + "'");
}

namespace {

audio::AudioClip at_model_rate(const audio::AudioClip& clip) {
  require(!clip.samples.empty(), "empty clip");
  if (clip.sample_rate == audio::kModelRate) return clip;
  return audio::resample(clip, audio::kModelRate);
}

audio::LogMelSpectrogram prepare(const audio::AudioClip& clip16k, const audio::NormalizationStats& stats) {
  return audio::standardize(audio::log_mel(clip16k), stats);
}

}  // namespace

Embedding scene_embedding(const encoders::Encoder& enc, const audio::AudioClip& clip,
                          const audio::NormalizationStats& stats) {
  const audio::AudioClip c = at_model_rate(clip);
  return Embedding{clip.id, std::nullopt, encoders::encode(enc, prepare(c, stats))};
}

std::size_t window_count(double duration_s, double hop_s) {
  require(hop_s > 0 && std::isfinite(hop_s), "hop must be positive");
  require(duration_s >= 0, "negative duration");
  // The epsilon keeps 4.0 / 0.05 from landing just below 80.
  return static_cast<std::size_t>(std::floor(duration_s / hop_s + 1e-9)) + 1;
}

audio::AudioClip window_clip(const audio::AudioClip& clip16k, double window_s, double hop_s, std::size_t i) {
  require(window_s > 0 && std::isfinite(window_s), "window must be positive");
  const auto w = static_cast<long long>(std::llround(window_s * audio::kModelRate));
  const long long centre = std::llround(static_cast<double>(i) * hop_s * audio::kModelRate);
  const long long start = centre - w / 2;
  const auto n = static_cast<long long>(clip16k.samples.size());
  audio::AudioClip out;
  out.id = clip16k.id;
  out.sample_rate = audio::kModelRate;
  out.samples.assign(static_cast<std::size_t>(w), 0.0);
  for (long long k = 0; k < w; ++k) {
    const long long src = start + k;
    if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(k)] = clip16k.samples[static_cast<std::size_t>(src)];
  }
  return out;
}

TimestampEmbeddingSet timestamp_embeddings(const encoders::Encoder& enc, const audio::AudioClip& clip,
                                           const audio::NormalizationStats& stats, double window_s, double hop_s) {
  require(window_s > 0 && std::isfinite(window_s), "window must be positive");
  require(hop_s > 0 && std::isfinite(hop_s), "hop must be positive");
  const audio::AudioClip c = at_model_rate(clip);
  TimestampEmbeddingSet set;
  set.clip_id = clip.id;
  set.window_s = window_s;
  set.hop_s = hop_s;
  const std::size_t count = window_count(c.duration_s(), hop_s);
  set.embeddings.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto lms = prepare(window_clip(c, window_s, hop_s, i), stats);
    set.embeddings.push_back(Embedding{clip.id, static_cast<double>(i) * hop_s, encoders::encode(enc, lms)});
  }
  return set;
}

std::vector<std::uint8_t> encode_emb(const EmbeddingFile& f) {
  io::ByteWriter w;
  w.magic("EMB1");
  w.put<std::uint32_t>(f.dim);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(f.mode));
  for (const auto& r : f.records) {
    require(r.vector.size() == static_cast<Eigen::Index>(f.dim), "embedding length differs from file dim");
    require(r.timestamp_s.has_value() == (f.mode == Mode::kTimestamp), "timestamp presence must match mode");
    w.str(r.clip_id);
    if (r.timestamp_s) w.put<double>(*r.timestamp_s);
    for (Eigen::Index k = 0; k < r.vector.size(); ++k) w.put<float>(static_cast<float>(r.vector(k)));
  }
  return w.take();
}

EmbeddingFile decode_emb(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("EMB1");
  EmbeddingFile f;
  f.dim = r.get<std::uint32_t>();
  const auto mode = r.get<std::uint8_t>();
  if (mode > 1) fail(ErrorCode::kFormat, "unknown embedding mode byte " + std::to_string(mode));
  f.mode = static_cast<Mode>(mode);
  while (!r.done()) {
    Embedding e;
    e.clip_id = r.str();
    if (f.mode == Mode::kTimestamp) e.timestamp_s = r.get<double>();
    e.vector.resize(f.dim);
    for (std::uint32_t k = 0; k < f.dim; ++k) e.vector(k) = r.get<float>();
    f.records.push_back(std::move(e));
  }
  return f;
}

std::string to_jsonl(const EmbeddingFile& f) {
  std::string out;
  for (const auto& r : f.records) {
    nlohmann::json j;
    j["id"] = r.clip_id;
    if (r.timestamp_s) j["timestamp"] = *r.timestamp_s;
    std::vector<float> v(r.vector.size());
    for (Eigen::Index k = 0; k < r.vector.size(); ++k) v[static_cast<std::size_t>(k)] = static_cast<float>(r.vector(k));
    j["embedding"] = v;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace byols::embed
