#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "byols/audio.hpp"
#include "byols/encoders.hpp"
#include "byols/trainer.hpp"

namespace byols::ckpt {

inline constexpr std::uint32_t kVersion = 1;

// "BYCK", u32 version, u32-length JSON metadata, u32 tensor count, then per tensor:
// u32-length name, u32 rank, rank x u32 dims, little-endian f32 values. A trailing
// u64 FNV-1a of every preceding byte guards the whole file.
struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, nn::Tensor>> tensors;

  const nn::Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode(const Checkpoint& c);
Checkpoint decode(std::span<const std::uint8_t> bytes);
void save(const Checkpoint& c, const std::filesystem::path& path);  // atomic
Checkpoint load(const std::filesystem::path& path);

nlohmann::json to_json(const encoders::EncoderConfig& c);
encoders::EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const train::HeadConfig& h);
train::HeadConfig head_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);

/// Every online, target and optimizer tensor plus counters; `extra` is merged into meta.
Checkpoint from_trainer(train::TrainerState& state, const audio::NormalizationStats& stats,
                        const nlohmann::json& extra = nlohmann::json::object());
Checkpoint from_encoder(const encoders::Encoder& enc, const audio::NormalizationStats& stats);

/// Rebuilds a trainer from a trainer checkpoint; tensors and optimizer state are restored.
std::unique_ptr<train::TrainerState> to_trainer(const Checkpoint& c);

struct LoadedEncoder {
  std::unique_ptr<encoders::Encoder> encoder;
  audio::NormalizationStats stats;
  nlohmann::json meta;
};
/// The online encoder of a trainer checkpoint or the encoder of an encoder checkpoint.
LoadedEncoder to_encoder(const Checkpoint& c);
LoadedEncoder load_encoder(const std::filesystem::path& path);

}  // namespace byols::ckpt
