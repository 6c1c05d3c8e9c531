#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "byols/audio.hpp"
#include "byols/nn/layers.hpp"

namespace byols::encoders {

using nn::ForwardContext;
using nn::Index;
using nn::Var;

enum class Arch { kDefaultCnn, kResnetish34, kClstm, kCvtLite };

std::string arch_name(Arch a);
Arch parse_arch(const std::string& name);

struct EncoderConfig {
  Arch arch = Arch::kDefaultCnn;
  double width_multiplier = 0.125;
  std::uint64_t seed = 0;
  double dropout = 0.3;  // DefaultCnn only

  void validate() const;
  /// 2048 * multiplier (1024 * multiplier for Clstm).
  Index embedding_dim() const;
};

/// Channel count scaled by the width multiplier, at least 1.
Index scaled(Index base, double multiplier);

class Encoder {
 public:
  explicit Encoder(EncoderConfig cfg) : cfg_(cfg) {}
  virtual ~Encoder() = default;
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;

  /// [N, 1, 64, T] -> [N, embedding_dim].
  virtual Var forward(ForwardContext& ctx, Var x) const = 0;
  /// Names of the post-block activations recorded during forward.
  virtual std::vector<std::string> layer_names() const = 0;

  const EncoderConfig& config() const { return cfg_; }
  Index embedding_dim() const { return cfg_.embedding_dim(); }
  static constexpr Index kMinFrames = 8;

  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }

 protected:
  EncoderConfig cfg_;
  nn::ParameterStore store_;
};

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg);

/// Trainable parameter count of the constructed network.
Index count_parameters(const EncoderConfig& cfg);

/// Stacks standardized spectrograms (all 64 x T with equal T) into [N, 1, 64, T].
nn::Tensor batch_tensor(std::span<const audio::LogMelSpectrogram> batch);

/// Inference-mode forward pass of a single spectrogram.
Eigen::VectorXd encode(const Encoder& enc, const audio::LogMelSpectrogram& lms,
                       nn::ActivationRecorder* recorder = nullptr);

// Exposed for the CvtLite tests.
inline constexpr std::array<Index, 3> kCvtWidths{64, 256, 512};
inline constexpr std::array<Index, 3> kCvtHeads{1, 2, 4};

}  // namespace byols::encoders
