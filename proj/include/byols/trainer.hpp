#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "byols/augment.hpp"
#include "byols/encoders.hpp"
#include "byols/nn/adam.hpp"

namespace byols::train {

using nn::Index;

struct HeadConfig {
  Index projector_hidden = 512;
  Index projector_out = 256;
  Index predictor_hidden = 512;

  /// Hidden widths 4096 * multiplier; output 256, or d_sup in hybrid mode.
  static HeadConfig for_width(double width_multiplier, std::optional<Index> d_sup);
};

struct HybridLossWeights {
  double alpha = 1.0;  // supervised (handcrafted-feature) term
  double beta = 1.0;   // self-supervised term

  void validate() const;
};

struct LossBreakdown {
  double l_ss = 0.0;
  double l_sup = 0.0;
  double l_hybrid = 0.0;
};

struct TrainConfig {
  Index batch_size = 256;
  double learning_rate = 3e-4;
  int epochs = 100;
  bool hybrid = false;
  HybridLossWeights weights;
  bool symmetrize = true;
  bool normalized_mse = false;
  /// Compare handcrafted features with the projector output instead of the predictor output.
  bool sup_on_projector = false;
  double ema_decay = 0.99;
  std::uint64_t seed = 0;

  void validate() const;
};

// Value-level losses over [N, D] batches.
double ss_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target, bool normalized);
double sup_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& features);
double hybrid_loss(double l_sup, double l_ss, const HybridLossWeights& w);

// Graph versions used for training.
nn::Var ss_loss(nn::Var prediction, nn::Var target, bool normalized);
nn::Var sup_loss(nn::Var prediction, nn::Var features);

/// target <- tau * target + (1 - tau) * online for every tensor, matched by position and name.
void ema_update(nn::ParameterStore& target, nn::ParameterStore& online, double tau);

/// The online (encoder, projector, predictor) and target (encoder, projector)
/// networks plus optimizer state.
class TrainerState {
 public:
  TrainerState(const encoders::EncoderConfig& enc, const HeadConfig& heads, const TrainConfig& cfg);

  encoders::Encoder& online_encoder() { return *online_encoder_; }
  encoders::Encoder& target_encoder() { return *target_encoder_; }
  const encoders::Encoder& online_encoder() const { return *online_encoder_; }
  nn::ParameterStore& projector_store() { return projector_store_; }
  nn::ParameterStore& predictor_store() { return predictor_store_; }
  nn::ParameterStore& target_projector_store() { return target_projector_store_; }
  nn::Adam& optimizer() { return *optimizer_; }
  const HeadConfig& heads() const { return head_cfg_; }
  const TrainConfig& config() const { return cfg_; }
  TrainConfig& config() { return cfg_; }

  /// Online encoder, projector, predictor stores; target encoder, projector stores.
  std::vector<nn::ParameterStore*> online_stores();
  std::vector<nn::ParameterStore*> target_stores();
  /// Copies (encoder, projector) online -> target when tau == 0, otherwise blends.
  void update_target(double tau);

  nn::Var online_projection(nn::ForwardContext& ctx, nn::Var x) const;
  nn::Var online_prediction(nn::ForwardContext& ctx, nn::Var projection) const;
  nn::Var target_projection(nn::ForwardContext& ctx, nn::Var x) const;

  long long step = 0;
  int epoch = 0;

 private:
  encoders::EncoderConfig enc_cfg_;
  HeadConfig head_cfg_;
  TrainConfig cfg_;
  std::unique_ptr<encoders::Encoder> online_encoder_;
  std::unique_ptr<encoders::Encoder> target_encoder_;
  nn::ParameterStore projector_store_;
  nn::ParameterStore predictor_store_;
  nn::ParameterStore target_projector_store_;
  nn::MlpHead projector_;
  nn::MlpHead predictor_;
  nn::MlpHead target_projector_;
  std::unique_ptr<nn::Adam> optimizer_;
};

/// Online predictor output for a batch of views, [N, projector_out].
Eigen::MatrixXd forward_online(TrainerState& state, std::span<const audio::LogMelSpectrogram> views,
                               bool training = false);
/// Target projector output for a batch of views; never touches gradients.
Eigen::MatrixXd forward_target(TrainerState& state, std::span<const audio::LogMelSpectrogram> views,
                               bool training = false);

/// Builds the hybrid loss of fixed view pairs on `graph`. Accumulates nothing.
struct LossGraph {
  nn::Var loss;
  LossBreakdown breakdown;
  Eigen::MatrixXd projections_a;  // online projections of view_a, for collapse monitoring
};
LossGraph build_loss(nn::Graph& graph, TrainerState& state, std::span<const augment::ViewPair> pairs,
                     const Eigen::MatrixXd* features, std::uint64_t dropout_seed);

struct StepResult {
  LossBreakdown loss;
  double projection_variance = 0.0;  // mean per-dimension batch variance of online projections
};

/// One optimisation step over fixed view pairs: hybrid loss, backprop through the
/// online branch only, Adam, then EMA of the target.
StepResult train_on_views(TrainerState& state, std::span<const augment::ViewPair> pairs,
                          const Eigen::MatrixXd* features);

/// Augment a batch, then train_on_views. `features` rows align with `batch`
/// (already standardized) and are required in hybrid mode.
StepResult train_step(TrainerState& state, std::span<const audio::LogMelSpectrogram> batch,
                      const Eigen::MatrixXd* features, const audio::NormalizationStats& stats,
                      const augment::AugmentationConfig& aug, augment::MixupMemoryBank& bank, augment::Rng& rng);

struct EpochLog {
  long long step;
  int epoch;
  LossBreakdown loss;
  double projection_variance;
};

/// Epoch loop over a pre-computed corpus of spectrograms (and standardized features
/// in hybrid mode). Batches are drawn from a per-epoch shuffle; a trailing batch
/// smaller than 2 is dropped.
void fit(TrainerState& state, std::span<const audio::LogMelSpectrogram> corpus, const Eigen::MatrixXd* features,
         const audio::NormalizationStats& stats, const augment::AugmentationConfig& aug, int epochs,
         const std::function<void(const EpochLog&)>& on_step = {});

}  // namespace byols::train
