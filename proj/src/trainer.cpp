#include "byols/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "byols/error.hpp"

namespace byols::train {

using nn::ForwardContext;
using nn::Graph;
using nn::Var;

HeadConfig HeadConfig::for_width(double width_multiplier, std::optional<Index> d_sup) {
  HeadConfig h;
  h.projector_hidden = encoders::scaled(4096, width_multiplier);
  h.predictor_hidden = h.projector_hidden;
  h.projector_out = d_sup ? *d_sup : 256;
  return h;
}

void HybridLossWeights::validate() const {
  require(std::isfinite(alpha) && std::isfinite(beta), "loss weights must be finite", ErrorCode::kConfig);
  require(alpha >= 0 && beta >= 0, "loss weights must be non-negative", ErrorCode::kConfig);
  require(alpha + beta > 0, "alpha + beta must be positive", ErrorCode::kConfig);
}

void TrainConfig::validate() const {
  require(batch_size >= 2, "batch_size must be at least 2", ErrorCode::kConfig);
  require(learning_rate > 0 && std::isfinite(learning_rate), "learning_rate must be positive", ErrorCode::kConfig);
  require(epochs >= 0, "epochs must be non-negative", ErrorCode::kConfig);
  require(ema_decay >= 0 && ema_decay <= 1, "ema_decay must lie in [0, 1]", ErrorCode::kConfig);
  weights.validate();
}

double ss_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& target, bool normalized) {
  require(prediction.rows() == target.rows() && prediction.cols() == target.cols(), "ss_loss: length mismatch");
  require(prediction.size() > 0, "ss_loss: empty input");
  if (!normalized) return (prediction - target).squaredNorm() / static_cast<double>(prediction.size());
  double total = 0;
  for (Index i = 0; i < prediction.rows(); ++i) {
    const Eigen::RowVectorXd a = prediction.row(i) / std::sqrt(prediction.row(i).squaredNorm() + 1e-12);
    const Eigen::RowVectorXd b = target.row(i) / std::sqrt(target.row(i).squaredNorm() + 1e-12);
    total += (a - b).squaredNorm();
  }
  return total / static_cast<double>(prediction.rows());
}

double sup_loss(const Eigen::MatrixXd& prediction, const Eigen::MatrixXd& features) {
  require(prediction.rows() == features.rows() && prediction.cols() == features.cols(), "sup_loss: length mismatch");
  require(prediction.size() > 0, "sup_loss: empty input");
  return (prediction - features).squaredNorm() / static_cast<double>(prediction.size());
}

double hybrid_loss(double l_sup, double l_ss, const HybridLossWeights& w) { return w.alpha * l_sup + w.beta * l_ss; }

Var ss_loss(Var prediction, Var target, bool normalized) {
  require(prediction.shape() == target.shape(), "ss_loss: length mismatch");
  if (!normalized) return nn::mse(prediction, target);
  // Mean over rows of |a^ - b^|^2 = 2 - 2 cos.
  const double d = static_cast<double>(prediction.dim(-1));
  return nn::scale(nn::mse(nn::l2_normalize_rows(prediction), nn::l2_normalize_rows(target)), d);
}

Var sup_loss(Var prediction, Var features) {
  require(prediction.shape() == features.shape(), "sup_loss: length mismatch");
  return nn::mse(prediction, features);
}

void ema_update(nn::ParameterStore& target, nn::ParameterStore& online, double tau) {
  require(tau >= 0 && tau <= 1, "ema decay must lie in [0, 1]");
  auto t = target.all();
  auto o = online.all();
  require(t.size() == o.size(), "ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i]->name == o[i]->name && t[i]->value.shape == o[i]->value.shape,
            "ema_update: tensor mismatch at " + o[i]->name);
    if (tau == 0.0) {
      t[i]->value.data = o[i]->value.data;
    } else if (tau != 1.0) {
      t[i]->value.data = tau * t[i]->value.data + (1.0 - tau) * o[i]->value.data;
    }
  }
}

TrainerState::TrainerState(const encoders::EncoderConfig& enc, const HeadConfig& heads, const TrainConfig& cfg)
    : enc_cfg_(enc), head_cfg_(heads), cfg_(cfg) {
  cfg_.validate();
  require(heads.projector_hidden > 0 && heads.projector_out > 0 && heads.predictor_hidden > 0,
          "head sizes must be positive", ErrorCode::kConfig);
  online_encoder_ = encoders::make_encoder(enc);
  target_encoder_ = encoders::make_encoder(enc);
  const Index d = online_encoder_->embedding_dim();
  nn::Rng rng(enc.seed ^ 0x5bd1e995ULL);
  projector_ = nn::MlpHead(projector_store_, "projector", d, heads.projector_hidden, heads.projector_out, rng);
  predictor_ = nn::MlpHead(predictor_store_, "predictor", heads.projector_out, heads.predictor_hidden,
                           heads.projector_out, rng);
  nn::Rng scratch(0);
  target_projector_ =
      nn::MlpHead(target_projector_store_, "projector", d, heads.projector_hidden, heads.projector_out, scratch);
  update_target(0.0);

  std::vector<nn::Parameter*> params;
  for (auto* s : online_stores()) {
    for (auto* p : s->trainable()) params.push_back(p);
  }
  optimizer_ = std::make_unique<nn::Adam>(std::move(params), nn::AdamOptions{cfg_.learning_rate, 0.9, 0.999, 1e-8});
}

std::vector<nn::ParameterStore*> TrainerState::online_stores() {
  return {&online_encoder_->store(), &projector_store_, &predictor_store_};
}

std::vector<nn::ParameterStore*> TrainerState::target_stores() {
  return {&target_encoder_->store(), &target_projector_store_};
}

void TrainerState::update_target(double tau) {
  ema_update(target_encoder_->store(), online_encoder_->store(), tau);
  ema_update(target_projector_store_, projector_store_, tau);
}

Var TrainerState::online_projection(ForwardContext& ctx, Var x) const {
  return projector_(ctx, online_encoder_->forward(ctx, x));
}

Var TrainerState::online_prediction(ForwardContext& ctx, Var projection) const { return predictor_(ctx, projection); }

Var TrainerState::target_projection(ForwardContext& ctx, Var x) const {
  return target_projector_(ctx, target_encoder_->forward(ctx, x));
}

namespace {

void check_views(std::span<const audio::LogMelSpectrogram> views) {
  require(!views.empty(), "empty batch");
  for (const auto& v : views) {
    require(v.values.rows() == audio::kMelBands, "view must have 64 mel bins");
    require(v.values.cols() == views.front().values.cols(), "views in a batch must share a length");
  }
}

// Per-sample dropout seeds differ between the online and target branches and across steps.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Eigen::MatrixXd forward_online(TrainerState& state, std::span<const audio::LogMelSpectrogram> views, bool training) {
  check_views(views);
  Graph g;
  ForwardContext ctx{g, training, false, mix_seed(state.config().seed, 1), nullptr, false};
  const Var x = g.constant(encoders::batch_tensor(views));
  return state.online_prediction(ctx, state.online_projection(ctx, x)).value().to_matrix();
}

Eigen::MatrixXd forward_target(TrainerState& state, std::span<const audio::LogMelSpectrogram> views, bool training) {
  check_views(views);
  Graph g;
  ForwardContext ctx{g, training, false, mix_seed(state.config().seed, 2), nullptr, false};
  const Var x = g.constant(encoders::batch_tensor(views));
  return state.target_projection(ctx, x).value().to_matrix();
}

LossGraph build_loss(Graph& graph, TrainerState& state, std::span<const augment::ViewPair> pairs,
                     const Eigen::MatrixXd* features, std::uint64_t dropout_seed) {
  const TrainConfig& cfg = state.config();
  const Index n = static_cast<Index>(pairs.size());
  require(n >= 2, "training batch needs at least 2 clips");
  std::vector<audio::LogMelSpectrogram> va, vb;
  va.reserve(pairs.size());
  vb.reserve(pairs.size());
  for (const auto& p : pairs) {
    va.push_back(p.view_a);
    vb.push_back(p.view_b);
  }
  check_views(va);
  check_views(vb);
  if (cfg.hybrid) {
    require(features != nullptr, "hybrid mode requires handcrafted features");
    require(features->rows() == n, "feature/batch misalignment: " + std::to_string(features->rows()) +
                                       " feature rows for " + std::to_string(n) + " clips");
    require(features->cols() == state.heads().projector_out,
            "feature dimension " + std::to_string(features->cols()) + " does not match projector output " +
                std::to_string(state.heads().projector_out));
  }

  const Var xa = graph.constant(encoders::batch_tensor(va));
  const Var xb = graph.constant(encoders::batch_tensor(vb));

  // Online branch: tracked parameters, batch statistics feed the running averages.
  ForwardContext online{graph, true, true, mix_seed(dropout_seed, 10)};
  const Var proj_a = state.online_projection(online, xa);
  const Var pred_a = state.online_prediction(online, proj_a);
  Var proj_b, pred_b;
  if (cfg.symmetrize) {
    proj_b = state.online_projection(online, xb);
    pred_b = state.online_prediction(online, proj_b);
  }

  // Target branch: constants (stop-gradient) and frozen running averages.
  ForwardContext target{graph, true, false, mix_seed(dropout_seed, 20), nullptr, false};
  const Var tgt_b = graph.constant(state.target_projection(target, xb).value());
  Var tgt_a;
  if (cfg.symmetrize) tgt_a = graph.constant(state.target_projection(target, xa).value());

  LossGraph out;
  out.projections_a = proj_a.value().to_matrix();
  Var l_ss = ss_loss(pred_a, tgt_b, cfg.normalized_mse);
  if (cfg.symmetrize) l_ss = nn::scale(nn::add(l_ss, ss_loss(pred_b, tgt_a, cfg.normalized_mse)), 0.5);
  out.breakdown.l_ss = l_ss.value().data(0);

  const HybridLossWeights& w = cfg.hybrid ? cfg.weights : HybridLossWeights{0.0, cfg.weights.beta};
  Var l_sup;
  if (cfg.hybrid) {
    const Var f = graph.constant(nn::Tensor::from_matrix(*features));
    const Var sa = cfg.sup_on_projector ? proj_a : pred_a;
    l_sup = sup_loss(sa, f);
    if (cfg.symmetrize) {
      const Var sb = cfg.sup_on_projector ? proj_b : pred_b;
      l_sup = nn::scale(nn::add(l_sup, sup_loss(sb, f)), 0.5);
    }
    out.breakdown.l_sup = l_sup.value().data(0);
  }

  // Zero-weight terms stay out of the graph so their gradients cannot leak NaNs in.
  if (w.alpha == 0.0) {
    out.loss = nn::scale(l_ss, w.beta);
  } else if (w.beta == 0.0) {
    out.loss = nn::scale(l_sup, w.alpha);
  } else {
    out.loss = nn::add(nn::scale(l_sup, w.alpha), nn::scale(l_ss, w.beta));
  }
  out.breakdown.l_hybrid = out.loss.value().data(0);
  return out;
}

StepResult train_on_views(TrainerState& state, std::span<const augment::ViewPair> pairs,
                          const Eigen::MatrixXd* features) {
  Graph graph;
  LossGraph lg = build_loss(graph, state, pairs, features, mix_seed(state.config().seed, 1000 + state.step));
  if (!std::isfinite(lg.breakdown.l_hybrid) || !std::isfinite(lg.breakdown.l_ss) ||
      !std::isfinite(lg.breakdown.l_sup)) {
    fail(ErrorCode::kDivergence, "divergence: non-finite loss at step " + std::to_string(state.step));
  }
  state.optimizer().zero_grad();
  graph.backward(lg.loss);
  state.optimizer().step();
  state.update_target(state.config().ema_decay);
  ++state.step;

  StepResult r;
  r.loss = lg.breakdown;
  const Eigen::MatrixXd& p = lg.projections_a;
  const Eigen::RowVectorXd mean = p.colwise().mean();
  r.projection_variance = (p.rowwise() - mean).array().square().colwise().mean().mean();
  return r;
}

StepResult train_step(TrainerState& state, std::span<const audio::LogMelSpectrogram> batch,
                      const Eigen::MatrixXd* features, const audio::NormalizationStats& stats,
                      const augment::AugmentationConfig& aug, augment::MixupMemoryBank& bank, augment::Rng& rng) {
  require(!batch.empty(), "empty batch");
  if (state.config().hybrid) {
    require(features != nullptr && features->rows() == static_cast<Index>(batch.size()),
            "feature/batch misalignment");
  }
  std::vector<augment::ViewPair> pairs;
  pairs.reserve(batch.size());
  for (const auto& clip : batch) pairs.push_back(augment::make_view_pair(clip, stats, aug, bank, rng));
  return train_on_views(state, pairs, features);
}

void fit(TrainerState& state, std::span<const audio::LogMelSpectrogram> corpus, const Eigen::MatrixXd* features,
         const audio::NormalizationStats& stats, const augment::AugmentationConfig& aug, int epochs,
         const std::function<void(const EpochLog&)>& on_step) {
  const TrainConfig& cfg = state.config();
  const Index n = static_cast<Index>(corpus.size());
  require(n >= 2, "training corpus needs at least 2 clips");
  if (cfg.hybrid) {
    require(features != nullptr && features->rows() == n, "feature/corpus misalignment");
  }
  aug.validate();
  augment::MixupMemoryBank bank(aug.memory_capacity);
  const int last = state.epoch + epochs;
  for (; state.epoch < last; ++state.epoch) {
    // Seeded per epoch so a resumed run draws the same batches.
    augment::Rng rng(mix_seed(cfg.seed ^ aug.seed, static_cast<std::uint64_t>(state.epoch)));
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n - start);
      if (len < 2) break;
      std::vector<audio::LogMelSpectrogram> batch;
      Eigen::MatrixXd f;
      if (cfg.hybrid) f.resize(len, features->cols());
      for (Index i = 0; i < len; ++i) {
        const Index idx = order[static_cast<std::size_t>(start + i)];
        batch.push_back(corpus[static_cast<std::size_t>(idx)]);
        if (cfg.hybrid) f.row(i) = features->row(idx);
      }
      const StepResult r = train_step(state, batch, cfg.hybrid ? &f : nullptr, stats, aug, bank, rng);
      if (on_step) on_step(EpochLog{state.step, state.epoch, r.loss, r.projection_variance});
    }
  }
}

}  // namespace byols::train
