#include "byols/encoders.hpp"

#include <cmath>

#include "byols/error.hpp"

namespace byols::encoders {

using nn::BatchNorm;
using nn::Conv2d;
using nn::Conv2dOptions;
using nn::LayerNorm;
using nn::Linear;
using nn::Lstm;
using nn::PoolOptions;
using nn::Rng;
using nn::Tensor;

std::string arch_name(Arch a) {
  switch (a) {
    case Arch::kDefaultCnn: return "default_cnn";
    case Arch::kResnetish34: return "resnetish34";
    case Arch::kClstm: return "clstm";
    case Arch::kCvtLite: return "cvt_lite";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  for (Arch a : {Arch::kDefaultCnn, Arch::kResnetish34, Arch::kClstm, Arch::kCvtLite}) {
    if (arch_name(a) == name) return a;
  }
  fail(ErrorCode::kConfig, "unknown encoder architecture '" + name + "'");
}

void EncoderConfig::validate() const {
  require(width_multiplier > 0.0 && width_multiplier <= 1.0, "width_multiplier must lie in (0, 1]", ErrorCode::kConfig);
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)", ErrorCode::kConfig);
}

Index scaled(Index base, double multiplier) {
  return std::max<Index>(1, static_cast<Index>(std::llround(static_cast<double>(base) * multiplier)));
}

Index EncoderConfig::embedding_dim() const {
  if (arch == Arch::kCvtLite) return 4 * scaled(kCvtWidths[2], width_multiplier);
  return scaled(arch == Arch::kClstm ? 1024 : 2048, width_multiplier);
}

namespace {

// [N, C, F, T] -> [N, T, C * F]
Var to_sequence(Var x) {
  const Index n = x.dim(0), c = x.dim(1), f = x.dim(2), t = x.dim(3);
  return nn::reshape(nn::permute(x, {0, 3, 1, 2}), {n, t, c * f});
}

// Three Conv-BN-ReLU-MaxPool blocks, two linear layers, temporal mean + max.
class DefaultCnn final : public Encoder {
 public:
  explicit DefaultCnn(const EncoderConfig& cfg) : Encoder(cfg) {
    Rng rng(cfg.seed);
    const Index ch = scaled(64, cfg.width_multiplier);
    const Index d = cfg.embedding_dim();
    Conv2dOptions same{1, 1, 1, 1, 1};
    for (int i = 0; i < 3; ++i) {
      const std::string name = "conv" + std::to_string(i + 1);
      convs_[i] = Conv2d(store_, name, i == 0 ? 1 : ch, ch, 3, 3, same, rng);
      bns_[i] = BatchNorm(store_, name + ".bn", ch);
    }
    fc1_ = Linear(store_, "fc1", ch * (audio::kMelBands / 8), d, rng);
    fc2_ = Linear(store_, "fc2", d, d, rng);
  }

  Var forward(ForwardContext& ctx, Var x) const override {
    for (int i = 0; i < 3; ++i) {
      x = nn::max_pool2d(nn::relu(bns_[i](ctx, convs_[i](ctx, x))), PoolOptions{});
      nn::record_map(ctx, "conv" + std::to_string(i + 1), x);
    }
    Var h = nn::relu(fc1_(ctx, to_sequence(x)));
    nn::record_sequence(ctx, "fc1", h);
    if (ctx.training) h = nn::dropout(h, cfg_.dropout, ctx.next_seed());
    h = nn::relu(fc2_(ctx, h));
    nn::record_sequence(ctx, "fc2", h);
    return nn::temporal_pool(h);
  }

  std::vector<std::string> layer_names() const override { return {"conv1", "conv2", "conv3", "fc1", "fc2"}; }

 private:
  std::array<Conv2d, 3> convs_;
  std::array<BatchNorm, 3> bns_;
  Linear fc1_, fc2_;
};

struct BasicBlock {
  Conv2d conv1, conv2, down;
  BatchNorm bn1, bn2, down_bn;
  bool has_down = false;

  BasicBlock(nn::ParameterStore& s, const std::string& name, Index in, Index out, Index stride, Rng& rng) {
    conv1 = Conv2d(s, name + ".conv1", in, out, 3, 3, {stride, stride, 1, 1, 1}, rng, false);
    bn1 = BatchNorm(s, name + ".bn1", out);
    conv2 = Conv2d(s, name + ".conv2", out, out, 3, 3, {1, 1, 1, 1, 1}, rng, false);
    bn2 = BatchNorm(s, name + ".bn2", out);
    if (stride != 1 || in != out) {
      has_down = true;
      down = Conv2d(s, name + ".downsample", in, out, 1, 1, {stride, stride, 0, 0, 1}, rng, false);
      down_bn = BatchNorm(s, name + ".downsample.bn", out);
    }
  }

  Var operator()(ForwardContext& ctx, Var x) const {
    Var h = nn::relu(bn1(ctx, conv1(ctx, x)));
    h = bn2(ctx, conv2(ctx, h));
    const Var skip = has_down ? down_bn(ctx, down(ctx, x)) : x;
    return nn::relu(nn::add(h, skip));
  }
};

// 34-layer residual network (3-4-6-3 basic blocks) with a single-channel stem.
class Resnetish34 final : public Encoder {
 public:
  explicit Resnetish34(const EncoderConfig& cfg) : Encoder(cfg) {
    Rng rng(cfg.seed);
    const Index base = scaled(64, cfg.width_multiplier);
    stem_ = Conv2d(store_, "stem.conv", 1, base, 7, 7, {2, 2, 3, 3, 1}, rng, false);
    stem_bn_ = BatchNorm(store_, "stem.bn", base);
    const std::array<int, 4> depth{3, 4, 6, 3};
    Index in = base;
    for (int s = 0; s < 4; ++s) {
      const Index out = base << s;
      for (int b = 0; b < depth[static_cast<std::size_t>(s)]; ++b) {
        const Index stride = (s > 0 && b == 0) ? 2 : 1;
        stages_[static_cast<std::size_t>(s)].emplace_back(
            store_, "layer" + std::to_string(s + 1) + "." + std::to_string(b), in, out, stride, rng);
        in = out;
      }
    }
    fc_ = Linear(store_, "fc", in, cfg.embedding_dim(), rng);
  }

  Var forward(ForwardContext& ctx, Var x) const override {
    x = nn::relu(stem_bn_(ctx, stem_(ctx, x)));
    x = nn::max_pool2d(x, PoolOptions{3, 3, 2, 2, 1, 1});
    nn::record_map(ctx, "stem", x);
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (const auto& block : stages_[s]) x = block(ctx, x);
      nn::record_map(ctx, "layer" + std::to_string(s + 1), x);
    }
    // Average the remaining frequency bins, then pool over time.
    const Var seq = nn::permute(nn::mean_axis(x, 2), {0, 2, 1});
    const Var out = fc_(ctx, nn::temporal_pool(seq));
    nn::record_vector(ctx, "fc", out);
    return out;
  }

  std::vector<std::string> layer_names() const override {
    return {"stem", "layer1", "layer2", "layer3", "layer4", "fc"};
  }

 private:
  Conv2d stem_;
  BatchNorm stem_bn_;
  std::array<std::vector<BasicBlock>, 4> stages_;
  Linear fc_;
};

// Conv 9x9 -> pool(3,1) -> conv 4x3 -> BiLSTM -> linear -> temporal mean + max.
class Clstm final : public Encoder {
 public:
  explicit Clstm(const EncoderConfig& cfg) : Encoder(cfg) {
    Rng rng(cfg.seed);
    const Index ch = scaled(256, cfg.width_multiplier);
    const Index hidden = scaled(512, cfg.width_multiplier);
    conv1_ = Conv2d(store_, "conv1", 1, ch, 9, 9, {1, 1, 0, 4, 1}, rng);
    bn1_ = BatchNorm(store_, "conv1.bn", ch);
    conv2_ = Conv2d(store_, "conv2", ch, ch, 4, 3, {1, 1, 0, 1, 1}, rng);
    bn2_ = BatchNorm(store_, "conv2.bn", ch);
    const Index freq = (audio::kMelBands - 8) / 3 - 3;  // 15
    forward_ = Lstm(store_, "bilstm.forward", ch * freq, hidden, false, rng);
    backward_ = Lstm(store_, "bilstm.backward", ch * freq, hidden, true, rng);
    fc_ = Linear(store_, "fc", 2 * hidden, cfg.embedding_dim(), rng);
  }

  Var forward(ForwardContext& ctx, Var x) const override {
    x = nn::relu(bn1_(ctx, conv1_(ctx, x)));
    x = nn::max_pool2d(x, PoolOptions{3, 1, 3, 1, 0, 0});
    nn::record_map(ctx, "conv1", x);
    x = nn::relu(bn2_(ctx, conv2_(ctx, x)));
    nn::record_map(ctx, "conv2", x);
    const Var seq = to_sequence(x);
    const Var h = nn::concat({forward_(ctx, seq), backward_(ctx, seq)}, 2);
    nn::record_sequence(ctx, "bilstm", h);
    const Var out = fc_(ctx, h);
    nn::record_sequence(ctx, "fc", out);
    return nn::temporal_pool(out);
  }

  std::vector<std::string> layer_names() const override { return {"conv1", "conv2", "bilstm", "fc"}; }

 private:
  Conv2d conv1_, conv2_;
  BatchNorm bn1_, bn2_;
  Lstm forward_, backward_;
  Linear fc_;
};

// One CvT stage: convolutional token embedding followed by a single transformer
// block whose q/k/v come from depthwise-convolution projections.
struct CvtStage {
  Conv2d embed;
  LayerNorm embed_norm, norm1, norm2;
  std::array<Conv2d, 3> dw;
  std::array<BatchNorm, 3> dw_bn;
  std::array<Linear, 3> qkv;
  Linear out, mlp1, mlp2;
  Index dim = 0, heads = 1;

  CvtStage(nn::ParameterStore& s, const std::string& name, Index in, Index width, Index n_heads, Index kernel,
           Index stride, Index pad, Rng& rng)
      : dim(width), heads(n_heads) {
    embed = Conv2d(s, name + ".embed", in, width, kernel, kernel, {stride, stride, pad, pad, 1}, rng);
    embed_norm = LayerNorm(s, name + ".embed_norm", width);
    norm1 = LayerNorm(s, name + ".norm1", width);
    const char* tags[3] = {"q", "k", "v"};
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string p = name + ".attn." + tags[i];
      dw[i] = Conv2d(s, p + ".dwconv", width, width, 3, 3, {1, 1, 1, 1, width}, rng, false);
      dw_bn[i] = BatchNorm(s, p + ".bn", width);
      qkv[i] = Linear(s, p + ".proj", width, width, rng, false);
    }
    out = Linear(s, name + ".attn.out", width, width, rng);
    norm2 = LayerNorm(s, name + ".norm2", width);
    mlp1 = Linear(s, name + ".mlp.fc1", width, 4 * width, rng);
    mlp2 = Linear(s, name + ".mlp.fc2", 4 * width, width, rng);
  }

  // tokens [N, L, d] <-> map [N, d, F, T]
  static Var to_tokens(Var m) {
    const Index n = m.dim(0), d = m.dim(1), f = m.dim(2), t = m.dim(3);
    return nn::reshape(nn::permute(nn::reshape(m, {n, d, f * t}), {0, 2, 1}), {n, f * t, d});
  }
  static Var to_map(Var tokens, Index f, Index t) {
    const Index n = tokens.dim(0), d = tokens.dim(2);
    return nn::reshape(nn::permute(tokens, {0, 2, 1}), {n, d, f, t});
  }

  Var attention(ForwardContext& ctx, Var tokens, Index f, Index t) const {
    const Index n = tokens.dim(0), len = tokens.dim(1);
    const Index head_dim = dim / heads;
    const Var map = to_map(tokens, f, t);
    std::array<Var, 3> proj;
    for (std::size_t i = 0; i < 3; ++i) {
      const Var h = qkv[i](ctx, to_tokens(dw_bn[i](ctx, dw[i](ctx, map))));
      // [N, L, heads, hd] -> [N * heads, L, hd]
      proj[i] = nn::reshape(nn::permute(nn::reshape(h, {n, len, heads, head_dim}), {0, 2, 1, 3}), {n * heads, len, head_dim});
    }
    const Var scores = nn::scale(nn::batched_matmul(proj[0], proj[1], true), 1.0 / std::sqrt(static_cast<double>(head_dim)));
    const Var mixed = nn::batched_matmul(nn::softmax(scores), proj[2]);
    const Var merged = nn::reshape(nn::permute(nn::reshape(mixed, {n, heads, len, head_dim}), {0, 2, 1, 3}), {n, len, dim});
    return out(ctx, merged);
  }

  Var operator()(ForwardContext& ctx, Var x) const {
    const Var m = embed(ctx, x);
    const Index f = m.dim(2), t = m.dim(3);
    Var tokens = embed_norm(ctx, to_tokens(m));
    tokens = nn::add(tokens, attention(ctx, norm1(ctx, tokens), f, t));
    tokens = nn::add(tokens, mlp2(ctx, nn::gelu(mlp1(ctx, norm2(ctx, tokens)))));
    return to_map(tokens, f, t);
  }
};

class CvtLite final : public Encoder {
 public:
  explicit CvtLite(const EncoderConfig& cfg) : Encoder(cfg) {
    Rng rng(cfg.seed);
    Index in = 1;
    const std::array<Index, 3> kernel{7, 3, 3}, stride{4, 2, 2}, pad{2, 1, 1};
    for (std::size_t s = 0; s < 3; ++s) {
      const Index width = scaled(kCvtWidths[s], cfg.width_multiplier);
      const Index heads = std::min(kCvtHeads[s], width);
      require(width % heads == 0, "CvT width must be divisible by its head count", ErrorCode::kConfig);
      stages_.emplace_back(store_, "stage" + std::to_string(s + 1), in, width, heads, kernel[s], stride[s], pad[s], rng);
      in = width;
    }
  }

  Var forward(ForwardContext& ctx, Var x) const override {
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      x = stages_[s](ctx, x);
      nn::record_map(ctx, "stage" + std::to_string(s + 1), x);
    }
    return nn::temporal_pool(to_sequence(x));
  }

  std::vector<std::string> layer_names() const override { return {"stage1", "stage2", "stage3"}; }
  const std::vector<CvtStage>& stages() const { return stages_; }

 private:
  std::vector<CvtStage> stages_;
};

}  // namespace

std::unique_ptr<Encoder> make_encoder(const EncoderConfig& cfg) {
  cfg.validate();
  switch (cfg.arch) {
    case Arch::kDefaultCnn: return std::make_unique<DefaultCnn>(cfg);
    case Arch::kResnetish34: return std::make_unique<Resnetish34>(cfg);
    case Arch::kClstm: return std::make_unique<Clstm>(cfg);
    case Arch::kCvtLite: return std::make_unique<CvtLite>(cfg);
  }
  fail(ErrorCode::kConfig, "unknown encoder architecture");
}

Index count_parameters(const EncoderConfig& cfg) { return make_encoder(cfg)->store().parameter_count(); }

Tensor batch_tensor(std::span<const audio::LogMelSpectrogram> batch) {
  require(!batch.empty(), "empty batch");
  const Index mels = batch.front().n_mels();
  const Index t = batch.front().frames();
  Tensor out({static_cast<Index>(batch.size()), 1, mels, t});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    require(batch[i].n_mels() == mels && batch[i].frames() == t, "batch spectrograms differ in shape");
    nn::MatrixMap(out.ptr() + static_cast<Index>(i) * mels * t, mels, t) = batch[i].values;
  }
  return out;
}

Eigen::VectorXd encode(const Encoder& enc, const audio::LogMelSpectrogram& lms, nn::ActivationRecorder* recorder) {
  require(lms.n_mels() == audio::kMelBands, "encoder expects 64 mel bins");
  require(lms.frames() >= Encoder::kMinFrames, "input too short for encoder");
  nn::Graph g;
  ForwardContext ctx{g, false, false, 0, recorder};
  const Var x = g.constant(batch_tensor(std::span(&lms, 1)));
  const Var y = enc.forward(ctx, x);
  return y.value().data;
}

}  // namespace byols::encoders
