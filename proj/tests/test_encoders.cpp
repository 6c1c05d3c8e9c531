#include <gtest/gtest.h>

#include "byols/encoders.hpp"
#include "byols/error.hpp"

using namespace byols;
using namespace byols::encoders;

namespace {

const Arch kAll[] = {Arch::kDefaultCnn, Arch::kResnetish34, Arch::kClstm, Arch::kCvtLite};

audio::LogMelSpectrogram random_lms(Index frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  audio::LogMelSpectrogram l;
  l.values.resize(64, frames);
  for (Index i = 0; i < l.values.size(); ++i) l.values.data()[i] = n(rng);
  return l;
}

EncoderConfig config(Arch a, double width = 0.125, std::uint64_t seed = 3) {
  EncoderConfig c;
  c.arch = a;
  c.width_multiplier = width;
  c.seed = seed;
  return c;
}

// Three 3x3 conv+BN blocks and two linear layers, written out by hand.
Index default_cnn_count(Index ch, Index d) {
  const Index convs = (9 * ch + ch) + 2 * (9 * ch * ch + ch) + 3 * 2 * ch;
  return convs + (ch * 8 * d + d) + (d * d + d);
}

}  // namespace

TEST(Encoders, ArchNamesRoundTrip) {
  for (Arch a : kAll) EXPECT_EQ(parse_arch(arch_name(a)), a);
  EXPECT_THROW(parse_arch("transformer"), Error);
}

TEST(Encoders, DefaultCnnParameterCount) {
  const Index full = count_parameters(config(Arch::kDefaultCnn, 1.0));
  EXPECT_EQ(full, default_cnn_count(64, 2048));
  EXPECT_EQ(full, 5321856);
  EXPECT_NEAR(static_cast<double>(full), 5.3e6, 0.05 * 5.3e6);
  EXPECT_EQ(count_parameters(config(Arch::kDefaultCnn, 0.125)), default_cnn_count(8, 256));
}

TEST(Encoders, ParameterCountsAtFullWidth) {
  // Counts follow from the layer definitions; pinned so architecture changes are deliberate.
  EXPECT_EQ(count_parameters(config(Arch::kResnetish34, 1.0)), 22329024);
  EXPECT_EQ(count_parameters(config(Arch::kClstm, 1.0)), 19688192);
  EXPECT_EQ(count_parameters(config(Arch::kCvtLite, 1.0)), 5349824);
}

TEST(Encoders, EmbeddingDimensions) {
  EXPECT_EQ(config(Arch::kDefaultCnn, 1.0).embedding_dim(), 2048);
  EXPECT_EQ(config(Arch::kResnetish34, 1.0).embedding_dim(), 2048);
  EXPECT_EQ(config(Arch::kClstm, 1.0).embedding_dim(), 1024);
  EXPECT_EQ(config(Arch::kCvtLite, 1.0).embedding_dim(), 2048);
  EXPECT_EQ(config(Arch::kDefaultCnn, 0.125).embedding_dim(), 256);
  EXPECT_EQ(config(Arch::kClstm, 0.125).embedding_dim(), 128);
  EXPECT_EQ(scaled(3, 0.01), 1);
}

TEST(Encoders, CvtStageWidths) {
  const auto enc = make_encoder(config(Arch::kCvtLite, 1.0));
  nn::ActivationRecorder rec;
  encode(*enc, random_lms(40, 1), &rec);
  ASSERT_EQ(rec.layers.size(), 3u);
  // Recorded maps are channel x frequency after averaging over time.
  const Index freq[3] = {16, 8, 4};
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(rec.layers[s].first, "stage" + std::to_string(s + 1));
    EXPECT_EQ(rec.layers[s].second.cols(), kCvtWidths[s] * freq[s]);
  }
}

TEST(Encoders, OutputShapesAcrossLengths) {
  for (Arch a : kAll) {
    const auto enc = make_encoder(config(a));
    for (Index t : {Index{8}, Index{51}, Index{96}}) {
      const Eigen::VectorXd e = encode(*enc, random_lms(t, 2));
      EXPECT_EQ(e.size(), enc->embedding_dim()) << arch_name(a) << " T=" << t;
      EXPECT_TRUE(e.allFinite());
    }
  }
}

TEST(Encoders, RecorderNamesMatchLayerNames) {
  for (Arch a : kAll) {
    const auto enc = make_encoder(config(a));
    nn::ActivationRecorder rec;
    encode(*enc, random_lms(48, 3), &rec);
    std::vector<std::string> got;
    for (const auto& [name, m] : rec.layers) {
      got.push_back(name);
      EXPECT_EQ(m.rows(), 1);
    }
    EXPECT_EQ(got, enc->layer_names()) << arch_name(a);
  }
}

TEST(Encoders, DeterministicGivenSeed) {
  const auto lms = random_lms(40, 4);
  for (Arch a : kAll) {
    const auto e1 = make_encoder(config(a, 0.125, 9));
    const auto e2 = make_encoder(config(a, 0.125, 9));
    const auto e3 = make_encoder(config(a, 0.125, 10));
    EXPECT_EQ(encode(*e1, lms), encode(*e2, lms)) << arch_name(a);
    EXPECT_EQ(encode(*e1, lms), encode(*e1, lms));
    EXPECT_NE(encode(*e1, lms), encode(*e3, lms));
  }
}

TEST(Encoders, InferenceIsPerExample) {
  // Running statistics in inference mode: batching must not mix examples.
  const std::vector<audio::LogMelSpectrogram> batch{random_lms(32, 5), random_lms(32, 6)};
  for (Arch a : kAll) {
    const auto enc = make_encoder(config(a));
    nn::Graph g;
    nn::ForwardContext ctx{g, false, false};
    const Eigen::MatrixXd both = enc->forward(ctx, g.constant(batch_tensor(batch))).value().to_matrix();
    for (Index i = 0; i < 2; ++i) {
      const Eigen::VectorXd single = encode(*enc, batch[static_cast<std::size_t>(i)]);
      EXPECT_LT((both.row(i).transpose() - single).cwiseAbs().maxCoeff(), 1e-12) << arch_name(a);
    }
  }
}

TEST(Encoders, RejectsBadInput) {
  const auto enc = make_encoder(config(Arch::kDefaultCnn));
  EXPECT_THROW(encode(*enc, random_lms(Encoder::kMinFrames - 1, 1)), Error);
  audio::LogMelSpectrogram wrong;
  wrong.values = Eigen::MatrixXd::Zero(40, 30);
  EXPECT_THROW(encode(*enc, wrong), Error);
  const std::vector<audio::LogMelSpectrogram> ragged{random_lms(20, 1), random_lms(21, 2)};
  EXPECT_THROW(batch_tensor(ragged), Error);
}

TEST(Encoders, ConfigValidation) {
  EXPECT_THROW(make_encoder(config(Arch::kDefaultCnn, 0.0)), Error);
  EXPECT_THROW(make_encoder(config(Arch::kDefaultCnn, 1.5)), Error);
  auto c = config(Arch::kDefaultCnn);
  c.dropout = 1.0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Encoders, TrainingModeDropoutOnlyInDefaultCnn) {
  const auto lms = random_lms(32, 7);
  for (Arch a : kAll) {
    const auto enc = make_encoder(config(a));
    const auto run = [&](std::uint64_t seed) {
      nn::Graph g;
      nn::ForwardContext ctx{g, true, false, seed};
      ctx.update_running_stats = false;
      const std::vector<audio::LogMelSpectrogram> b{lms, random_lms(32, 8)};
      return enc->forward(ctx, g.constant(batch_tensor(b))).value().to_matrix();
    };
    if (a == Arch::kDefaultCnn) {
      EXPECT_NE(run(1), run(2));
    } else {
      EXPECT_EQ(run(1), run(2)) << arch_name(a);
    }
  }
}
