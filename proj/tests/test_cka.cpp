#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "byols/cka.hpp"
#include "byols/error.hpp"

using namespace byols;
using namespace byols::cka;
using Eigen::Index;

namespace {

Eigen::MatrixXd gaussian(Index n, Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd m(n, d);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Eigen::MatrixXd random_orthogonal(Index d, std::uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(d, d, seed));
  return qr.householderQ() * Eigen::MatrixXd::Identity(d, d);
}

// Textbook formula with explicit centring matrices.
double naive_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  const Index n = x.rows();
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd kx = h * (x * x.transpose()) * h, ky = h * (y * y.transpose()) * h;
  const auto inner = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a.array() * b.array()).sum(); };
  return inner(kx, ky) / std::sqrt(inner(kx, kx) * inner(ky, ky));
}

std::vector<audio::LogMelSpectrogram> probe_set(std::size_t n) {
  std::vector<audio::LogMelSpectrogram> out;
  for (std::size_t i = 0; i < n; ++i) {
    audio::LogMelSpectrogram l;
    l.values = gaussian(64, 24, 100 + i);
    out.push_back(l);
  }
  return out;
}

}  // namespace

TEST(Cka, SelfSimilarityIsOne) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Eigen::MatrixXd x = gaussian(40, 10 + 5 * static_cast<Index>(s), s);
    EXPECT_NEAR(linear_cka(x, x), 1.0, 1e-9);
  }
}

TEST(Cka, InvariantToOrthogonalMapsAndIsotropicScale) {
  const Eigen::MatrixXd x = gaussian(50, 12, 1), y = gaussian(50, 8, 2) + 0.5 * x.leftCols(8);
  const double base = linear_cka(x, y);
  EXPECT_NEAR(linear_cka(x * random_orthogonal(12, 3), y), base, 1e-9);
  EXPECT_NEAR(linear_cka(x, y * random_orthogonal(8, 4)), base, 1e-9);
  EXPECT_NEAR(linear_cka(3.7 * x, y), base, 1e-9);
  EXPECT_NEAR(linear_cka(x, 1e-3 * y), base, 1e-9);
  // Adding a constant row offset is removed by centring.
  EXPECT_NEAR(linear_cka(x.rowwise() + Eigen::RowVectorXd::Constant(12, 5.0), y), base, 1e-9);
}

TEST(Cka, SymmetricAndMatchesNaiveFormula) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Eigen::MatrixXd x = gaussian(30, 7, 10 + s), y = gaussian(30, 11, 20 + s) + 0.3 * gaussian(30, 11, 10 + s);
    EXPECT_NEAR(linear_cka(x, y), linear_cka(y, x), 1e-12);
    EXPECT_NEAR(linear_cka(x, y), naive_cka(x, y), 1e-12);
    const double v = linear_cka(x, y);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
}

TEST(Cka, CenteredGramAndHsic) {
  const Eigen::MatrixXd x = gaussian(9, 4, 5), y = gaussian(9, 6, 6);
  const Index n = 9;
  const Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  const Eigen::MatrixXd kx = centered_gram(x);
  EXPECT_LT((kx - h * x * x.transpose() * h).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(kx.rowwise().sum().cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::MatrixXd ky = centered_gram(y);
  EXPECT_NEAR(hsic(kx, ky), (kx.array() * ky.array()).sum(), 1e-10);
  EXPECT_THROW(hsic(kx, centered_gram(gaussian(8, 6, 7))), Error);
}

TEST(Cka, IndependentDataFallsBelowPermutationNull) {
  const Eigen::MatrixXd x = gaussian(100, 50, 31), y = gaussian(100, 50, 32);
  const double observed = linear_cka(x, y);
  std::mt19937_64 rng(33);
  std::vector<Index> perm(100);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::vector<double> null;
  for (int k = 0; k < 500; ++k) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::MatrixXd yp(100, 50);
    for (Index i = 0; i < 100; ++i) yp.row(i) = y.row(perm[static_cast<std::size_t>(i)]);
    null.push_back(linear_cka(x, yp));
  }
  std::sort(null.begin(), null.end());
  const double q99 = null[static_cast<std::size_t>(0.99 * (null.size() - 1))];
  EXPECT_LT(observed, q99);
  // Dependent data lands far outside the null.
  EXPECT_GT(linear_cka(x, x.leftCols(20) + 0.1 * y.leftCols(20)), null.back());
}

TEST(Cka, DegenerateInputs) {
  const Eigen::MatrixXd x = gaussian(10, 3, 1);
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(10, 3, 2.0);
  EXPECT_THROW(linear_cka(x, flat), Error);
  EXPECT_THROW(linear_cka(x, gaussian(9, 3, 2)), Error);
  EXPECT_THROW(linear_cka(gaussian(1, 3, 3), gaussian(1, 3, 4)), Error);
  Eigen::MatrixXd bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(linear_cka(bad, x), Error);
}

TEST(Cka, ModelSimilarity) {
  encoders::EncoderConfig ca;
  ca.arch = encoders::Arch::kCvtLite;
  ca.seed = 1;
  encoders::EncoderConfig cb = ca;
  cb.arch = encoders::Arch::kDefaultCnn;
  const auto a = encoders::make_encoder(ca);
  const auto b = encoders::make_encoder(cb);
  const auto probe = probe_set(kMinProbeClips);

  const auto self = model_similarity(*a, *a, probe);
  EXPECT_EQ(self.layers_a, a->layer_names());
  for (Index i = 0; i < self.values.rows(); ++i) EXPECT_NEAR(self.values(i, i), 1.0, 1e-9);
  EXPECT_LT((self.values - self.values.transpose()).cwiseAbs().maxCoeff(), 1e-12);

  const auto cross = model_similarity(*a, *b, probe);
  EXPECT_EQ(cross.values.rows(), 3);
  EXPECT_EQ(cross.values.cols(), 5);
  EXPECT_EQ(cross.layers_b, b->layer_names());
  EXPECT_TRUE((cross.values.array() >= 0).all() && (cross.values.array() <= 1 + 1e-12).all());
  const auto acts = layer_activations(*b, probe);
  EXPECT_NEAR(cross.values(0, 4), linear_cka(layer_activations(*a, probe)[0].values, acts[4].values), 1e-12);

  const auto few = probe_set(kMinProbeClips - 1);
  EXPECT_THROW(model_similarity(*a, *b, few), Error);
}
