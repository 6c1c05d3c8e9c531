#include <gtest/gtest.h>

#include <set>

#include "byols/error.hpp"
#include "byols/features.hpp"
#include "support.hpp"

using namespace byols;
using namespace byols::features;

namespace {

double np_percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] * (1 - (pos - lo)) + v[lo + 1] * (pos - lo);
}

}  // namespace

TEST(Features, NamesAndDimension) {
  EXPECT_EQ(lld_names().size(), 40u);
  EXPECT_EQ(functional_names().size(), 12u);
  const auto& names = feature_names();
  ASSERT_EQ(names.size(), 480u);
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), 480u);
  EXPECT_EQ(names.front(), "mfcc1__mean");
  EXPECT_EQ(lld_names()[20], "mfcc1_de");
}

TEST(Features, FunctionalsMatchDefinitions) {
  std::mt19937_64 rng(4);
  std::gamma_distribution<double> g(2.0, 1.5);
  for (int trial = 0; trial < 30; ++trial) {
    const int t = 5 + trial * 3;
    Eigen::VectorXd x(t);
    for (auto& v : x) v = g(rng) + 0.05 * (&v - x.data());
    const auto f = functionals(x);

    const double mean = x.sum() / t;
    double m2 = 0, m3 = 0, m4 = 0;
    for (double v : x) {
      m2 += std::pow(v - mean, 2) / t;
      m3 += std::pow(v - mean, 3) / t;
      m4 += std::pow(v - mean, 4) / t;
    }
    // Least squares line over frame index, solved as a 2x2 system.
    Eigen::MatrixXd a(t, 2);
    for (int i = 0; i < t; ++i) a.row(i) << 1.0, i;
    const Eigen::Vector2d line = (a.transpose() * a).ldlt().solve(a.transpose() * x);
    std::vector<double> v(x.data(), x.data() + t);

    EXPECT_NEAR(f(0), mean, 1e-12);
    EXPECT_NEAR(f(1), std::sqrt(m2), 1e-12);
    EXPECT_EQ(f(2), x.minCoeff());
    EXPECT_EQ(f(3), x.maxCoeff());
    EXPECT_NEAR(f(4), x.maxCoeff() - x.minCoeff(), 1e-12);
    EXPECT_NEAR(f(5), m3 / std::pow(m2, 1.5), 1e-10);
    EXPECT_NEAR(f(6), m4 / (m2 * m2), 1e-10);
    EXPECT_NEAR(f(7), np_percentile(v, 0.25), 1e-12);
    EXPECT_NEAR(f(8), np_percentile(v, 0.50), 1e-12);
    EXPECT_NEAR(f(9), np_percentile(v, 0.75), 1e-12);
    EXPECT_NEAR(f(10), line(1), 1e-10);
    EXPECT_NEAR(f(11), line(0), 1e-10);
  }
}

TEST(Features, FunctionalsOfAConstantRow) {
  const auto f = functionals(Eigen::VectorXd::Constant(9, 3.5));
  EXPECT_EQ(f(0), 3.5);
  EXPECT_EQ(f(1), 0.0);
  EXPECT_EQ(f(5), 0.0);
  EXPECT_EQ(f(6), 0.0);
  EXPECT_EQ(f(10), 0.0);
  EXPECT_EQ(f(11), 3.5);
}

TEST(Features, DeltasMatchRegressionFormula) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Eigen::MatrixXd x(3, 12);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const Eigen::MatrixXd d = deltas(x);
  const auto at = [&](Eigen::Index r, Eigen::Index j) { return x(r, std::clamp<Eigen::Index>(j, 0, 11)); };
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index j = 0; j < 12; ++j) {
      double num = 0;
      for (int k = 1; k <= 2; ++k) num += k * (at(r, j + k) - at(r, j - k));
      EXPECT_NEAR(d(r, j), num / 10.0, 1e-12);
    }
  }
  // A linear ramp has unit delta away from the edges.
  Eigen::MatrixXd ramp(1, 10);
  for (int j = 0; j < 10; ++j) ramp(0, j) = j;
  EXPECT_NEAR(deltas(ramp)(0, 5), 1.0, 1e-12);
}

TEST(Features, PitchOfAToneAndOfNoise) {
  for (double hz : {110.0, 200.0, 320.0}) {
    const auto c = byols::testing::tone(hz, 0.05);
    std::vector<double> frame(c.samples.begin(), c.samples.begin() + 400);
    const auto [f0, voicing] = estimate_f0(frame, 16000);
    EXPECT_NEAR(f0, hz, hz * 0.02) << hz;
    EXPECT_GT(voicing, kVoicingThreshold);
  }
  const auto nz = byols::testing::noise(0.05, 3);
  std::vector<double> frame(nz.samples.begin(), nz.samples.begin() + 400);
  EXPECT_EQ(estimate_f0(frame, 16000).first, 0.0);
}

TEST(Features, LldRowsOfATone) {
  const auto llds = extract_llds(byols::testing::tone(1000.0, 0.5));
  ASSERT_EQ(llds.values.rows(), 40);
  EXPECT_EQ(llds.values.cols(), 1 + (8000 - 400) / 160);
  const auto row = [&](const std::string& name) {
    const auto it = std::find(llds.lld_names.begin(), llds.lld_names.end(), name);
    return llds.values.row(it - llds.lld_names.begin());
  };
  // A steady 1 kHz sine: centroid at 1 kHz, ZCR of 2000 crossings per second.
  EXPECT_NEAR(row("spectral_centroid").mean(), 1000.0, 30.0);
  EXPECT_NEAR(row("zcr").mean(), 2000.0 / 16000.0, 0.01);
  EXPECT_LT(row("spectral_flux").tail(10).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Features, ExtractIsFiniteAndRejectsShortClips) {
  const auto v = extract(byols::testing::noise(0.4, 8));
  EXPECT_EQ(v.values.size(), kFeatureDim);
  EXPECT_TRUE(v.values.allFinite());
  audio::AudioClip tiny;
  tiny.samples.assign(500, 0.1);
  EXPECT_THROW(extract(tiny), Error);
  audio::AudioClip silent;
  silent.samples.assign(8000, 0.0);
  EXPECT_TRUE(extract(silent).values.allFinite());
}

TEST(Features, StandardizerZeroMeanUnitStd) {
  std::vector<HandcraftedFeatureVector> rows;
  for (int i = 0; i < 6; ++i) rows.push_back(extract(byols::testing::tone(150.0 + 40 * i, 0.3)));
  const auto st = FeatureStandardizer::fit(rows);
  Eigen::MatrixXd z(6, kFeatureDim);
  for (int i = 0; i < 6; ++i) z.row(i) = st.apply(rows[static_cast<std::size_t>(i)].values).transpose();
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    // Rounding in the raw mean is amplified by 1/std.
    EXPECT_LT(std::abs(z.col(j).mean()), 1e-12 * (1.0 + std::abs(st.mean()(j))) / st.std()(j));
    const double sd = std::sqrt((z.col(j).array() - z.col(j).mean()).square().mean());
    // Features with std under the 1e-8 floor are shrunk rather than blown up.
    if (st.std()(j) > 1e-8) {
      EXPECT_NEAR(sd, 1.0, 1e-9) << feature_names()[static_cast<std::size_t>(j)];
    } else {
      EXPECT_LE(sd, 1.0) << feature_names()[static_cast<std::size_t>(j)];
    }
  }
}

TEST(Features, HcfRoundTripAndCsv) {
  const auto v = extract(byols::testing::noise(0.3, 2));
  const auto bytes = encode_hcf(v);
  EXPECT_EQ(bytes.size(), 8u + 4u * kFeatureDim);
  const auto back = decode_hcf(bytes);
  EXPECT_EQ(back.values, v.values.cast<float>().cast<double>());
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_hcf(bad), Error);

  const std::vector<HandcraftedFeatureVector> rows{v};
  const std::vector<std::string> ids{"clip"};
  const std::string csv = to_csv(rows, ids);
  EXPECT_EQ(csv.substr(0, 17), "id,mfcc1__mean,mf");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}
