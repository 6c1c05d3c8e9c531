#include "byols/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::features {

namespace {

constexpr int kFrameLen = audio::kWindowSamples;
constexpr int kHop = audio::kHopSamples;
constexpr int kNfft = audio::kFftSize;
constexpr double kFloor = 1e-10;

std::vector<std::string> make_lld_names() {
  std::vector<std::string> base;
  for (int i = 1; i <= kMfccCount; ++i) base.push_back("mfcc" + std::to_string(i));
  for (const char* n : {"log_energy", "zcr", "f0", "voicing", "spectral_centroid", "spectral_flux", "spectral_rolloff"}) {
    base.emplace_back(n);
  }
  std::vector<std::string> all = base;
  for (const auto& n : base) all.push_back(n + "_de");
  return all;
}

Eigen::MatrixXd dct_matrix(int n_out, int n_in) {
  Eigen::MatrixXd d(n_out, n_in);
  for (int k = 0; k < n_out; ++k) {
    const double s = k == 0 ? std::sqrt(1.0 / n_in) : std::sqrt(2.0 / n_in);
    for (int n = 0; n < n_in; ++n) d(k, n) = s * std::cos(std::numbers::pi * k * (n + 0.5) / n_in);
  }
  return d;
}

double percentile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

const std::vector<std::string>& lld_names() {
  static const std::vector<std::string> names = make_lld_names();
  return names;
}

const std::vector<std::string>& functional_names() {
  static const std::vector<std::string> names = {"mean", "std", "min", "max", "range", "skewness",
                                                 "kurtosis", "p25", "p50", "p75", "slope", "offset"};
  return names;
}

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& l : lld_names()) {
      for (const auto& f : functional_names()) out.push_back(l + "__" + f);
    }
    return out;
  }();
  return names;
}

std::pair<double, double> estimate_f0(std::span<const double> frame, int sample_rate) {
  const auto n = static_cast<int>(frame.size());
  const int min_lag = static_cast<int>(std::ceil(sample_rate / kF0MaxHz));
  const int max_lag = std::min(n - 2, static_cast<int>(std::floor(sample_rate / kF0MinHz)));
  if (max_lag <= min_lag) return {0.0, 0.0};

  double mean = 0.0;
  for (double v : frame) mean += v;
  mean /= n;
  std::vector<double> x(frame.begin(), frame.end());
  for (double& v : x) v -= mean;

  // r(lag) for lag in [min_lag - 1, max_lag + 1] so the peak can be interpolated.
  const int lo = min_lag - 1;
  const int hi = max_lag + 1;
  std::vector<double> r(static_cast<std::size_t>(hi - lo + 1), 0.0);
  for (int lag = lo; lag <= hi; ++lag) {
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (int i = 0; i + lag < n; ++i) {
      xy += x[i] * x[i + lag];
      xx += x[i] * x[i];
      yy += x[i + lag] * x[i + lag];
    }
    const double den = std::sqrt(xx * yy);
    r[static_cast<std::size_t>(lag - lo)] = den > 0.0 ? xy / den : 0.0;
  }
  const auto at = [&](int lag) { return r[static_cast<std::size_t>(lag - lo)]; };

  double best = -1.0;
  for (int lag = min_lag; lag <= max_lag; ++lag) best = std::max(best, at(lag));
  if (best < kVoicingThreshold) return {0.0, std::max(0.0, best)};

  // Shortest-period local maximum close to the global peak avoids octave errors.
  int pick = -1;
  for (int lag = min_lag; lag <= max_lag; ++lag) {
    if (at(lag) >= at(lag - 1) && at(lag) >= at(lag + 1) && at(lag) >= 0.9 * best) {
      pick = lag;
      break;
    }
  }
  if (pick < 0) return {0.0, best};
  const double a = at(pick - 1), b = at(pick), c = at(pick + 1);
  const double den = a - 2.0 * b + c;
  const double shift = den != 0.0 ? std::clamp(0.5 * (a - c) / den, -0.5, 0.5) : 0.0;
  return {sample_rate / (pick + shift), std::min(1.0, b)};
}

Eigen::MatrixXd deltas(const Eigen::MatrixXd& x) {
  const Eigen::Index t = x.cols();
  Eigen::MatrixXd d(x.rows(), t);
  const auto col = [&](Eigen::Index j) { return x.col(std::clamp<Eigen::Index>(j, 0, t - 1)); };
  for (Eigen::Index j = 0; j < t; ++j) {
    d.col(j) = ((col(j + 1) - col(j - 1)) + 2.0 * (col(j + 2) - col(j - 2))) / 10.0;
  }
  return d;
}

LldFrameMatrix extract_llds(const audio::AudioClip& clip) {
  require(clip.sample_rate == audio::kModelRate, "feature extraction expects 16 kHz audio");
  require(clip.samples.size() >= static_cast<std::size_t>(kFrameLen + 2 * kHop), "clip too short for feature extraction");

  static const Eigen::MatrixXd mfcc_fb = audio::mel_filterbank(kMfccBands, kNfft, audio::kModelRate, 20.0, 8000.0);
  static const Eigen::MatrixXd dct = dct_matrix(kMfccCount, kMfccBands);
  static const Eigen::VectorXd window = audio::padded_hann(kFrameLen, kNfft);

  const auto n_frames = static_cast<Eigen::Index>(1 + (clip.samples.size() - kFrameLen) / kHop);
  const int n_bins = kNfft / 2 + 1;
  Eigen::VectorXd bin_hz(n_bins);
  for (int k = 0; k < n_bins; ++k) bin_hz(k) = static_cast<double>(k) * audio::kModelRate / kNfft;

  Eigen::MatrixXd base(kBaseLlds, n_frames);
  Eigen::VectorXd prev_mag = Eigen::VectorXd::Zero(n_bins);
  Eigen::VectorXd frame(kNfft);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const std::span<const double> raw(clip.samples.data() + t * kHop, kFrameLen);

    frame.setZero();
    const int offset = (kNfft - kFrameLen) / 2;
    for (int i = 0; i < kFrameLen; ++i) frame(offset + i) = raw[static_cast<std::size_t>(i)] * window(offset + i);
    const Eigen::VectorXd mag = audio::magnitude_spectrum(frame);
    const Eigen::VectorXd power = mag.array().square();

    const Eigen::VectorXd log_mel = ((mfcc_fb * power).array() + kFloor).log();
    base.col(t).head(kMfccCount) = dct * log_mel;

    double energy = 0.0;
    int crossings = 0;
    for (int i = 0; i < kFrameLen; ++i) {
      energy += raw[static_cast<std::size_t>(i)] * raw[static_cast<std::size_t>(i)];
      if (i > 0 && (raw[static_cast<std::size_t>(i)] >= 0.0) != (raw[static_cast<std::size_t>(i - 1)] >= 0.0)) ++crossings;
    }
    const auto [f0, voicing] = estimate_f0(raw, audio::kModelRate);
    const double total = mag.sum();
    double rolloff = 0.0;
    if (total > 0.0) {
      double cum = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        cum += mag(k);
        if (cum >= kRolloffFraction * total) {
          rolloff = bin_hz(k);
          break;
        }
      }
    }

    int row = kMfccCount;
    base(row++, t) = std::log(std::sqrt(energy / kFrameLen) + kFloor);
    base(row++, t) = static_cast<double>(crossings) / (kFrameLen - 1);
    base(row++, t) = f0;
    base(row++, t) = voicing;
    base(row++, t) = total > 0.0 ? bin_hz.dot(mag) / total : 0.0;
    base(row++, t) = t == 0 ? 0.0 : (mag - prev_mag).norm();
    base(row++, t) = rolloff;
    prev_mag = mag;
  }

  LldFrameMatrix out;
  out.values.resize(kLldRows, n_frames);
  out.values.topRows(kBaseLlds) = base;
  out.values.bottomRows(kBaseLlds) = deltas(base);
  out.lld_names = lld_names();
  return out;
}

Eigen::Matrix<double, kFunctionals, 1> functionals(const Eigen::Ref<const Eigen::VectorXd>& row) {
  const Eigen::Index t = row.size();
  const double n = static_cast<double>(t);
  const double mean = row.mean();
  const Eigen::ArrayXd dev = row.array() - mean;
  const double m2 = dev.square().mean();
  const double m3 = dev.cube().mean();
  const double m4 = dev.square().square().mean();
  const double sd = std::sqrt(m2);
  // Treat numerically constant rows as exactly constant.
  const bool flat = sd <= 1e-12 * std::max(1.0, std::abs(mean));

  std::vector<double> sorted(row.data(), row.data() + t);
  std::sort(sorted.begin(), sorted.end());

  const double i_mean = (n - 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0;
  for (Eigen::Index i = 0; i < t; ++i) {
    const double di = static_cast<double>(i) - i_mean;
    sxy += di * dev(i);
    sxx += di * di;
  }
  const double slope = (sxx > 0.0 && !flat) ? sxy / sxx : 0.0;

  Eigen::Matrix<double, kFunctionals, 1> f;
  f << mean, flat ? 0.0 : sd, sorted.front(), sorted.back(), sorted.back() - sorted.front(),
      flat ? 0.0 : m3 / (m2 * sd), flat ? 0.0 : m4 / (m2 * m2), percentile(sorted, 0.25), percentile(sorted, 0.50),
      percentile(sorted, 0.75), slope, mean - slope * i_mean;
  return f;
}

HandcraftedFeatureVector apply_functionals(const LldFrameMatrix& llds) {
  require(llds.values.cols() >= 2, "functionals need at least two frames");
  HandcraftedFeatureVector out;
  out.values.resize(llds.values.rows() * kFunctionals);
  for (Eigen::Index r = 0; r < llds.values.rows(); ++r) {
    out.values.segment<kFunctionals>(r * kFunctionals) = functionals(llds.values.row(r).transpose());
  }
  if (llds.values.rows() == kLldRows) {
    out.feature_names = feature_names();
  } else {
    for (const auto& l : llds.lld_names) {
      for (const auto& f : functional_names()) out.feature_names.push_back(l + "__" + f);
    }
  }
  return out;
}

FeatureStandardizer::FeatureStandardizer(Eigen::VectorXd mean, Eigen::VectorXd std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  require(mean_.size() == std_.size(), "standardizer mean/std length mismatch");
  require((std_.array() > 0.0).all(), "standardizer std must be positive");
}

FeatureStandardizer FeatureStandardizer::fit(std::span<const HandcraftedFeatureVector> corpus) {
  require(!corpus.empty(), "fit_standardizer: empty corpus");
  const Eigen::Index d = corpus.front().values.size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : corpus) {
    require(v.values.size() == d, "fit_standardizer: inconsistent feature length");
    mean += v.values;
  }
  mean /= static_cast<double>(corpus.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& v : corpus) var.array() += (v.values - mean).array().square();
  var /= static_cast<double>(corpus.size());
  return {mean, var.array().sqrt().max(1e-8).matrix()};
}

Eigen::VectorXd FeatureStandardizer::apply(const Eigen::VectorXd& x) const {
  require(x.size() == mean_.size(), "standardizer dimension mismatch");
  return ((x - mean_).array() / std_.array()).matrix();
}

std::vector<std::uint8_t> encode_hcf(const HandcraftedFeatureVector& v) {
  io::ByteWriter w;
  w.magic("HCF1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(v.values.size()));
  for (Eigen::Index i = 0; i < v.values.size(); ++i) w.put<float>(static_cast<float>(v.values(i)));
  return w.take();
}

HandcraftedFeatureVector decode_hcf(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("HCF1");
  const auto d = r.get<std::uint32_t>();
  if (r.remaining() != static_cast<std::size_t>(d) * 4) fail(ErrorCode::kFormat, "HCF1 payload size mismatch");
  HandcraftedFeatureVector v;
  v.values.resize(d);
  for (std::uint32_t i = 0; i < d; ++i) v.values(i) = r.get<float>();
  if (d == static_cast<std::uint32_t>(kFeatureDim)) v.feature_names = feature_names();
  return v;
}

std::string to_csv(std::span<const HandcraftedFeatureVector> rows, std::span<const std::string> ids) {
  require(rows.size() == ids.size(), "to_csv: ids and rows differ in length");
  std::ostringstream os;
  os.precision(9);
  os << "id";
  const auto& names = rows.empty() || rows.front().feature_names.empty() ? feature_names() : rows.front().feature_names;
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << ids[i];
    for (Eigen::Index j = 0; j < rows[i].values.size(); ++j) os << ',' << rows[i].values(j);
    os << '\n';
  }
  return os.str();
}

}  // namespace byols::features
