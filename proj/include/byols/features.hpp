#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "byols/audio.hpp"

namespace byols::features {

inline constexpr int kMfccCount = 13;
inline constexpr int kMfccBands = 26;
inline constexpr int kBaseLlds = 20;
inline constexpr int kLldRows = 2 * kBaseLlds;
inline constexpr int kFunctionals = 12;
inline constexpr int kFeatureDim = kLldRows * kFunctionals;  // 480

inline constexpr double kF0MinHz = 60.0;
inline constexpr double kF0MaxHz = 500.0;
inline constexpr double kVoicingThreshold = 0.45;
inline constexpr double kRolloffFraction = 0.85;

struct LldFrameMatrix {
  Eigen::MatrixXd values;  // n_lld x T
  std::vector<std::string> lld_names;
};

struct HandcraftedFeatureVector {
  Eigen::VectorXd values;
  std::vector<std::string> feature_names;
};

/// Canonical LLD order: mfcc1..mfcc13, log_energy, zcr, f0, voicing, spectral_centroid,
/// spectral_flux, spectral_rolloff, then "<name>_de" deltas in the same order.
const std::vector<std::string>& lld_names();
/// mean, std, min, max, range, skewness, kurtosis, p25, p50, p75, slope, offset.
const std::vector<std::string>& functional_names();
/// "<lld>__<functional>" for every LLD row, functionals innermost.
const std::vector<std::string>& feature_names();

/// Normalized-autocorrelation pitch of one frame. Returns {f0_hz, voicing}; f0 is 0 when unvoiced.
std::pair<double, double> estimate_f0(std::span<const double> frame, int sample_rate);

/// Frame-level descriptors over unpadded 25 ms / 10 ms frames. Needs at least 3 frames.
LldFrameMatrix extract_llds(const audio::AudioClip& clip);

/// HTK-style regression deltas (window 2, edge frames replicated), row-wise.
Eigen::MatrixXd deltas(const Eigen::MatrixXd& x);

/// The 12 functionals of one trajectory, in canonical order.
Eigen::Matrix<double, kFunctionals, 1> functionals(const Eigen::Ref<const Eigen::VectorXd>& row);

HandcraftedFeatureVector apply_functionals(const LldFrameMatrix& llds);

inline HandcraftedFeatureVector extract(const audio::AudioClip& clip) { return apply_functionals(extract_llds(clip)); }

class FeatureStandardizer {
 public:
  FeatureStandardizer() = default;
  FeatureStandardizer(Eigen::VectorXd mean, Eigen::VectorXd std);

  static FeatureStandardizer fit(std::span<const HandcraftedFeatureVector> corpus);

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& std() const { return std_; }
  Eigen::Index dim() const { return mean_.size(); }

 private:
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
};

// "HCF1" blob: magic, u32 D, then D little-endian f32.
std::vector<std::uint8_t> encode_hcf(const HandcraftedFeatureVector& v);
HandcraftedFeatureVector decode_hcf(std::span<const std::uint8_t> bytes);
std::string to_csv(std::span<const HandcraftedFeatureVector> rows, std::span<const std::string> ids);

}  // namespace byols::features
