#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <utility>

#include "byols/audio.hpp"

namespace byols::augment {

using Rng = std::mt19937_64;
using audio::LogMelSpectrogram;
using audio::NormalizationStats;

struct AugmentationConfig {
  double mixup_alpha = 0.4;
  std::size_t memory_capacity = 2048;
  std::pair<double, double> freq_scale_range{0.6, 1.5};
  std::pair<double, double> time_scale_range{0.6, 1.5};
  double canvas_scale = 1.5;
  Eigen::Index segment_frames = 96;
  std::uint64_t seed = 42;

  void validate() const;
};

/// Pre-training window (seconds) to segment length in frames: 1 + floor(samples / hop), so 0.95 s -> 96.
Eigen::Index segment_frames_for_window(double window_s);

/// FIFO of past segments used as mixup background.
class MixupMemoryBank {
 public:
  explicit MixupMemoryBank(std::size_t capacity) : capacity_(capacity) {}

  void push(const Eigen::MatrixXd& segment);
  const Eigen::MatrixXd& at(std::size_t i) const { return entries_.at(i); }
  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::size_t capacity_;
  std::deque<Eigen::MatrixXd> entries_;
};

struct ViewPair {
  LogMelSpectrogram view_a;
  LogMelSpectrogram view_b;
};

/// Crop window in canvas coordinates. The canvas is the input embedded at the
/// centre of a zero field canvas_scale times larger in both axes.
struct CropRect {
  double top = 0;     // mel-axis offset in canvas
  double left = 0;    // time-axis offset in canvas
  double height = 0;  // mel bins
  double width = 0;   // frames
};

LogMelSpectrogram crop_segment(const LogMelSpectrogram& lms, Eigen::Index segment_frames, Rng& rng);

/// Deterministic slice [start, start + segment_frames), tiling cyclically when short.
LogMelSpectrogram crop_at(const LogMelSpectrogram& lms, Eigen::Index start, Eigen::Index segment_frames);

/// log((1 - lambda) exp(seg) + lambda exp(background)), elementwise.
Eigen::MatrixXd log_mixup(const Eigen::MatrixXd& seg, const Eigen::MatrixXd& background, double lambda);

/// Draws lambda ~ U(0, alpha) and a random bank entry, mixes, then pushes seg.
LogMelSpectrogram mixup(const LogMelSpectrogram& seg, MixupMemoryBank& bank, double alpha, Rng& rng);

/// Bilinear resample of the crop back to the input shape.
LogMelSpectrogram resize_crop(const LogMelSpectrogram& seg, const CropRect& rect, double canvas_scale);

LogMelSpectrogram random_resize_crop(const LogMelSpectrogram& seg, const AugmentationConfig& cfg, Rng& rng);

/// Standardize with the spectrogram's own mean and std.
LogMelSpectrogram self_standardize(const LogMelSpectrogram& lms);

ViewPair make_view_pair(const LogMelSpectrogram& lms, const NormalizationStats& stats, const AugmentationConfig& cfg,
                        MixupMemoryBank& bank, Rng& rng);

}  // namespace byols::augment
