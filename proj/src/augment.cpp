#include "byols/augment.hpp"

#include <algorithm>
#include <cmath>

#include "byols/error.hpp"

namespace byols::augment {

void AugmentationConfig::validate() const {
  require(mixup_alpha >= 0.0 && mixup_alpha <= 1.0, "mixup_alpha must lie in [0, 1]");
  require(freq_scale_range.first > 0 && freq_scale_range.first <= freq_scale_range.second,
          "freq_scale_range must satisfy 0 < lo <= hi");
  require(time_scale_range.first > 0 && time_scale_range.first <= time_scale_range.second,
          "time_scale_range must satisfy 0 < lo <= hi");
  require(canvas_scale >= 1.0, "canvas_scale must be >= 1");
  require(segment_frames >= 1, "segment_frames must be >= 1");
  require(memory_capacity >= 1, "memory_capacity must be >= 1");
}

Eigen::Index segment_frames_for_window(double window_s) {
  require(window_s > 0, "window must be positive");
  // Frame count of a window-length clip: 10 ms hop plus one frame from centre padding.
  return audio::frame_count(static_cast<std::size_t>(std::llround(window_s * audio::kModelRate)));
}

void MixupMemoryBank::push(const Eigen::MatrixXd& segment) {
  if (!entries_.empty()) {
    require(segment.rows() == entries_.front().rows() && segment.cols() == entries_.front().cols(),
            "mixup bank shape mismatch");
  }
  entries_.push_back(segment);
  while (entries_.size() > capacity_) entries_.pop_front();
}

LogMelSpectrogram crop_at(const LogMelSpectrogram& lms, Eigen::Index start, Eigen::Index segment_frames) {
  require(segment_frames > 0, "segment_frames must be positive");
  require(lms.frames() >= 1, "empty spectrogram");
  LogMelSpectrogram out = lms;
  const Eigen::Index t = lms.frames();
  if (t >= segment_frames) {
    require(start >= 0 && start + segment_frames <= t, "crop start out of range");
    out.values = lms.values.middleCols(start, segment_frames);
    return out;
  }
  out.values.resize(lms.n_mels(), segment_frames);
  for (Eigen::Index j = 0; j < segment_frames; ++j) out.values.col(j) = lms.values.col((start + j) % t);
  return out;
}

LogMelSpectrogram crop_segment(const LogMelSpectrogram& lms, Eigen::Index segment_frames, Rng& rng) {
  require(segment_frames > 0, "segment_frames must be positive");
  require(lms.frames() >= 1, "empty spectrogram");
  Eigen::Index start = 0;
  if (lms.frames() > segment_frames) {
    std::uniform_int_distribution<Eigen::Index> pick(0, lms.frames() - segment_frames);
    start = pick(rng);
  }
  return crop_at(lms, start, segment_frames);
}

Eigen::MatrixXd log_mixup(const Eigen::MatrixXd& seg, const Eigen::MatrixXd& background, double lambda) {
  require(seg.rows() == background.rows() && seg.cols() == background.cols(), "mixup shape mismatch");
  if (lambda == 0.0) return seg;
  if (lambda == 1.0) return background;
  const Eigen::ArrayXXd hi = seg.array().max(background.array());
  return (hi + ((1.0 - lambda) * (seg.array() - hi).exp() + lambda * (background.array() - hi).exp()).log()).matrix();
}

LogMelSpectrogram mixup(const LogMelSpectrogram& seg, MixupMemoryBank& bank, double alpha, Rng& rng) {
  LogMelSpectrogram out = seg;
  if (!bank.empty()) {
    std::uniform_real_distribution<double> draw_lambda(0.0, alpha);
    const double lambda = alpha > 0 ? draw_lambda(rng) : 0.0;
    std::uniform_int_distribution<std::size_t> pick(0, bank.size() - 1);
    out.values = log_mixup(seg.values, bank.at(pick(rng)), lambda);
  }
  bank.push(seg.values);
  return out;
}

LogMelSpectrogram resize_crop(const LogMelSpectrogram& seg, const CropRect& rect, double canvas_scale) {
  const Eigen::Index rows = seg.n_mels();
  const Eigen::Index cols = seg.frames();
  const Eigen::Index canvas_rows = static_cast<Eigen::Index>(std::floor(rows * canvas_scale));
  const Eigen::Index canvas_cols = static_cast<Eigen::Index>(std::floor(cols * canvas_scale));
  const Eigen::Index off_r = (canvas_rows - rows) / 2;
  const Eigen::Index off_c = (canvas_cols - cols) / 2;

  // Canvas lookup: the input sits at (off_r, off_c), zeros elsewhere.
  const auto at = [&](Eigen::Index r, Eigen::Index c) {
    r -= off_r;
    c -= off_c;
    if (r < 0 || r >= rows || c < 0 || c >= cols) return 0.0;
    return seg.values(r, c);
  };
  const auto sample = [&](double y, double x) {
    // Edge-clamped bilinear interpolation inside the canvas.
    y = std::clamp(y, 0.0, static_cast<double>(canvas_rows - 1));
    x = std::clamp(x, 0.0, static_cast<double>(canvas_cols - 1));
    const auto y0 = static_cast<Eigen::Index>(std::floor(y));
    const auto x0 = static_cast<Eigen::Index>(std::floor(x));
    const Eigen::Index y1 = std::min(y0 + 1, canvas_rows - 1);
    const Eigen::Index x1 = std::min(x0 + 1, canvas_cols - 1);
    const double wy = y - y0;
    const double wx = x - x0;
    return (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) + wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
  };

  LogMelSpectrogram out = seg;
  const double sy = rect.height / static_cast<double>(rows);
  const double sx = rect.width / static_cast<double>(cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double y = rect.top + (r + 0.5) * sy - 0.5;
    for (Eigen::Index c = 0; c < cols; ++c) {
      out.values(r, c) = sample(y, rect.left + (c + 0.5) * sx - 0.5);
    }
  }
  return out;
}

LogMelSpectrogram random_resize_crop(const LogMelSpectrogram& seg, const AugmentationConfig& cfg, Rng& rng) {
  const Eigen::Index rows = seg.n_mels();
  const Eigen::Index cols = seg.frames();
  const auto canvas_rows = static_cast<Eigen::Index>(std::floor(rows * cfg.canvas_scale));
  const auto canvas_cols = static_cast<Eigen::Index>(std::floor(cols * cfg.canvas_scale));
  std::uniform_real_distribution<double> fscale(cfg.freq_scale_range.first, cfg.freq_scale_range.second);
  std::uniform_real_distribution<double> tscale(cfg.time_scale_range.first, cfg.time_scale_range.second);
  const double f = fscale(rng);
  const double t = tscale(rng);
  const Eigen::Index h = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(f * rows)), 1, canvas_rows);
  const Eigen::Index w = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::llround(t * cols)), 1, canvas_cols);
  std::uniform_int_distribution<Eigen::Index> top(0, canvas_rows - h);
  std::uniform_int_distribution<Eigen::Index> left(0, canvas_cols - w);
  CropRect rect;
  rect.top = static_cast<double>(top(rng));
  rect.left = static_cast<double>(left(rng));
  rect.height = static_cast<double>(h);
  rect.width = static_cast<double>(w);
  return resize_crop(seg, rect, cfg.canvas_scale);
}

LogMelSpectrogram self_standardize(const LogMelSpectrogram& lms) {
  const double mean = lms.values.mean();
  const double var = (lms.values.array() - mean).square().mean();
  return audio::standardize(lms, {mean, std::max(1e-8, std::sqrt(var))});
}

ViewPair make_view_pair(const LogMelSpectrogram& lms, const NormalizationStats& stats, const AugmentationConfig& cfg,
                        MixupMemoryBank& bank, Rng& rng) {
  cfg.validate();
  const LogMelSpectrogram seg = crop_segment(audio::standardize(lms, stats), cfg.segment_frames, rng);
  const auto augment_once = [&] {
    return self_standardize(random_resize_crop(mixup(seg, bank, cfg.mixup_alpha, rng), cfg, rng));
  };
  ViewPair pair;
  pair.view_a = augment_once();
  pair.view_b = augment_once();
  return pair;
}

}  // namespace byols::augment
