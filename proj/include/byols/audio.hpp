#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace byols::audio {

inline constexpr int kModelRate = 16000;
inline constexpr int kMelBands = 64;
inline constexpr int kWindowSamples = 400;  // 25 ms
inline constexpr int kHopSamples = 160;     // 10 ms
inline constexpr int kFftSize = 512;
inline constexpr double kMelFmin = 60.0;
inline constexpr double kMelFmax = 7800.0;
inline constexpr double kLogFloor = 1e-10;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kModelRate;
  std::string id;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
};

/// 64 x T log-mel magnitudes. Rows are mel bands, columns are frames.
struct LogMelSpectrogram {
  Eigen::MatrixXd values;
  double frame_hop_s = 0.010;
  double frame_len_s = 0.025;
  double fmin_hz = kMelFmin;
  double fmax_hz = kMelFmax;

  Eigen::Index n_mels() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }
};

struct NormalizationStats {
  double mean = 0.0;
  double std = 1.0;
};

// Windowed-sinc resampler with a Kaiser window (beta 14.77, 64 zero crossings).
AudioClip resample(const AudioClip& clip, int target_rate);

/// STFT (Hann, 25 ms / 10 ms, reflect-centred, 512-point FFT) -> magnitude ->
/// 64-band HTK mel filterbank over 60-7800 Hz -> log(x + 1e-10).
/// Produces 1 + floor(N / 160) frames.
LogMelSpectrogram log_mel(const AudioClip& clip);

LogMelSpectrogram standardize(const LogMelSpectrogram& lms, const NormalizationStats& stats);

/// Scalar mean/std over every value of every spectrogram; std clamped at 1e-8.
NormalizationStats compute_stats(std::span<const LogMelSpectrogram> corpus);

/// Number of frames log_mel produces for n samples at 16 kHz.
inline Eigen::Index frame_count(std::size_t n_samples) {
  return 1 + static_cast<Eigen::Index>(n_samples / kHopSamples);
}

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Mel filterbank, shape (n_mels, n_fft/2 + 1), triangular HTK filters.
Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin, double fmax);

/// Centre frequency (Hz) of each of the n_mels filters.
std::vector<double> mel_centers_hz(int n_mels, double fmin, double fmax);

/// Periodic Hann window of length n, centred inside a frame of n_fft samples.
Eigen::VectorXd padded_hann(int n, int n_fft);

/// Magnitude spectrum of one windowed frame (n_fft/2 + 1 bins).
Eigen::VectorXd magnitude_spectrum(const Eigen::VectorXd& frame);

// WAV I/O. Accepts PCM 16/24/32 and float32; multichannel is averaged to mono.
AudioClip read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

// "LMS1" blob: magic, u32 n_mels, u32 T, row-major little-endian f32.
std::vector<std::uint8_t> encode_lms(const LogMelSpectrogram& lms);
LogMelSpectrogram decode_lms(std::span<const std::uint8_t> bytes);

}  // namespace byols::audio
