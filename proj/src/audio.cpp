#include "byols/audio.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "byols/binary_io.hpp"
#include "byols/error.hpp"

namespace byols::audio {

namespace {

constexpr double kKaiserBeta = 14.77;
constexpr int kZeroCrossings = 64;

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Mirror index into [0, n) without repeating the edge sample.
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

}  // namespace

AudioClip resample(const AudioClip& clip, int target_rate) {
  require(clip.sample_rate > 0 && target_rate > 0, "sample rates must be positive");
  require(!clip.samples.empty(), "empty clip");
  if (target_rate == clip.sample_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double scale = std::min(1.0, ratio);
  const double half_width = kZeroCrossings / scale;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);
  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto n_out = static_cast<std::ptrdiff_t>(std::llround(static_cast<double>(n_in) * ratio));

  // Output j sits at input time j * src / dst. With g = gcd, the fractional
  // position repeats every dst / g outputs, so the taps are tabulated per phase.
  const long long g = std::gcd(clip.sample_rate, target_rate);
  const long long phases = target_rate / g, step = clip.sample_rate / g;
  std::vector<std::ptrdiff_t> first(static_cast<std::size_t>(phases));
  std::vector<std::vector<double>> taps(static_cast<std::size_t>(phases));
  for (long long p = 0; p < phases; ++p) {
    const double t = static_cast<double>(p * clip.sample_rate) / target_rate;
    const auto lo = static_cast<std::ptrdiff_t>(std::ceil(t - half_width));
    const auto hi = static_cast<std::ptrdiff_t>(std::floor(t + half_width));
    first[static_cast<std::size_t>(p)] = lo;
    auto& row = taps[static_cast<std::size_t>(p)];
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      const double x = t - static_cast<double>(i);
      const double r = x / half_width;
      const double w = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      row.push_back(scale * sinc(scale * x) * w);
    }
  }

  AudioClip out;
  out.id = clip.id;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::ptrdiff_t j = 0; j < n_out; ++j) {
    const auto p = static_cast<std::size_t>(j % phases);
    const std::ptrdiff_t start = (j / phases) * step + first[p];
    const auto& row = taps[p];
    double acc = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      const std::ptrdiff_t i = start + static_cast<std::ptrdiff_t>(k);
      if (i >= 0 && i < n_in) acc += clip.samples[static_cast<std::size_t>(i)] * row[k];
    }
    out.samples[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_centers_hz(int n_mels, double fmin, double fmax) {
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> centers(static_cast<std::size_t>(n_mels));
  for (int m = 0; m < n_mels; ++m) {
    centers[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  }
  return centers;
}

Eigen::MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate, double fmin, double fmax) {
  const int n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(fmin);
  const double hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (int i = 0; i < n_mels + 2; ++i) {
    edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));
  }
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double centre = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      const double rising = (f - left) / (centre - left);
      const double falling = (right - f) / (right - centre);
      fb(m, k) = std::max(0.0, std::min(rising, falling));
    }
  }
  return fb;
}

Eigen::VectorXd padded_hann(int n, int n_fft) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(n_fft);
  const int offset = (n_fft - n) / 2;
  for (int i = 0; i < n; ++i) {
    w(offset + i) = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

Eigen::VectorXd magnitude_spectrum(const Eigen::VectorXd& frame) {
  static thread_local Eigen::FFT<double> fft;
  std::vector<double> time(frame.data(), frame.data() + frame.size());
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, time);
  const Eigen::Index n_bins = frame.size() / 2 + 1;
  Eigen::VectorXd mag(n_bins);
  for (Eigen::Index k = 0; k < n_bins; ++k) mag(k) = std::abs(freq[static_cast<std::size_t>(k)]);
  return mag;
}

LogMelSpectrogram log_mel(const AudioClip& clip) {
  require(clip.sample_rate == kModelRate, "log_mel expects 16 kHz audio");
  require(clip.samples.size() >= static_cast<std::size_t>(kHopSamples), "clip too short");

  static const Eigen::MatrixXd fb = mel_filterbank(kMelBands, kFftSize, kModelRate, kMelFmin, kMelFmax);
  static const Eigen::VectorXd window = padded_hann(kWindowSamples, kFftSize);

  const auto n = static_cast<std::ptrdiff_t>(clip.samples.size());
  const Eigen::Index frames = frame_count(clip.samples.size());
  const std::ptrdiff_t pad = kFftSize / 2;

  LogMelSpectrogram out;
  out.values.resize(kMelBands, frames);
  Eigen::VectorXd frame(kFftSize);
  for (Eigen::Index t = 0; t < frames; ++t) {
    const std::ptrdiff_t start = t * kHopSamples - pad;
    for (int i = 0; i < kFftSize; ++i) {
      frame(i) = clip.samples[static_cast<std::size_t>(reflect_index(start + i, n))] * window(i);
    }
    const Eigen::VectorXd mel = fb * magnitude_spectrum(frame);
    out.values.col(t) = (mel.array() + kLogFloor).log().matrix();
  }
  return out;
}

LogMelSpectrogram standardize(const LogMelSpectrogram& lms, const NormalizationStats& stats) {
  require(stats.std > 0.0, "normalization std must be positive");
  LogMelSpectrogram out = lms;
  out.values = ((lms.values.array() - stats.mean) / stats.std).matrix();
  return out;
}

NormalizationStats compute_stats(std::span<const LogMelSpectrogram> corpus) {
  require(!corpus.empty(), "compute_stats: empty corpus");
  // Chan et al. pairwise merge of per-spectrogram moments.
  double count = 0.0;
  double mean = 0.0;
  double m2 = 0.0;
  for (const auto& lms : corpus) {
    const auto n = static_cast<double>(lms.values.size());
    if (n == 0) continue;
    const double m = lms.values.mean();
    const double s = (lms.values.array() - m).square().sum();
    const double delta = m - mean;
    const double total = count + n;
    mean += delta * n / total;
    m2 += s + delta * delta * count * n / total;
    count = total;
  }
  require(count > 0, "compute_stats: corpus holds no values");
  return {mean, std::max(1e-8, std::sqrt(m2 / count))};
}

namespace {

std::uint32_t read_u32(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, b.data() + at, 4);
  return v;
}

std::uint16_t read_u16(const std::vector<std::uint8_t>& b, std::size_t at) {
  std::uint16_t v;
  std::memcpy(&v, b.data() + at, 2);
  return v;
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  const auto bad = [&](const std::string& why) { fail(ErrorCode::kFormat, path.string() + ": " + why); };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    bad("not a RIFF/WAVE file");
  }
  int format = -1, channels = 0, rate = 0, bits = 0;
  std::size_t data_at = 0, data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string tag(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::size_t len = read_u32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size() && tag != "data") bad("truncated chunk " + tag);
    if (tag == "fmt ") {
      if (len < 16) bad("short fmt chunk");
      format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = static_cast<int>(read_u32(bytes, body + 4));
      bits = read_u16(bytes, body + 14);
      if (format == 0xFFFE && len >= 26) format = read_u16(bytes, body + 24);
    } else if (tag == "data") {
      data_at = body;
      data_len = std::min(len, bytes.size() - body);
    }
    pos = body + len + (len & 1);
  }
  if (format < 0) bad("missing fmt chunk");
  if (data_at == 0) bad("missing data chunk");
  if (channels < 1 || rate <= 0) bad("invalid channel count or sample rate");
  const bool pcm = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  const bool flt = format == 3 && bits == 32;
  if (!pcm && !flt) bad("unsupported sample format");

  const std::size_t width = static_cast<std::size_t>(bits / 8);
  const std::size_t frames = data_len / (width * static_cast<std::size_t>(channels));
  AudioClip clip;
  clip.sample_rate = rate;
  clip.id = path.stem().string();
  clip.samples.resize(frames);
  const std::uint8_t* p = bytes.data() + data_at;
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c, p += width) {
      double v = 0.0;
      if (flt) {
        float x;
        std::memcpy(&x, p, 4);
        v = x;
      } else if (bits == 16) {
        std::int16_t x;
        std::memcpy(&x, p, 2);
        v = x / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = p[0] | (p[1] << 8) | (p[2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        std::int32_t x;
        std::memcpy(&x, p, 4);
        v = x / 2147483648.0;
      }
      acc += v;
    }
    clip.samples[f] = acc / channels;
  }
  return clip;
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  io::ByteWriter w;
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  w.magic("RIFF");
  w.put<std::uint32_t>(4 + 8 + 16 + 8 + n * 4);
  w.magic("WAVE");
  w.magic("fmt ");
  w.put<std::uint32_t>(16);
  w.put<std::uint16_t>(3);  // IEEE float
  w.put<std::uint16_t>(1);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(clip.sample_rate) * 4);
  w.put<std::uint16_t>(4);
  w.put<std::uint16_t>(32);
  w.magic("data");
  w.put<std::uint32_t>(n * 4);
  for (double s : clip.samples) w.put<float>(static_cast<float>(s));
  io::write_file(path, w.buffer());
}

std::vector<std::uint8_t> encode_lms(const LogMelSpectrogram& lms) {
  io::ByteWriter w;
  w.magic("LMS1");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(lms.values.rows()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(lms.values.cols()));
  for (Eigen::Index r = 0; r < lms.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < lms.values.cols(); ++c) w.put<float>(static_cast<float>(lms.values(r, c)));
  }
  return w.take();
}

LogMelSpectrogram decode_lms(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("LMS1");
  const auto rows = r.get<std::uint32_t>();
  const auto cols = r.get<std::uint32_t>();
  if (r.remaining() != static_cast<std::size_t>(rows) * cols * 4) fail(ErrorCode::kFormat, "LMS1 payload size mismatch");
  LogMelSpectrogram lms;
  lms.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) lms.values(i, j) = r.get<float>();
  }
  return lms;
}

}  // namespace byols::audio
