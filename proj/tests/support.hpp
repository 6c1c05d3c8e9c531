#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>

#include "byols/audio.hpp"

namespace byols::testing {

inline audio::AudioClip tone(double hz, double seconds, int rate = audio::kModelRate, double amp = 0.5) {
  audio::AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  }
  return c;
}

inline audio::AudioClip noise(double seconds, std::uint64_t seed, double amp = 0.3) {
  audio::AudioClip c;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, amp);
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * audio::kModelRate)));
  for (auto& s : c.samples) s = n(rng);
  return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("byols-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace byols::testing
