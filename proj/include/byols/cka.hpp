#pragma once

#include <span>
#include <string>
#include <vector>

#include "byols/audio.hpp"
#include "byols/encoders.hpp"

namespace byols::cka {

struct ActivationMatrix {
  std::string layer_name;
  Eigen::MatrixXd values;  // n_examples x n_features
};

struct SimilarityMatrix {
  std::vector<std::string> layers_a;
  std::vector<std::string> layers_b;
  Eigen::MatrixXd values;
};

/// H K H for the linear kernel K = X X^T, H = I - 11^T / n.
Eigen::MatrixXd centered_gram(const Eigen::MatrixXd& x);

/// Biased HSIC: Frobenius inner product of two centred Gram matrices.
double hsic(const Eigen::MatrixXd& kx_centered, const Eigen::MatrixXd& ky_centered);

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y);

/// Per-layer activations of an encoder over probe spectrograms, one row per example.
std::vector<ActivationMatrix> layer_activations(const encoders::Encoder& enc,
                                                std::span<const audio::LogMelSpectrogram> probe);

SimilarityMatrix similarity(const std::vector<ActivationMatrix>& a, const std::vector<ActivationMatrix>& b);

inline constexpr std::size_t kMinProbeClips = 32;

/// Runs both encoders over the same standardized probe spectrograms and compares every layer pair.
SimilarityMatrix model_similarity(const encoders::Encoder& a, const encoders::Encoder& b,
                                  std::span<const audio::LogMelSpectrogram> probe);

}  // namespace byols::cka
