#include "byols/cka.hpp"

#include <cmath>

#include "byols/error.hpp"

namespace byols::cka {

Eigen::MatrixXd centered_gram(const Eigen::MatrixXd& x) {
  require(x.rows() >= 2, "CKA needs at least 2 examples");
  require(x.allFinite(), "activations must be finite");
  // H X X^T H == (H X)(H X)^T; centring the columns first is cheaper and better conditioned.
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  return xc * xc.transpose();
}

double hsic(const Eigen::MatrixXd& kx_centered, const Eigen::MatrixXd& ky_centered) {
  require(kx_centered.rows() == ky_centered.rows() && kx_centered.cols() == ky_centered.cols(),
          "hsic: Gram matrices differ in size");
  return (kx_centered.array() * ky_centered.array()).sum();
}

double linear_cka(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  require(x.rows() == y.rows(), "CKA inputs need the same number of examples");
  const Eigen::MatrixXd kx = centered_gram(x);
  const Eigen::MatrixXd ky = centered_gram(y);
  const double xx = hsic(kx, kx), yy = hsic(ky, ky);
  // Relative to the raw Gram scale, so a constant layer of large magnitude still counts as constant.
  auto degenerate = [](double h, const Eigen::MatrixXd& m) {
    const double scale = m.squaredNorm();
    return !(h > 1e-24 * std::max(1.0, scale * scale));
  };
  if (degenerate(xx, x) || degenerate(yy, y)) fail(ErrorCode::kInvalidArgument, "constant activations");
  return hsic(kx, ky) / std::sqrt(xx * yy);
}

std::vector<ActivationMatrix> layer_activations(const encoders::Encoder& enc,
                                                std::span<const audio::LogMelSpectrogram> probe) {
  require(!probe.empty(), "empty CKA probe set");
  const auto names = enc.layer_names();
  std::vector<ActivationMatrix> out(names.size());
  for (std::size_t l = 0; l < names.size(); ++l) out[l].layer_name = names[l];
  for (std::size_t i = 0; i < probe.size(); ++i) {
    nn::ActivationRecorder rec;
    encoders::encode(enc, probe[i], &rec);
    require(rec.layers.size() == names.size(), "encoder recorded an unexpected number of layers");
    for (std::size_t l = 0; l < names.size(); ++l) {
      const Eigen::MatrixXd& row = rec.layers[l].second;
      auto& m = out[l].values;
      if (i == 0) m.resize(static_cast<Eigen::Index>(probe.size()), row.size());
      require(row.size() == m.cols(), "layer " + names[l] + " changed width across probe clips");
      m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), row.size());
    }
  }
  return out;
}

SimilarityMatrix similarity(const std::vector<ActivationMatrix>& a, const std::vector<ActivationMatrix>& b) {
  SimilarityMatrix s;
  s.values.resize(static_cast<Eigen::Index>(a.size()), static_cast<Eigen::Index>(b.size()));
  for (const auto& x : a) s.layers_a.push_back(x.layer_name);
  for (const auto& y : b) s.layers_b.push_back(y.layer_name);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      s.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = linear_cka(a[i].values, b[j].values);
    }
  }
  return s;
}

SimilarityMatrix model_similarity(const encoders::Encoder& a, const encoders::Encoder& b,
                                  std::span<const audio::LogMelSpectrogram> probe) {
  require(probe.size() >= kMinProbeClips, "CKA probe set needs at least 32 clips");
  return similarity(layer_activations(a, probe), layer_activations(b, probe));
}

}  // namespace byols::cka
