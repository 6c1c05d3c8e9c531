#pragma once

#include <deque>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "byols/nn/ops.hpp"

namespace byols::nn {

using Rng = std::mt19937_64;

/// Owns the tensors of one network. Addresses are stable for the store's lifetime,
/// and iteration order is creation order.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& create(std::string name, Shape shape, double fill, bool trainable = true);
  Parameter& create_uniform(std::string name, Shape shape, double bound, Rng& rng);

  std::vector<Parameter*> trainable();
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(const std::string& name);
  Index parameter_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
};

/// Collects per-layer activations as [N, features] matrices.
struct ActivationRecorder {
  std::vector<std::pair<std::string, Eigen::MatrixXd>> layers;
};

struct ForwardContext {
  Graph& graph;
  bool training = false;
  bool track_params = true;
  std::uint64_t seed = 0;
  ActivationRecorder* recorder = nullptr;
  /// When false, batch norm still normalises with batch statistics in training
  /// mode but leaves its running averages untouched.
  bool update_running_stats = true;

  Var param(Parameter& p) const { return graph.param(p, track_params); }
  /// Per-call deterministic seed for stochastic layers.
  std::uint64_t next_seed() { return seed = seed * 6364136223846793005ULL + 1442695040888963407ULL; }
};

struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Linear() = default;
  Linear(ParameterStore& s, const std::string& name, Index in, Index out, Rng& rng, bool with_bias = true);
  Var operator()(ForwardContext& ctx, Var x) const;
};

struct Conv2d {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  Conv2dOptions options;

  Conv2d() = default;
  Conv2d(ParameterStore& s, const std::string& name, Index in, Index out, Index kh, Index kw, Conv2dOptions opt,
         Rng& rng, bool with_bias = true);
  Var operator()(ForwardContext& ctx, Var x) const;
};

struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
  double momentum = 0.1;

  BatchNorm() = default;
  BatchNorm(ParameterStore& s, const std::string& name, Index channels);
  Var operator()(ForwardContext& ctx, Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& s, const std::string& name, Index dim);
  Var operator()(ForwardContext& ctx, Var x) const;
};

/// Single-direction LSTM over [N, T, in] -> [N, T, hidden]; gate order i, f, g, o.
struct Lstm {
  Linear input;      // in -> 4H, carries the bias
  Linear recurrent;  // H -> 4H, no bias
  Index hidden = 0;
  bool reverse = false;

  Lstm() = default;
  Lstm(ParameterStore& s, const std::string& name, Index in, Index hidden, bool reverse, Rng& rng);
  Var operator()(ForwardContext& ctx, Var x) const;
};

/// Two-layer feed-forward head: linear -> batch norm -> ReLU -> linear.
struct MlpHead {
  Linear fc1;
  BatchNorm bn;
  Linear fc2;

  MlpHead() = default;
  MlpHead(ParameterStore& s, const std::string& name, Index in, Index hidden, Index out, Rng& rng);
  Var operator()(ForwardContext& ctx, Var x) const;
};

/// Elementwise temporal mean + temporal max over axis 1 of [N, T, D].
Var temporal_pool(Var seq);

/// Record [N, C, F, T] maps (mean over T) or [N, T, D] sequences (mean over T) or [N, D].
void record_map(ForwardContext& ctx, const std::string& name, Var x);
void record_sequence(ForwardContext& ctx, const std::string& name, Var x);
void record_vector(ForwardContext& ctx, const std::string& name, Var x);

}  // namespace byols::nn
