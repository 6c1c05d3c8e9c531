#include "byols/nn/layers.hpp"

#include <cmath>

#include "byols/error.hpp"

namespace byols::nn {

Parameter& ParameterStore::create(std::string name, Shape shape, double fill, bool trainable) {
  require(find(name) == nullptr, "duplicate parameter name " + name);
  Parameter& p = params_.emplace_back();
  p.name = std::move(name);
  p.value = Tensor(std::move(shape), fill);
  p.trainable = trainable;
  if (trainable) p.grad = Tensor(p.value.shape, 0.0);
  return p;
}

Parameter& ParameterStore::create_uniform(std::string name, Shape shape, double bound, Rng& rng) {
  Parameter& p = create(std::move(name), std::move(shape), 0.0);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (Index i = 0; i < p.value.size(); ++i) p.value.data(i) = u(rng);
  return p;
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p.trainable) out.push_back(&p);
  }
  return out;
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Index ParameterStore::parameter_count() const {
  Index n = 0;
  for (const auto& p : params_) {
    if (p.trainable) n += p.value.size();
  }
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) p.grad.data.setZero();
  }
}

Linear::Linear(ParameterStore& s, const std::string& name, Index in, Index out, Rng& rng, bool with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = &s.create_uniform(name + ".weight", {out, in}, bound, rng);
  if (with_bias) bias = &s.create_uniform(name + ".bias", {out}, bound, rng);
}

Var Linear::operator()(ForwardContext& ctx, Var x) const {
  return linear(x, ctx.param(*weight), bias ? ctx.param(*bias) : Var{});
}

Conv2d::Conv2d(ParameterStore& s, const std::string& name, Index in, Index out, Index kh, Index kw, Conv2dOptions opt,
               Rng& rng, bool with_bias)
    : options(opt) {
  const Index per_group = in / opt.groups;
  const double bound = 1.0 / std::sqrt(static_cast<double>(per_group * kh * kw));
  weight = &s.create_uniform(name + ".weight", {out, per_group, kh, kw}, bound, rng);
  if (with_bias) bias = &s.create_uniform(name + ".bias", {out}, bound, rng);
}

Var Conv2d::operator()(ForwardContext& ctx, Var x) const {
  return conv2d(x, ctx.param(*weight), bias ? ctx.param(*bias) : Var{}, options);
}

BatchNorm::BatchNorm(ParameterStore& s, const std::string& name, Index channels) {
  gamma = &s.create(name + ".weight", {channels}, 1.0);
  beta = &s.create(name + ".bias", {channels}, 0.0);
  running_mean = &s.create(name + ".running_mean", {channels}, 0.0, false);
  running_var = &s.create(name + ".running_var", {channels}, 1.0, false);
}

Var BatchNorm::operator()(ForwardContext& ctx, Var x) const {
  return batch_norm(x, ctx.param(*gamma), ctx.param(*beta), running_mean->value, running_var->value, ctx.training,
                    ctx.update_running_stats ? momentum : 0.0);
}

LayerNorm::LayerNorm(ParameterStore& s, const std::string& name, Index dim) {
  gamma = &s.create(name + ".weight", {dim}, 1.0);
  beta = &s.create(name + ".bias", {dim}, 0.0);
}

Var LayerNorm::operator()(ForwardContext& ctx, Var x) const {
  return layer_norm(x, ctx.param(*gamma), ctx.param(*beta));
}

Lstm::Lstm(ParameterStore& s, const std::string& name, Index in, Index hidden_size, bool reverse_dir, Rng& rng)
    : hidden(hidden_size), reverse(reverse_dir) {
  // Same bound as the usual U(-1/sqrt(H), 1/sqrt(H)) recurrent initialisation.
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  input.weight = &s.create_uniform(name + ".weight_ih", {4 * hidden_size, in}, bound, rng);
  input.bias = &s.create_uniform(name + ".bias", {4 * hidden_size}, bound, rng);
  recurrent.weight = &s.create_uniform(name + ".weight_hh", {4 * hidden_size, hidden_size}, bound, rng);
}

Var Lstm::operator()(ForwardContext& ctx, Var x) const {
  require(x.value().rank() == 3, "lstm expects [N, T, features]");
  const Index n = x.dim(0), t = x.dim(1);
  const Var projected = input(ctx, x);  // [N, T, 4H]
  Var h = ctx.graph.constant(Tensor({n, hidden}, 0.0));
  Var c = ctx.graph.constant(Tensor({n, hidden}, 0.0));
  std::vector<Var> outputs(static_cast<std::size_t>(t));
  for (Index step = 0; step < t; ++step) {
    const Index at = reverse ? t - 1 - step : step;
    const Var gates = add(reshape(slice(projected, 1, at, 1), {n, 4 * hidden}), recurrent(ctx, h));
    const Var i = sigmoid(slice(gates, 1, 0, hidden));
    const Var f = sigmoid(slice(gates, 1, hidden, hidden));
    const Var g = tanh(slice(gates, 1, 2 * hidden, hidden));
    const Var o = sigmoid(slice(gates, 1, 3 * hidden, hidden));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, tanh(c));
    outputs[static_cast<std::size_t>(at)] = h;
  }
  return stack(outputs, 1);
}

MlpHead::MlpHead(ParameterStore& s, const std::string& name, Index in, Index hidden, Index out, Rng& rng)
    : fc1(s, name + ".fc1", in, hidden, rng), bn(s, name + ".bn", hidden), fc2(s, name + ".fc2", hidden, out, rng) {}

Var MlpHead::operator()(ForwardContext& ctx, Var x) const { return fc2(ctx, relu(bn(ctx, fc1(ctx, x)))); }

Var temporal_pool(Var seq) {
  require(seq.value().rank() == 3, "temporal_pool expects [N, T, D]");
  return add(mean_axis(seq, 1), max_axis(seq, 1));
}

namespace {

void push_record(ForwardContext& ctx, const std::string& name, const Tensor& t) {
  Eigen::MatrixXd m = t.matrix(1);
  ctx.recorder->layers.emplace_back(name, std::move(m));
}

}  // namespace

void record_map(ForwardContext& ctx, const std::string& name, Var x) {
  if (ctx.recorder == nullptr) return;
  Graph scratch;
  push_record(ctx, name, mean_axis(scratch.constant(x.value()), 3).value());
}

void record_sequence(ForwardContext& ctx, const std::string& name, Var x) {
  if (ctx.recorder == nullptr) return;
  Graph scratch;
  push_record(ctx, name, mean_axis(scratch.constant(x.value()), 1).value());
}

void record_vector(ForwardContext& ctx, const std::string& name, Var x) {
  if (ctx.recorder == nullptr) return;
  push_record(ctx, name, x.value());
}

}  // namespace byols::nn
