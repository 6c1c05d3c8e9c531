#pragma once

#include <vector>

#include "byols/nn/tensor.hpp"

namespace byols::nn {

struct AdamOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the order of the parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamOptions opt);

  void step();
  void zero_grad();

  const AdamOptions& options() const { return opt_; }
  long long steps() const { return t_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  void set_steps(long long t) { t_ = t; }
  const std::vector<Parameter*>& parameters() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  AdamOptions opt_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long long t_ = 0;
};

}  // namespace byols::nn
