#include "byols/nn/adam.hpp"

#include <cmath>

namespace byols::nn {

Adam::Adam(std::vector<Parameter*> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape, 0.0);
    v_.emplace_back(p->value.shape, 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    m = opt_.beta1 * m + (1.0 - opt_.beta1) * p.grad.data;
    v = opt_.beta2 * v + (1.0 - opt_.beta2) * p.grad.data.cwiseAbs2();
    p.value.data.array() -= opt_.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + opt_.eps);
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->grad.data.setZero();
}

}  // namespace byols::nn
