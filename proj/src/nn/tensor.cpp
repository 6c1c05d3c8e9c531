#include "byols/nn/tensor.hpp"

#include <sstream>

#include "byols/error.hpp"

namespace byols::nn {

Index numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
  require(numel(shape) == data.size(), "tensor data does not match shape " + shape_string(shape));
}

MatrixMap Tensor::matrix(int split) {
  Index cols = 1;
  for (int i = split; i < rank(); ++i) cols *= shape[static_cast<std::size_t>(i)];
  return {data.data(), cols == 0 ? 0 : size() / cols, cols};
}

ConstMatrixMap Tensor::matrix(int split) const {
  Index cols = 1;
  for (int i = split; i < rank(); ++i) cols *= shape[static_cast<std::size_t>(i)];
  return {data.data(), cols == 0 ? 0 : size() / cols, cols};
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t({m.rows(), m.cols()});
  t.matrix() = m;
  return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
  require(rank() == 2, "to_matrix needs a rank-2 tensor");
  return matrix();
}

}  // namespace byols::nn
