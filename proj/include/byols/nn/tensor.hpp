#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace byols::nn {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

Index numel(const Shape& s);
std::string shape_string(const Shape& s);

/// Dense row-major tensor of doubles.
struct Tensor {
  Shape shape;
  Eigen::VectorXd data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(Eigen::VectorXd::Constant(numel(shape), fill)) {}
  Tensor(Shape s, Eigen::VectorXd d);

  Index size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  Index dim(int axis) const { return shape[static_cast<std::size_t>(axis < 0 ? axis + rank() : axis)]; }
  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  /// View as rows x cols where cols is the trailing dimension product from `split` on.
  MatrixMap matrix(int split);
  ConstMatrixMap matrix(int split) const;
  MatrixMap matrix() { return matrix(rank() - 1); }
  ConstMatrixMap matrix() const { return matrix(rank() - 1); }

  static Tensor from_matrix(const Eigen::MatrixXd& m);
  Eigen::MatrixXd to_matrix() const;  // rank-2 only
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
};

}  // namespace byols::nn
