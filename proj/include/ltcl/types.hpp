#pragma once

#include <Eigen/Dense>

namespace ltcl {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
// Row-major so that a block of samples is a contiguous slab.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = Eigen::MatrixXd;

}  // namespace ltcl
