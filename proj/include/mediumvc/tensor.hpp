#pragma once

#include <complex>

#include <Eigen/Dense>

namespace mvc {

using Index = Eigen::Index;

/// Time-major feature matrix: rows are frames, columns are channels.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMat = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

}  // namespace mvc
