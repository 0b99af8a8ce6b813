#pragma once

#include <Eigen/Dense>

namespace anchorkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr const char* kVersion = "0.1.0";

}  // namespace anchorkit
