#pragma once

#include <Eigen/Dense>

#include "kapi/errors.hpp"

namespace kapi::linalg {

/// Row-major so assembly loops write cache-contiguous rows.
using DenseMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// R-diagonal entries below this fraction of the largest are treated as zero.
inline constexpr double kRankTolerance = 1e-12;

/// Minimizes ||A c - b||^2 + ridge ||c||^2 via Householder QR of the stacked
/// matrix [A; sqrt(ridge) I]; never forms the normal equations. For ridge = 0
/// the system must have full column rank, otherwise SingularSystem is thrown
/// with the detected rank.
Vector ridge_lstsq(const DenseMatrix& A, const Vector& b, double ridge);

/// -Laplace u = f with the five-point stencil on the interior of a uniform
/// grid with spacing h, homogeneous Dirichlet boundary. `rhs` holds f at the
/// n*n interior nodes in row-major order (x fastest).
struct FivePointSystem {
  int n = 0;
  double h = 0.0;
  Vector rhs;
};

/// Direct sparse solve of the five-point system. The solution satisfies
/// ||A u - f||_inf <= 1e-10 ||f||_inf or ConvergenceFailure is thrown.
Vector solve_five_point(const FivePointSystem& system);

}  // namespace kapi::linalg
