#include "kapi/linalg.hpp"

#include <Eigen/Sparse>
#include <cmath>

namespace kapi::linalg {

Vector ridge_lstsq(const DenseMatrix& A, const Vector& b, double ridge) {
  const Eigen::Index rows = A.rows();
  const Eigen::Index cols = A.cols();
  if (cols == 0) throw SingularSystem(0, 0);
  if (rows != b.size()) throw Error("ridge_lstsq: A.rows != len(b)");
  if (ridge < 0.0) throw Error("ridge_lstsq: negative ridge");
  if (!A.allFinite() || !b.allFinite()) throw NonFiniteInput("ridge_lstsq: non-finite entry in A or b");

  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A);
    qr.setThreshold(kRankTolerance);
    const auto rank = qr.rank();
    if (rank < cols) throw SingularSystem(static_cast<int>(rank), static_cast<int>(cols));
    return qr.solve(b);
  }

  // Stacked ridge system keeps the conditioning of A rather than A^T A.
  Eigen::MatrixXd stacked(rows + cols, cols);
  stacked.topRows(rows) = A;
  stacked.bottomRows(cols) = std::sqrt(ridge) * Eigen::MatrixXd::Identity(cols, cols);
  Vector rhs = Vector::Zero(rows + cols);
  rhs.head(rows) = b;
  return Eigen::HouseholderQR<Eigen::MatrixXd>(stacked).solve(rhs);
}

Vector solve_five_point(const FivePointSystem& system) {
  const int n = system.n;
  if (n < 1) throw Error("solve_five_point: empty interior grid");
  if (system.rhs.size() != static_cast<Eigen::Index>(n) * n)
    throw Error("solve_five_point: rhs size mismatch");
  if (!system.rhs.allFinite()) throw NonFiniteInput("solve_five_point: non-finite rhs");

  const double inv_h2 = 1.0 / (system.h * system.h);
  const auto idx = [n](int i, int j) { return j * n + i; };

  Eigen::SparseMatrix<double> lap(n * n, n * n);
  {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(5) * n * n);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const int r = idx(i, j);
        trips.emplace_back(r, r, 4.0 * inv_h2);
        if (i > 0) trips.emplace_back(r, idx(i - 1, j), -inv_h2);
        if (i < n - 1) trips.emplace_back(r, idx(i + 1, j), -inv_h2);
        if (j > 0) trips.emplace_back(r, idx(i, j - 1), -inv_h2);
        if (j < n - 1) trips.emplace_back(r, idx(i, j + 1), -inv_h2);
      }
    }
    lap.setFromTriplets(trips.begin(), trips.end());
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> llt(lap);
  if (llt.info() != Eigen::Success) throw ConvergenceFailure("solve_five_point: factorization failed");
  Vector u = llt.solve(system.rhs);

  const double res = (lap * u - system.rhs).cwiseAbs().maxCoeff();
  const double scale = system.rhs.size() ? system.rhs.cwiseAbs().maxCoeff() : 0.0;
  if (res > 1e-10 * std::max(scale, 1e-300))
    throw ConvergenceFailure("solve_five_point: residual above tolerance");
  return u;
}

}  // namespace kapi::linalg
