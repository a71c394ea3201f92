#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kapi/errors.hpp"

namespace kapi::ref {

/// Rectangular evaluation grid. Axis 0 is x; axis 1 is y for Poisson fields
/// and t for space-time fields. Values are stored row-major with x fastest:
/// values[j * nx + i].
struct GridSpec {
  int nx = 0, ny = 0;
  double x0 = 0.0, x1 = 1.0;
  double y0 = 0.0, y1 = 1.0;
  /// Half-open x axis (periodic): spacing x-range/nx, endpoint excluded.
  bool x_periodic = false;

  double x(int i) const {
    const double n = x_periodic ? nx : nx - 1;
    return x0 + (x1 - x0) * i / n;
  }
  double y(int j) const { return y0 + (y1 - y0) * j / (ny - 1); }
  bool operator==(const GridSpec&) const = default;
};

struct SampledField {
  GridSpec grid;
  Eigen::VectorXd values;

  double& at(int i, int j) { return values[static_cast<Eigen::Index>(j) * grid.nx + i]; }
  double at(int i, int j) const { return values[static_cast<Eigen::Index>(j) * grid.nx + i]; }
};

/// Text grid dump: one header line `nx ny x0 x1 y0 y1 x_periodic`, then the
/// row-major values, 17 significant digits.
void write_field(std::ostream& os, const SampledField& field);
void write_field(const std::string& path, const SampledField& field);
SampledField read_field(std::istream& is);

struct InitialCondition {
  enum class Kind { PeriodicGaussian, MexicanHat };
  Kind kind = Kind::PeriodicGaussian;
  double x0 = 0.5;
  double width = 0.07;  // nu for the Gaussian, sigma for the Mexican hat

  double operator()(double x) const;
};

/// Three-image periodicized Mexican hat:
/// sum_{k=-1..1} (1 - (x-x0+k)^2/sigma^2) exp(-(x-x0+k)^2/(2 sigma^2)).
double mexican_hat_ic(double x0, double sigma, double x);

struct PoissonSource {
  double x0 = 0.5, y0 = 0.5, nu = 0.07;
  double weight = 1.0;
};

/// Gaussian source value sum_k w_k / (2 pi nu_k^2) exp(-r_k^2 / (2 nu_k^2)).
double poisson_forcing(std::span<const PoissonSource> sources, double x, double y);

/// Five-point finite-difference solution of -Lap u = f on [0,1]^2 with
/// homogeneous Dirichlet data, on an n x n grid including the boundary.
SampledField poisson_fd(std::span<const PoissonSource> sources, int n);

/// u(x, t) = u0(wrap(x - t)) on the unit periodic interval.
double advection_exact(const InitialCondition& ic, double x, double t);

/// Closed-form advection-diffusion reference family,
/// u = (4t+1)^{-1/2} exp(-(x - x_c - a t)^2 / (nu (4t+1))), x_c = 0.2.
inline constexpr double kAdvDiffCenter = 0.2;
double advdiff_exact(double a, double nu, double x, double t);

/// Variable-speed transport a(x; beta) = 1 + beta sin(2 pi x). Precomputes
/// the cumulative travel-time map S(y) = int_0^y dx/a(x) once, then inverts
/// it per query by bisection refined with secant steps.
class CharacteristicMap {
 public:
  CharacteristicMap(double beta, double tol = 1e-10);

  double speed(double x) const { return 1.0 + beta_ * std::sin(2.0 * M_PI * x); }
  double period_time() const { return period_; }
  /// Travel time from 0 to y (y may lie outside [0,1); winding is unwound).
  double travel(double y) const;
  /// Foot point x0 in [0,1) whose characteristic reaches x at time t.
  double foot(double x, double t) const;
  double solution(const InitialCondition& ic, double x, double t) const;

 private:
  double invert_base(double s) const;  // travel(y) = s with s in [0, period)

  double beta_, tol_, period_;
  std::vector<double> node_s_;  // travel(i / table_n) cumulative table
  int table_n_;
};

double varadv_exact(const InitialCondition& ic, double beta, double x, double t,
                    double tol = 1e-10);

}  // namespace kapi::ref
