#pragma once

#include <cmath>

#include "kapi/autodiff.hpp"

namespace kapi::geom {

/// Lower bound on every kernel width; keeps softplus-mapped widths away from
/// division blow-ups.
inline constexpr double kWidthFloor = 1e-3;

/// Wrapped distance on the unit periodic interval: min(|x-y|, 1-|x-y|).
inline double wrapped_distance(double x, double y) {
  const double d = std::abs(x - y);
  return std::min(d, 1.0 - d);
}

/// Planar Gaussian atom with the sigma^2-denominator convention:
/// phi = exp(-((x-mu_x)^2 + (y-mu_y)^2) / sigma^2).
struct PlanarAtom {
  double mu_x = 0.0, mu_y = 0.0;
  double sigma = kWidthFloor;
};

template <class T>
struct Eval2d {
  T phi, dx, dy, lap;
};

/// Value, gradient and Laplacian of the planar atom kernel; exact closed
/// forms, usable with double (assembly) or Var (training) atom parameters.
template <class T>
Eval2d<T> atom_eval_2d(const T& mu_x, const T& mu_y, const T& sigma, double x, double y) {
  using kapi::ad::exp;
  using kapi::ad::sq;
  using std::exp;
  T rx = x - mu_x;
  T ry = y - mu_y;
  T inv_s2 = 1.0 / sq(sigma);
  T r2 = sq(rx) + sq(ry);
  T phi = exp(-(r2 * inv_s2));
  T common = -2.0 * (inv_s2 * phi);
  Eval2d<T> out;
  out.phi = phi;
  out.dx = rx * common;
  out.dy = ry * common;
  out.lap = (2.0 - 2.0 * (r2 * inv_s2)) * common;  // (-4/s^2 + 4 r^2/s^4) phi
  return out;
}

inline Eval2d<double> atom_eval_2d(const PlanarAtom& a, double x, double y) {
  return atom_eval_2d<double>(a.mu_x, a.mu_y, a.sigma, x, y);
}

/// Space-time atom. Non-periodic kernel:
///   exp(-(x-xi)^2/(2 h^2) - (t-tau)^2/(2 s^2)).
/// Periodic kernel replaces the spatial factor by the smooth form
///   exp(kappa (cos(2 pi (x-xi)) - 1)),  kappa = 1/(2 pi h)^2,
/// whose curvature at the center matches the Gaussian (phi_xx = -1/h^2) while
/// staying C-infinity across the antipode.
struct SpaceTimeAtom {
  double xi = 0.0;
  double h = kWidthFloor;
  double tau = 0.0;
  double s = kWidthFloor;
  bool periodic = false;
};

struct EvalSt {
  double phi, dx, dxx, dt;
};

EvalSt atom_eval_st(const SpaceTimeAtom& a, double x, double t);

/// One dynamic packet alpha * exp(-d(x, xi)^2 / (2 h^2)) frozen at a time
/// instant together with the time derivatives of its generator outputs.
struct DynamicAtomState {
  double alpha = 0.0, xi = 0.0, h = kWidthFloor;
  double dalpha_dt = 0.0, dxi_dt = 0.0, dh_dt = 0.0;
};

struct PacketEval {
  double u, dx, dxx, dt;
};

/// Spatial derivatives are analytic; du/dt expands by the chain rule through
/// (alpha, xi, h). Periodic packets use the wrapped offset, so the x
/// derivatives hold away from the antipode.
PacketEval dynamic_packet_eval(const DynamicAtomState& st, double x, bool periodic);

}  // namespace kapi::geom
