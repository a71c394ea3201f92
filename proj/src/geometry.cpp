#include "kapi/geometry.hpp"

namespace kapi::geom {

EvalSt atom_eval_st(const SpaceTimeAtom& a, double x, double t) {
  const double dt_off = t - a.tau;
  const double inv_s2 = 1.0 / (a.s * a.s);
  const double time_exp = -0.5 * dt_off * dt_off * inv_s2;

  EvalSt out;
  if (a.periodic) {
    const double kappa = 1.0 / ((2.0 * M_PI * a.h) * (2.0 * M_PI * a.h));
    const double ang = 2.0 * M_PI * (x - a.xi);
    const double c = std::cos(ang), s = std::sin(ang);
    const double phi = std::exp(kappa * (c - 1.0) + time_exp);
    const double g1 = -2.0 * M_PI * kappa * s;           // d/dx of exponent
    const double g2 = -4.0 * M_PI * M_PI * kappa * c;    // d2/dx2 of exponent
    out.phi = phi;
    out.dx = g1 * phi;
    out.dxx = (g1 * g1 + g2) * phi;
  } else {
    const double dx_off = x - a.xi;
    const double inv_h2 = 1.0 / (a.h * a.h);
    const double phi = std::exp(-0.5 * dx_off * dx_off * inv_h2 + time_exp);
    out.phi = phi;
    out.dx = -dx_off * inv_h2 * phi;
    out.dxx = (dx_off * dx_off * inv_h2 - 1.0) * inv_h2 * phi;
  }
  out.dt = -dt_off * inv_s2 * out.phi;
  return out;
}

PacketEval dynamic_packet_eval(const DynamicAtomState& st, double x, bool periodic) {
  const double delta = periodic ? ad::wrap_unit(x - st.xi) : (x - st.xi);
  const double inv_h2 = 1.0 / (st.h * st.h);
  const double kern = std::exp(-0.5 * delta * delta * inv_h2);
  const double u = st.alpha * kern;

  PacketEval out;
  out.u = u;
  out.dx = -(delta * inv_h2) * u;
  out.dxx = (delta * delta * inv_h2 - 1.0) * inv_h2 * u;

  const double du_dalpha = kern;
  const double du_dxi = (delta * inv_h2) * u;
  const double du_dh = delta * delta * inv_h2 / st.h * u;
  out.dt = du_dalpha * st.dalpha_dt + du_dxi * st.dxi_dt + du_dh * st.dh_dt;
  return out;
}

}  // namespace kapi::geom
