#pragma once

// Templated evaluation core shared by inference (P = double) and training
// (P = ad::Var). Time derivatives ride on Dual<P>, so the same expressions
// serve plain evaluation, reverse-mode weight gradients, and the mixed
// forward-over-reverse second order needed by u_t inside training residuals.

#include <vector>

#include "kapi/predictor.hpp"

namespace kapi::detail {

using ad::Dual;

template <class T>
T lift(ad::Tape& tape, double v);
template <>
inline double lift<double>(ad::Tape&, double v) { return v; }
template <>
inline ad::Var lift<ad::Var>(ad::Tape& tape, double v) { return tape.leaf(v); }

template <class P>
std::vector<P> lift_all(ad::Tape& tape, std::span<const double> xs) {
  std::vector<P> out;
  out.reserve(xs.size());
  for (double v : xs) out.push_back(lift<P>(tape, v));
  return out;
}

inline double value_of(const Dual<double>& t) { return t.v; }
inline ad::Var value_of(const Dual<ad::Var>& t) { return t.v; }

/// First dense layer of the dynamic net: time features carry tangents, the
/// task embedding does not, so the embedding block touches only the value lane.
template <class P>
void dense_mixed(std::span<const P> W, std::span<const P> b, std::span<const Dual<P>> ff,
                 std::span<const P> embed, std::vector<Dual<P>>& y, bool tanh_act) {
  using std::tanh;
  const std::size_t nff = ff.size(), ne = embed.size();
  const std::size_t nin = nff + ne;
  for (std::size_t o = 0; o < y.size(); ++o) {
    const P* row = W.data() + o * nin;
    Dual<P> acc = row[0] * ff[0];
    for (std::size_t i = 1; i < nff; ++i) acc = acc + row[i] * ff[i];
    P plain = acc.v;
    for (std::size_t i = 0; i < ne; ++i) plain = plain + row[nff + i] * embed[i];
    acc.v = plain + b[o];
    y[o] = tanh_act ? tanh(acc) : acc;
  }
}

// ---------------------------------------------------------------------------
// Poisson
// ---------------------------------------------------------------------------

template <class P>
struct PoissonGeom {
  std::vector<P> gate, mux, muy, sigma, coeff;
};

template <class P>
PoissonGeom<P> poisson_geometry_eval(const PredictorModel& model, const ad::ParamsView<P>& params,
                                     std::span<const P> lambda_norm) {
  using ad::logistic;
  using ad::softplus;
  const int M = model.kernel_count();
  const auto& nets = model.nets();

  std::vector<P> raw;
  if (model.config().single_instance) {
    auto arr = params.array(nets.raw_geom_id);
    raw.assign(arr.begin(), arr.end());
  } else {
    std::vector<P> s1, s2;
    raw.resize(static_cast<std::size_t>(4) * M);
    nets.cond.template forward<P, P>(params, lambda_norm, raw, s1, s2);
  }

  PoissonGeom<P> g;
  g.gate.reserve(M); g.mux.reserve(M); g.muy.reserve(M); g.sigma.reserve(M);
  for (int j = 0; j < M; ++j) {
    g.gate.push_back(logistic(raw[j]));
    g.mux.push_back(logistic(raw[M + j]));
    g.muy.push_back(logistic(raw[2 * M + j]));
    g.sigma.push_back(softplus(raw[3 * M + j] + kSigmaRawOffset) + geom::kWidthFloor);
  }
  auto c = params.array(nets.coeff_id);
  g.coeff.assign(c.begin(), c.end());
  return g;
}

template <class P>
struct PoissonPoint {
  P u, lap;
};

template <class P>
PoissonPoint<P> poisson_eval_point(const PoissonGeom<P>& g, double x, double y) {
  const double trial = poisson_trial(x, y);
  const double tdx2 = 2.0 * poisson_trial_dx(x, y);
  const double tdy2 = 2.0 * poisson_trial_dy(x, y);
  const double tlap = poisson_trial_lap(x, y);

  const std::size_t M = g.gate.size();
  auto e0 = geom::atom_eval_2d<P>(g.mux[0], g.muy[0], g.sigma[0], x, y);
  P gc = g.gate[0] * g.coeff[0];
  P s_phi = gc * e0.phi;
  P s_dx = gc * e0.dx;
  P s_dy = gc * e0.dy;
  P s_lap = gc * e0.lap;
  for (std::size_t j = 1; j < M; ++j) {
    auto e = geom::atom_eval_2d<P>(g.mux[j], g.muy[j], g.sigma[j], x, y);
    gc = g.gate[j] * g.coeff[j];
    s_phi = s_phi + gc * e.phi;
    s_dx = s_dx + gc * e.dx;
    s_dy = s_dy + gc * e.dy;
    s_lap = s_lap + gc * e.lap;
  }

  PoissonPoint<P> out;
  out.u = trial * s_phi;
  out.lap = trial * s_lap + tdx2 * s_dx + tdy2 * s_dy + tlap * s_phi;
  return out;
}

// ---------------------------------------------------------------------------
// Dynamic families
// ---------------------------------------------------------------------------

/// Per-task, time-independent context: normalized task features (AdvDiff,
/// VarAdv) or the encoder embedding plus gates (Advection).
template <class P>
struct DynContext {
  std::vector<P> embed;
  std::vector<P> gate;  // empty unless the family gates its atoms
};

template <class P>
DynContext<P> dynamic_context(const PredictorModel& model, const ad::ParamsView<P>& params,
                              std::span<const P> lambda_norm) {
  DynContext<P> ctx;
  const auto& nets = model.nets();
  if (model.family() == Family::Advection) {
    const int M = model.kernel_count();
    std::vector<P> s1, s2;
    if (model.config().single_instance) {
      auto raw = params.array(nets.gate_raw_id);
      for (int j = 0; j < M; ++j) ctx.gate.push_back(ad::logistic(raw[j]));
      // no embedding: the dynamic net sees time features only
    } else {
      nets.enc.template forward<P, P>(params, lambda_norm, ctx.embed, s1, s2);
      std::vector<P> raw;
      nets.gate_head.template forward<P, P>(params, std::span<const P>(ctx.embed), raw, s1, s2);
      for (int j = 0; j < M; ++j) ctx.gate.push_back(ad::logistic(raw[j]));
    }
  } else {
    ctx.embed.assign(lambda_norm.begin(), lambda_norm.end());
  }
  return ctx;
}

/// Per-(task, time) frozen basis state. `amp` is the gated amplitude and
/// `inv_h2` = 1/h^2, both precomputed once per time column.
template <class P>
struct DynStates {
  Dual<P> t;
  std::vector<Dual<P>> alpha, xi, h;
  std::vector<Dual<P>> amp, inv_h2;
};

template <class P>
DynStates<P> dynamic_states_eval(const PredictorModel& model, const ad::ParamsView<P>& params,
                                 const DynContext<P>& ctx, Dual<P> t) {
  using ad::logistic;
  using ad::softplus;
  using ad::sq;
  using std::tanh;
  const int M = model.kernel_count();
  const auto& nets = model.nets();
  const Family fam = model.family();

  std::vector<Dual<P>> ff;
  ad::time_features(t, model.config().fourier_k, ff);

  std::vector<Dual<P>> h1(static_cast<std::size_t>(model.config().dyn_width));
  dense_mixed<P>(params.array(nets.dyn.w_ids[0]), params.array(nets.dyn.b_ids[0]),
                 std::span<const Dual<P>>(ff), std::span<const P>(ctx.embed), h1, true);

  std::vector<Dual<P>> cur = std::move(h1), nxt;
  const std::size_t layers = nets.dyn.w_ids.size();
  for (std::size_t l = 1; l < layers; ++l) {
    const bool last = (l + 1 == layers);
    nxt.resize(last ? static_cast<std::size_t>(3 * M)
                    : static_cast<std::size_t>(nets.dyn.hidden[l]));
    ad::dense_apply<P, Dual<P>>(params.array(nets.dyn.w_ids[l]), params.array(nets.dyn.b_ids[l]),
                                std::span<const Dual<P>>(cur), std::span<Dual<P>>(nxt), !last);
    std::swap(cur, nxt);
  }
  std::vector<Dual<P>>& raw = cur;

  DynStates<P> st;
  st.t = t;
  st.alpha.reserve(M); st.xi.reserve(M); st.h.reserve(M);
  st.amp.reserve(M); st.inv_h2.reserve(M);
  std::span<const P> base_c, base_w;
  if (fam == Family::VarAdv) {
    base_c = params.array(nets.base_center_id);
    base_w = params.array(nets.base_width_id);
  }
  for (int j = 0; j < M; ++j) {
    st.alpha.push_back(raw[j]);
    Dual<P> xi_raw = raw[M + j];
    Dual<P> h_raw = raw[2 * M + j];
    switch (fam) {
      case Family::Advection:
        st.xi.push_back(xi_raw + kAdvCenterOffset);
        st.h.push_back(softplus(h_raw + kWidthRawOffset) + geom::kWidthFloor);
        break;
      case Family::AdvDiff:
        st.xi.push_back(logistic(xi_raw));
        st.h.push_back(softplus(h_raw + kWidthRawOffset) + geom::kWidthFloor);
        break;
      case Family::VarAdv:
        st.xi.push_back(base_c[j] + 0.5 * tanh(xi_raw));
        st.h.push_back(softplus(base_w[j] + h_raw) + geom::kWidthFloor);
        break;
      default:
        break;
    }
    st.amp.push_back(ctx.gate.empty() ? st.alpha[j] : ctx.gate[j] * st.alpha[j]);
    st.inv_h2.push_back(1.0 / sq(st.h[j]));
  }
  return st;
}

/// Initial profiles entering the residual-corrective hypotheses (constants
/// with respect to the model parameters).
struct Profile {
  double u0, du0, d2u0;
};

inline Profile advdiff_profile(double nu, double x) {
  const double d = x - 0.2;
  const double inv = 1.0 / nu;
  const double u = std::exp(-d * d * inv);
  return {u, -2.0 * d * inv * u, (4.0 * d * d * inv - 2.0) * inv * u};
}

inline Profile periodic_gaussian_profile(double x0, double nu, double x) {
  const double d = ad::wrap_unit(x - x0);
  const double inv = 1.0 / (nu * nu);
  const double u = std::exp(-0.5 * d * d * inv);
  return {u, -d * inv * u, (d * d * inv - 1.0) * inv * u};
}

template <class P>
struct TransportPoint {
  Dual<P> u;  // .d is u_t
  P ux;
  P uxx;
};

/// Evaluates the family hypothesis at (x, t) from precomputed states;
/// u_t arrives on the dual lane, spatial derivatives are closed-form.
template <class P>
TransportPoint<P> transport_eval_point(const PredictorModel& model, const TaskParams& task,
                                       const DynStates<P>& st, double x, bool need_uxx) {
  using ad::exp;
  using ad::sq;
  using ad::wrap_unit;
  using std::exp;
  const Family fam = model.family();
  const bool periodic = family_is_periodic(fam);
  const int M = model.kernel_count();

  Dual<P> sum{};
  P sum_x{}, sum_xx{};
  for (int j = 0; j < M; ++j) {
    Dual<P> delta = periodic ? wrap_unit(x - st.xi[j]) : (x - st.xi[j]);
    Dual<P> expo = (-0.5) * (sq(delta) * st.inv_h2[j]);
    Dual<P> term = st.amp[j] * exp(expo);

    P term_x = -(delta.v * st.inv_h2[j].v * term.v);
    if (j == 0) {
      sum = term;
      sum_x = term_x;
      if (need_uxx)
        sum_xx = (sq(delta.v) * st.inv_h2[j].v - 1.0) * (st.inv_h2[j].v * term.v);
    } else {
      sum = sum + term;
      sum_x = sum_x + term_x;
      if (need_uxx)
        sum_xx = sum_xx + (sq(delta.v) * st.inv_h2[j].v - 1.0) * (st.inv_h2[j].v * term.v);
    }
  }

  TransportPoint<P> out;
  if (fam == Family::Advection) {
    out.u = sum;
    out.ux = sum_x;
    out.uxx = sum_xx;
    return out;
  }

  // residual-corrective form u0 + t * sum
  const Profile prof = fam == Family::AdvDiff
                           ? advdiff_profile(task.nu, x)
                           : periodic_gaussian_profile(task.x0, task.nu, x);
  P tv = value_of(st.t);
  out.u = prof.u0 + st.t * sum;
  out.ux = prof.du0 + tv * sum_x;
  if (need_uxx) out.uxx = prof.d2u0 + tv * sum_xx;
  return out;
}

/// Variable transport speed a(x; beta) = 1 + beta sin(2 pi x).
inline double varadv_speed(double beta, double x) {
  return 1.0 + beta * std::sin(2.0 * M_PI * x);
}

}  // namespace kapi::detail
