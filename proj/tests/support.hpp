#pragma once

#include <cmath>
#include <functional>

#include "kapi/predictor.hpp"
#include "kapi/rng.hpp"

namespace kapi::test {

/// Central finite difference of a scalar function.
inline double central_diff(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// Five-point second derivative.
inline double central_diff2(const std::function<double(double)>& f, double x, double h = 1e-4) {
  return (-f(x + 2 * h) + 16 * f(x + h) - 30 * f(x) + 16 * f(x - h) - f(x - 2 * h)) /
         (12.0 * h * h);
}

inline double rel_err(double got, double want, double floor_ = 1e-9) {
  return std::abs(got - want) / std::max(std::abs(want), floor_);
}

inline TaskParams random_task(Family f, CounterRng& rng) {
  const auto r = ParamRanges::defaults(f);
  std::vector<double> lam;
  for (auto [lo, hi] : r.lohi) lam.push_back(rng.uniform(lo, hi));
  switch (f) {
    case Family::Poisson: return TaskParams::poisson(lam[0], lam[1], lam[2]);
    case Family::Advection: return TaskParams::advection(lam[0], lam[1]);
    case Family::AdvDiff: return TaskParams::advdiff(lam[0], lam[1]);
    case Family::VarAdv: return TaskParams::varadv(lam[0], lam[1], lam[2]);
  }
  return {};
}

/// Small random model for property tests (architecture scaled down).
inline PredictorModel small_model(Family f, std::uint64_t seed, int M = 6,
                                  bool single_instance = false) {
  ModelConfig c = ModelConfig::defaults(f);
  c.M = M;
  c.single_instance = single_instance;
  c.cond_width = 8;
  c.enc_width = 8;
  c.dyn_width = 12;
  return PredictorModel::create(c, seed);
}

/// Makes the dynamic-net output layer constant: zero weights, given biases for
/// (alpha_raw, xi_raw, h_raw) blocks. The basis then has d/dt = 0 everywhere.
inline void freeze_dynamic_net(PredictorModel& m, double alpha_raw, double xi_raw, double h_raw) {
  const auto& dyn = m.nets().dyn;
  const int last = static_cast<int>(dyn.w_ids.size()) - 1;
  for (double& w : m.params().array(dyn.w_ids[last])) w = 0.0;
  auto b = m.params().array(dyn.b_ids[last]);
  const int M = m.kernel_count();
  for (int j = 0; j < M; ++j) {
    b[j] = alpha_raw;
    b[M + j] = xi_raw;
    b[2 * M + j] = h_raw;
  }
}

}  // namespace kapi::test
