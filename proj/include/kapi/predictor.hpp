#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kapi/geometry.hpp"
#include "kapi/net.hpp"

namespace kapi {

enum class Family { Poisson, Advection, AdvDiff, VarAdv };

const char* family_name(Family f);
Family family_from_name(const std::string& name);
bool family_is_dynamic(Family f);
bool family_is_periodic(Family f);
/// Final time of the space-time domain (1.0, except 0.5 for AdvDiff).
double family_horizon(Family f);

/// PDE parameter vector for one family instance.
struct TaskParams {
  Family family = Family::Poisson;
  double x0 = 0.0, y0 = 0.0, nu = 0.0, a = 0.0, beta = 0.0;

  static TaskParams poisson(double x0, double y0, double nu) {
    return {Family::Poisson, x0, y0, nu, 0.0, 0.0};
  }
  static TaskParams advection(double x0, double nu) {
    return {Family::Advection, x0, 0.0, nu, 0.0, 0.0};
  }
  static TaskParams advdiff(double a, double nu) {
    return {Family::AdvDiff, 0.0, 0.0, nu, a, 0.0};
  }
  static TaskParams varadv(double x0, double nu, double beta) {
    return {Family::VarAdv, x0, 0.0, nu, 0.0, beta};
  }

  /// Canonical flat order fed to the conditioning networks:
  /// Poisson (x0, y0, nu); Advection (x0, nu); AdvDiff (a, nu);
  /// VarAdv (x0, nu, beta).
  std::vector<double> lambda() const;
};

/// Per-parameter training ranges, in TaskParams::lambda() order; used both to
/// normalize network inputs to [-1, 1] and to tag in/out-of-range regimes.
struct ParamRanges {
  std::vector<std::pair<double, double>> lohi;
  static ParamRanges defaults(Family f);
  std::vector<double> normalize(std::span<const double> lam) const;
  bool contains(std::span<const double> lam) const;
};

struct ModelConfig {
  Family family = Family::Poisson;
  int M = 128;
  int fourier_k = 4;
  /// Direct per-task parameters instead of a conditioning network.
  bool single_instance = false;

  int cond_width = 64, cond_depth = 2;  // Poisson conditioning net
  int enc_width = 64;                   // Advection task encoder
  int dyn_width = 96, dyn_depth = 2;    // dynamic basis net
  double base_width = 0.08;             // VarAdv base dictionary width

  static ModelConfig defaults(Family f);
};

/// Task-adaptive basis description generated by the conditioning network.
/// For Poisson (static) the planar atoms are materialized; for the unsteady
/// families the geometry is time-dynamic and is sampled through
/// PredictorModel::dynamic_states.
struct BasisGeometry {
  Family family;
  int M = 0;
  std::vector<double> gate;               // in (0, 1)
  std::vector<double> coeff;              // shared c_j (Poisson only)
  std::vector<geom::PlanarAtom> planar;   // Poisson only
  bool dynamic = false;
};

struct PoissonSample {
  double u, lap;
};
struct TransportSample {
  double u, ux, uxx, ut;
};

class PredictorModel {
 public:
  static PredictorModel create(const ModelConfig& config, std::uint64_t init_seed,
                               ParamRanges ranges = {});

  Family family() const { return config_.family; }
  int kernel_count() const { return config_.M; }
  const ModelConfig& config() const { return config_; }
  const ParamRanges& ranges() const { return ranges_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  BasisGeometry generate_geometry(const TaskParams& task) const;

  /// Gates for dynamic families (Poisson gates come with the geometry).
  std::vector<double> gates(const TaskParams& task) const;

  /// Frozen per-atom state of the dynamic basis at time t, including the
  /// exact d/dt of amplitudes, centers and widths (forward-mode duals).
  std::vector<geom::DynamicAtomState> dynamic_states(const TaskParams& task, double t) const;

  PoissonSample eval_poisson(const TaskParams& task, double x, double y) const;
  TransportSample eval_advection(const TaskParams& task, double x, double t) const;
  TransportSample eval_advdiff(const TaskParams& task, double x, double t) const;
  TransportSample eval_varadv(const TaskParams& task, double x, double t) const;
  TransportSample eval_transport(const TaskParams& task, double x, double t) const;

  /// Same evaluation given precomputed states for one time column.
  PoissonSample eval_poisson_geom(const BasisGeometry& geom, double x, double y) const;
  TransportSample eval_transport_states(const TaskParams& task,
                                        std::span<const geom::DynamicAtomState> states,
                                        std::span<const double> gates, double x, double t) const;

  /// "KAPI1" checkpoint container (little-endian, self-describing).
  void save(const std::string& path) const;
  static PredictorModel load(const std::string& path);

  // --- structural description used by the templated evaluation core ---
  struct Nets {
    ad::Mlp cond;          // Poisson conditioning net (meta)
    int coeff_id = -1;     // Poisson shared coefficients
    int raw_geom_id = -1;  // single-instance Poisson raw geometry (4M)
    ad::Mlp enc;           // Advection task encoder
    ad::Mlp gate_head;     // Advection gate head (enc_width -> M)
    int gate_raw_id = -1;  // single-instance advection raw gates
    ad::Mlp dyn;           // dynamic net
    int base_center_id = -1, base_width_id = -1;  // VarAdv base dictionary
  };
  const Nets& nets() const { return nets_; }

 private:
  PredictorModel() = default;

  ModelConfig config_;
  ParamRanges ranges_;
  ad::ParamStore params_;
  Nets nets_;
};

/// Squash-map offsets: initial widths start near useful scales instead of
/// softplus(0) ~ 0.69.
inline constexpr double kSigmaRawOffset = -1.8;   // Poisson widths ~ 0.15
inline constexpr double kWidthRawOffset = -2.25;  // transport widths ~ 0.10
inline constexpr double kAdvCenterOffset = 0.5;   // advection centers start mid-domain

/// x(1-x)y(1-y) trial factor and its derivatives (hard Dirichlet boundary).
inline double poisson_trial(double x, double y) { return x * (1.0 - x) * y * (1.0 - y); }
inline double poisson_trial_dx(double x, double y) { return (1.0 - 2.0 * x) * y * (1.0 - y); }
inline double poisson_trial_dy(double x, double y) { return x * (1.0 - x) * (1.0 - 2.0 * y); }
inline double poisson_trial_lap(double x, double y) {
  return -2.0 * y * (1.0 - y) - 2.0 * x * (1.0 - x);
}

}  // namespace kapi
