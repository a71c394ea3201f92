#pragma once

#include <cstdint>
#include <vector>

#include "kapi/predictor.hpp"
#include "kapi/reference.hpp"
#include "kapi/rng.hpp"

namespace kapi {

/// Sampling law for one task parameter.
struct ParamLaw {
  double lo = 0.0, hi = 1.0;
  bool log_scale = false;
};

/// Restricts one parameter to a sub-range while epoch_fraction < until.
struct CurriculumPhase {
  double until = 1.0;
  int param = -1;
  double lo = 0.0, hi = 1.0;
};

struct TaskDistribution {
  Family family = Family::Poisson;
  std::vector<ParamLaw> laws;  // in TaskParams::lambda() order
  std::vector<CurriculumPhase> phases;

  static TaskDistribution defaults(Family f);
  ParamRanges ranges() const;
};

double sample_value(const ParamLaw& law, double u);
TaskParams sample_task(const TaskDistribution& dist, double epoch_fraction, CounterRng& rng);

struct CollocationCounts {
  int interior = 256;
  int n_times = 16;  // distinct interior times (transport families)
  int ic = 64;
  int bc = 32;
  int near_ic = 64;
  int near_times = 8;
  double near_window = 0.1;
  double localized_fraction = 0.5;
};

/// Collocation points for one task. Transport families are organized
/// time-major so the dynamic net runs once per distinct time.
struct CollocationSet {
  std::vector<std::pair<double, double>> interior_xy;  // Poisson
  std::vector<double> times;
  std::vector<std::vector<double>> xs_per_time;
  std::vector<double> ic_xs;
  std::vector<double> near_times;  // advection only
  std::vector<std::vector<double>> near_xs;
};

CollocationSet sample_collocation(Family family, const TaskParams& task,
                                  const CollocationCounts& counts, CounterRng& rng);

struct LossWeights {
  double w_int = 1.0, w_bc = 10.0, w_ic = 10.0, w_reg = 1.0;
  double lambda_sp = 1e-3;  // Poisson gate sparsity
  double lambda_c = 1e-3, lambda_w = 1e-3, eta = 1e-2;
  double h_target = -1.0;  // < 0: family rule (nu, sqrt(nu/2), 0.05)
};

double width_target(Family family, const TaskParams& task, const LossWeights& w);

struct LossBreakdown {
  double total = 0, interior = 0, bc = 0, ic = 0, reg = 0;
};

/// Physics-informed meta-training objective over a task batch, built on
/// `tape` against the staged parameters. Throws NaNDetected if any value
/// turns non-finite.
ad::Var meta_loss(const PredictorModel& model, std::span<const TaskParams> tasks,
                  std::span<const CollocationSet> colloc, const LossWeights& weights,
                  ad::Tape& tape, std::span<const ad::Var> staged,
                  LossBreakdown* breakdown = nullptr,
                  ref::InitialCondition::Kind adv_ic = ref::InitialCondition::Kind::PeriodicGaussian);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied only to masked entries
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg);
  void set_decay_mask(std::vector<std::uint8_t> mask) { mask_ = std::move(mask); }
  void step(std::span<double> params, const Eigen::VectorXd& grad);
  long step_count() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
  std::vector<std::uint8_t> mask_;
};

struct TrainConfig {
  int epochs = 2000;
  double lr = 1e-3;
  int tasks_per_batch = 4;
  std::uint64_t seed = 0;
  ModelConfig arch;
  TaskDistribution dist;
  CollocationCounts colloc;
  LossWeights weights;
  double gate_weight_decay = 1e-4;  // Poisson gate rows
  ref::InitialCondition::Kind adv_ic = ref::InitialCondition::Kind::PeriodicGaussian;
};

/// Appendix defaults: epochs/lr/batch and architecture per family.
TrainConfig default_train_config(Family f);

struct TrainResult {
  PredictorModel model;
  std::vector<double> loss_history;
  double wall_seconds = 0.0;
};

TrainResult train_predictor(const TrainConfig& config);

/// Shallow per-task trainer: same hypothesis and loss machinery, parameters
/// optimized directly for one fixed instance (no conditioning network).
TrainResult train_single_instance(const TaskParams& task, const TrainConfig& config);

/// Loss-history text table (epoch, loss).
void write_loss_history(const std::string& path, std::span<const double> history);

}  // namespace kapi
