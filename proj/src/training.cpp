#include "kapi/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include "kapi/detail/predictor_eval.hpp"

namespace kapi {

using ad::Dual;
using ad::Var;

// ---------------------------------------------------------------------------
// task sampling
// ---------------------------------------------------------------------------

TaskDistribution TaskDistribution::defaults(Family f) {
  TaskDistribution d;
  d.family = f;
  const auto r = ParamRanges::defaults(f);
  for (std::size_t k = 0; k < r.lohi.size(); ++k)
    d.laws.push_back({r.lohi[k].first, r.lohi[k].second, false});
  switch (f) {
    case Family::Poisson:
      d.laws[2].log_scale = true;
      break;
    case Family::Advection:
      d.laws[1].log_scale = true;
      break;
    case Family::AdvDiff:
      d.laws[1].log_scale = true;
      // viscosity curriculum: easy range for the first half of training
      d.phases.push_back({0.5, 1, 0.03, 0.05});
      break;
    case Family::VarAdv:
      d.laws[1].log_scale = true;
      // width curriculum: broader packets first
      d.phases.push_back({0.4, 1, 0.06, 0.12});
      break;
  }
  return d;
}

ParamRanges TaskDistribution::ranges() const {
  ParamRanges r;
  for (const auto& law : laws) r.lohi.emplace_back(law.lo, law.hi);
  return r;
}

double sample_value(const ParamLaw& law, double u) {
  if (law.log_scale)
    return std::exp(std::log(law.lo) + u * (std::log(law.hi) - std::log(law.lo)));
  return law.lo + u * (law.hi - law.lo);
}

TaskParams sample_task(const TaskDistribution& dist, double epoch_fraction, CounterRng& rng) {
  std::vector<double> lam(dist.laws.size());
  for (std::size_t k = 0; k < dist.laws.size(); ++k) {
    ParamLaw law = dist.laws[k];
    for (const auto& phase : dist.phases) {
      if (phase.param == static_cast<int>(k) && epoch_fraction < phase.until) {
        law.lo = phase.lo;
        law.hi = phase.hi;
        break;
      }
    }
    lam[k] = sample_value(law, rng.uniform());
  }
  switch (dist.family) {
    case Family::Poisson: return TaskParams::poisson(lam[0], lam[1], lam[2]);
    case Family::Advection: return TaskParams::advection(lam[0], lam[1]);
    case Family::AdvDiff: return TaskParams::advdiff(lam[0], lam[1]);
    case Family::VarAdv: return TaskParams::varadv(lam[0], lam[1], lam[2]);
  }
  return {};
}

// ---------------------------------------------------------------------------
// collocation
// ---------------------------------------------------------------------------

namespace {

double clamp01(double v) { return std::clamp(v, 1e-3, 1.0 - 1e-3); }
double wrap01(double v) { return v - std::floor(v); }

struct PacketTrack {
  double width = 0.07;
  std::function<double(double)> center;  // transported packet center at time t
};

PacketTrack packet_track(Family family, const TaskParams& task) {
  PacketTrack p;
  switch (family) {
    case Family::Advection:
      p.width = task.nu;
      p.center = [task](double t) { return wrap01(task.x0 + t); };
      break;
    case Family::AdvDiff:
      p.width = std::sqrt(task.nu / 2.0);
      p.center = [task](double t) { return ref::kAdvDiffCenter + task.a * t; };
      break;
    case Family::VarAdv: {
      const double beta = task.beta, x0 = task.x0;
      p.width = task.nu;
      p.center = [beta, x0](double t) {
        // 8-step RK4 along dx/dt = 1 + beta sin(2 pi x)
        auto a = [beta](double x) { return 1.0 + beta * std::sin(2.0 * M_PI * x); };
        double x = x0;
        const double dt = t / 8.0;
        for (int s = 0; s < 8; ++s) {
          const double k1 = a(x), k2 = a(x + 0.5 * dt * k1), k3 = a(x + 0.5 * dt * k2),
                       k4 = a(x + dt * k3);
          x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        return wrap01(x);
      };
      break;
    }
    default:
      break;
  }
  return p;
}

std::vector<double> sample_xs(int n, double localized_fraction, double center, double spread,
                              bool periodic, CounterRng& rng) {
  std::vector<double> xs(n);
  const int n_loc = static_cast<int>(std::lround(n * localized_fraction));
  for (int i = 0; i < n; ++i) {
    if (i < n_loc) {
      const double v = center + spread * rng.normal();
      xs[i] = periodic ? wrap01(v) : clamp01(v);
    } else {
      xs[i] = rng.uniform();
    }
  }
  return xs;
}

}  // namespace

CollocationSet sample_collocation(Family family, const TaskParams& task,
                                  const CollocationCounts& counts, CounterRng& rng) {
  CollocationSet set;
  if (family == Family::Poisson) {
    const int n_loc = static_cast<int>(std::lround(counts.interior * counts.localized_fraction));
    const double spread = 2.0 * task.nu;
    set.interior_xy.reserve(counts.interior);
    for (int i = 0; i < counts.interior; ++i) {
      if (i < n_loc) {
        set.interior_xy.emplace_back(clamp01(task.x0 + spread * rng.normal()),
                                     clamp01(task.y0 + spread * rng.normal()));
      } else {
        set.interior_xy.emplace_back(rng.uniform(), rng.uniform());
      }
    }
    return set;
  }

  const bool periodic = family_is_periodic(family);
  const double horizon = family_horizon(family);
  const auto track = packet_track(family, task);
  const double spread = 2.0 * track.width;

  const int per_time = counts.interior / counts.n_times;
  for (int k = 0; k < counts.n_times; ++k) set.times.push_back(rng.uniform(0.0, horizon));
  for (int k = 0; k < counts.n_times; ++k)
    set.xs_per_time.push_back(sample_xs(per_time, counts.localized_fraction,
                                        track.center(set.times[k]), spread, periodic, rng));

  set.ic_xs =
      sample_xs(counts.ic, counts.localized_fraction, track.center(0.0), spread, periodic, rng);

  if (family == Family::Advection) {
    const int per_near = counts.near_ic / counts.near_times;
    for (int k = 0; k < counts.near_times; ++k)
      set.near_times.push_back(rng.uniform(0.0, counts.near_window));
    for (int k = 0; k < counts.near_times; ++k)
      set.near_xs.push_back(sample_xs(per_near, counts.localized_fraction,
                                      track.center(set.near_times[k]), spread, periodic, rng));
  }
  return set;
}

double width_target(Family family, const TaskParams& task, const LossWeights& w) {
  if (w.h_target >= 0.0) return w.h_target;
  switch (family) {
    case Family::Advection: return task.nu;
    case Family::AdvDiff: return std::sqrt(task.nu / 2.0);
    case Family::VarAdv: return 0.05;
    default: return 0.0;
  }
}

// ---------------------------------------------------------------------------
// loss assembly
// ---------------------------------------------------------------------------

namespace {

struct TaskLoss {
  Var interior, bc, ic, reg;
};

Var mean_sq(ad::Tape& tape, std::span<const Var> residuals) {
  if (residuals.empty()) return tape.leaf(0.0);
  Var acc = ad::sq(residuals[0]);
  for (std::size_t k = 1; k < residuals.size(); ++k) acc = acc + ad::sq(residuals[k]);
  return acc / static_cast<double>(residuals.size());
}

TaskLoss poisson_task_loss(const PredictorModel& model, const ad::ParamsView<Var>& params,
                           const TaskParams& task, const CollocationSet& colloc,
                           const LossWeights& w, ad::Tape& tape) {
  const auto lam = model.ranges().normalize(task.lambda());
  const auto lam_v = detail::lift_all<Var>(tape, lam);
  const auto geometry =
      detail::poisson_geometry_eval<Var>(model, params, std::span<const Var>(lam_v));

  const ref::PoissonSource src{task.x0, task.y0, task.nu, 1.0};
  std::vector<Var> residuals;
  residuals.reserve(colloc.interior_xy.size());
  for (const auto& [x, y] : colloc.interior_xy) {
    const auto e = detail::poisson_eval_point<Var>(geometry, x, y);
    const double f = ref::poisson_forcing({&src, 1}, x, y);
    residuals.push_back(-e.lap - f);
  }

  TaskLoss out;
  out.interior = mean_sq(tape, residuals);
  Var g_acc = ad::abs(geometry.gate[0]);
  for (std::size_t j = 1; j < geometry.gate.size(); ++j) g_acc = g_acc + ad::abs(geometry.gate[j]);
  out.reg = (w.lambda_sp / static_cast<double>(geometry.gate.size())) * g_acc;
  out.bc = tape.leaf(0.0);  // hard-enforced by the trial factor
  out.ic = tape.leaf(0.0);
  return out;
}

TaskLoss transport_task_loss(const PredictorModel& model, const ad::ParamsView<Var>& params,
                             const TaskParams& task, const CollocationSet& colloc,
                             const LossWeights& w, ad::Tape& tape,
                             ref::InitialCondition::Kind adv_ic) {
  const Family fam = model.family();
  const bool periodic = family_is_periodic(fam);
  const int M = model.kernel_count();

  const auto lam = model.ranges().normalize(task.lambda());
  const auto lam_v = detail::lift_all<Var>(tape, lam);
  const auto ctx = detail::dynamic_context<Var>(model, params, std::span<const Var>(lam_v));
  const Var one = tape.leaf(1.0);

  auto states_at = [&](double t) {
    return detail::dynamic_states_eval<Var>(model, params, ctx, Dual<Var>{tape.leaf(t), one});
  };
  auto residual_at = [&](const detail::DynStates<Var>& st, double x) -> Var {
    const auto p = detail::transport_eval_point<Var>(model, task, st, x, fam == Family::AdvDiff);
    switch (fam) {
      case Family::Advection: return p.u.d + p.ux;
      case Family::AdvDiff: return p.u.d + task.a * p.ux - task.nu * p.uxx;
      case Family::VarAdv: return p.u.d + detail::varadv_speed(task.beta, x) * p.ux;
      default: return p.u.d;
    }
  };

  std::vector<Var> interior, bc, ic;
  Var reg_center = tape.leaf(0.0), reg_amp = tape.leaf(0.0), reg_width = tape.leaf(0.0);
  const double h_tgt = width_target(fam, task, w);
  int reg_terms = 0;

  for (std::size_t k = 0; k < colloc.times.size(); ++k) {
    const auto st = states_at(colloc.times[k]);
    for (double x : colloc.xs_per_time[k]) interior.push_back(residual_at(st, x));
    // trace rows at the domain ends share this time column
    const auto a0 = detail::transport_eval_point<Var>(model, task, st, 0.0, false);
    const auto a1 = detail::transport_eval_point<Var>(model, task, st, 1.0, false);
    if (periodic) {
      bc.push_back(a0.u.v - a1.u.v);
      bc.push_back(a0.ux - a1.ux);
    } else {
      bc.push_back(a0.u.v - ref::advdiff_exact(task.a, task.nu, 0.0, colloc.times[k]));
      bc.push_back(a1.u.v - ref::advdiff_exact(task.a, task.nu, 1.0, colloc.times[k]));
    }
    for (int j = 0; j < M; ++j) {
      reg_center = reg_center + ad::abs(st.xi[j].d);
      reg_amp = reg_amp + ad::abs(st.amp[j].v);
      reg_width = reg_width + ad::sq(st.h[j].v - h_tgt);
    }
    reg_terms += M;
  }

  // near-initial residual window (advection)
  for (std::size_t k = 0; k < colloc.near_times.size(); ++k) {
    const auto st = states_at(colloc.near_times[k]);
    for (double x : colloc.near_xs[k]) interior.push_back(residual_at(st, x));
  }

  // initial condition
  {
    const auto st0 = states_at(0.0);
    const ref::InitialCondition ic_fn{fam == Family::Advection
                                          ? adv_ic
                                          : ref::InitialCondition::Kind::PeriodicGaussian,
                                      task.x0, task.nu};
    for (double x : colloc.ic_xs) {
      const auto p = detail::transport_eval_point<Var>(model, task, st0, x, false);
      const double u0 = fam == Family::AdvDiff ? detail::advdiff_profile(task.nu, x).u0 : ic_fn(x);
      ic.push_back(p.u.v - u0);
    }
  }

  TaskLoss out;
  out.interior = mean_sq(tape, interior);
  out.bc = mean_sq(tape, bc);
  out.ic = mean_sq(tape, ic);
  const double inv_terms = 1.0 / std::max(reg_terms, 1);
  Var l_center = inv_terms * reg_center + (w.eta * inv_terms) * reg_amp;
  Var l_width = inv_terms * reg_width;
  out.reg = w.lambda_c * l_center + w.lambda_w * l_width;
  return out;
}

}  // namespace

ad::Var meta_loss(const PredictorModel& model, std::span<const TaskParams> tasks,
                  std::span<const CollocationSet> colloc, const LossWeights& weights,
                  ad::Tape& tape, std::span<const ad::Var> staged, LossBreakdown* breakdown,
                  ref::InitialCondition::Kind adv_ic) {
  if (tasks.empty()) throw Error("meta_loss: empty task batch");
  const ad::ParamsView<Var> params(model.params(), staged);

  Var total = tape.leaf(0.0);
  LossBreakdown bd;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const TaskLoss tl =
        model.family() == Family::Poisson
            ? poisson_task_loss(model, params, tasks[k], colloc[k], weights, tape)
            : transport_task_loss(model, params, tasks[k], colloc[k], weights, tape, adv_ic);
    Var task_total = weights.w_int * tl.interior + weights.w_bc * tl.bc + weights.w_ic * tl.ic +
                     weights.w_reg * tl.reg;
    if (!std::isfinite(task_total.val()))
      throw NaNDetected(std::string("non-finite loss on a ") + family_name(model.family()) +
                        " task");
    total = total + task_total;
    bd.interior += tl.interior.val();
    bd.bc += tl.bc.val();
    bd.ic += tl.ic.val();
    bd.reg += tl.reg.val();
  }
  total = total / static_cast<double>(tasks.size());
  bd.interior /= static_cast<double>(tasks.size());
  bd.bc /= static_cast<double>(tasks.size());
  bd.ic /= static_cast<double>(tasks.size());
  bd.reg /= static_cast<double>(tasks.size());
  bd.total = total.val();
  if (breakdown) *breakdown = bd;
  return total;
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg) {
  m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  v_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
}

void Adam::step(std::span<double> params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || static_cast<Eigen::Index>(params.size()) != m_.size())
    throw Error("adam: size mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Eigen::Index i = 0; i < m_.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    if (cfg_.weight_decay > 0.0 && !mask_.empty() && mask_[i])
      params[i] -= cfg_.lr * cfg_.weight_decay * params[i];
  }
}

// ---------------------------------------------------------------------------
// trainers
// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> poisson_gate_mask(const PredictorModel& model) {
  std::vector<std::uint8_t> mask(model.params().size(), 0);
  const int M = model.kernel_count();
  const auto& nets = model.nets();
  if (model.config().single_instance) {
    const auto& info = model.params().info(nets.raw_geom_id);
    for (int j = 0; j < M; ++j) mask[info.offset + j] = 1;
    return mask;
  }
  // rows [0, M) of the conditioning output layer produce the gate logits
  const int last = static_cast<int>(nets.cond.w_ids.size()) - 1;
  const auto& winfo = model.params().info(nets.cond.w_ids[last]);
  const auto& binfo = model.params().info(nets.cond.b_ids[last]);
  for (int j = 0; j < M; ++j) {
    for (int c = 0; c < winfo.cols; ++c)
      mask[winfo.offset + static_cast<std::size_t>(j) * winfo.cols + c] = 1;
    mask[binfo.offset + j] = 1;
  }
  return mask;
}

TrainResult train_impl(const TrainConfig& config, const TaskParams* fixed_task) {
  const auto t_begin = std::chrono::steady_clock::now();
  const Family family = config.arch.family;

  PredictorModel model = PredictorModel::create(config.arch, config.seed, config.dist.ranges());
  auto& store = model.params();

  AdamConfig acfg;
  acfg.lr = config.lr;
  acfg.weight_decay = family == Family::Poisson ? config.gate_weight_decay : 0.0;
  Adam opt(store.size(), acfg);
  if (family == Family::Poisson && acfg.weight_decay > 0.0)
    opt.set_decay_mask(poisson_gate_mask(model));

  CounterRng rng(config.seed, 1);  // training stream
  const int batch = fixed_task ? 1 : std::max(config.tasks_per_batch, 1);

  ad::Tape tape;
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(std::max(config.epochs, 0)));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double frac = static_cast<double>(epoch) / config.epochs;
    Eigen::VectorXd gsum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(store.size()));
    double lsum = 0.0;
    for (int b = 0; b < batch; ++b) {
      const TaskParams task = fixed_task ? *fixed_task : sample_task(config.dist, frac, rng);
      const CollocationSet colloc = sample_collocation(family, task, config.colloc, rng);
      tape.clear();
      const auto staged = ad::stage(tape, store);
      try {
        const Var loss = meta_loss(model, {&task, 1}, {&colloc, 1}, config.weights, tape, staged,
                                   nullptr, config.adv_ic);
        gsum += ad::grad(loss, staged);
        lsum += loss.val();
      } catch (NaNDetected e) {
        e.epoch = epoch;
        throw e;
      }
    }
    gsum /= batch;
    opt.step(store.flat(), gsum);
    history.push_back(lsum / batch);
  }

  TrainResult out{std::move(model), std::move(history), 0.0};
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return out;
}

}  // namespace

TrainConfig default_train_config(Family f) {
  TrainConfig c;
  c.arch = ModelConfig::defaults(f);
  c.dist = TaskDistribution::defaults(f);
  switch (f) {
    case Family::Poisson: c.epochs = 2000; c.lr = 1e-3; break;
    case Family::Advection: c.epochs = 5000; c.lr = 1e-3; break;
    case Family::AdvDiff: c.epochs = 5000; c.lr = 1e-3; break;
    case Family::VarAdv: c.epochs = 5000; c.lr = 5e-4; break;
  }
  return c;
}

TrainResult train_predictor(const TrainConfig& config) { return train_impl(config, nullptr); }

TrainResult train_single_instance(const TaskParams& task, const TrainConfig& config) {
  if (task.family != Family::Poisson && task.family != Family::Advection)
    throw ConfigError("single-instance trainer supports the Poisson and advection families");
  TrainConfig cfg = config;
  cfg.arch.single_instance = true;
  cfg.arch.family = task.family;
  cfg.arch.M = config.arch.family == task.family ? config.arch.M
                                                 : ModelConfig::defaults(task.family).M;
  return train_impl(cfg, &task);
}

void write_loss_history(const std::string& path, std::span<const double> history) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  char buf[64];
  for (std::size_t e = 0; e < history.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu %.17g\n", e, history[e]);
    os << buf;
  }
}

}  // namespace kapi
