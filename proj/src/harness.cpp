#include "kapi/harness.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace kapi {

namespace fs = std::filesystem;

double relative_l2(const ref::SampledField& pred, const ref::SampledField& ref_field) {
  if (!(pred.grid == ref_field.grid)) throw GridMismatch("relative_l2: grid specs differ");
  const double denom = ref_field.values.norm();
  if (denom == 0.0) throw ZeroReference("relative_l2: reference field has zero norm");
  return (pred.values - ref_field.values).norm() / denom;
}

ref::GridSpec family_eval_grid(Family f) {
  if (f == Family::Poisson) return {101, 101, 0.0, 1.0, 0.0, 1.0, false};
  return {201, 101, 0.0, 1.0, 0.0, family_horizon(f), family_is_periodic(f)};
}

ref::GridSpec eval_grid(const RunConfig& config) {
  ref::GridSpec g = family_eval_grid(config.family);
  if (config.eval_nx > 1) g.nx = config.eval_nx;
  if (config.eval_nt > 1) g.ny = config.eval_nt;
  return g;
}

// ---------------------------------------------------------------------------
// fields
// ---------------------------------------------------------------------------

ref::SampledField reference_field(Family family, const TaskParams& task,
                                  const ref::GridSpec& grid,
                                  ref::InitialCondition::Kind adv_ic) {
  ref::SampledField out;
  out.grid = grid;
  out.values.resize(static_cast<Eigen::Index>(grid.nx) * grid.ny);

  switch (family) {
    case Family::Poisson: {
      if (grid.nx != grid.ny)
        throw ConfigError("poisson evaluation grid must be square");
      // finest FD grid that contains the evaluation nodes, at least 201
      int k = (200 + grid.nx - 2) / (grid.nx - 1);
      const int n_ref = k * (grid.nx - 1) + 1;
      const ref::PoissonSource src{task.x0, task.y0, task.nu, 1.0};
      const auto fd = ref::poisson_fd({&src, 1}, n_ref);
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i) out.at(i, j) = fd.at(i * k, j * k);
      return out;
    }
    case Family::Advection: {
      const ref::InitialCondition ic{adv_ic, task.x0, task.nu};
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
          out.at(i, j) = ref::advection_exact(ic, grid.x(i), grid.y(j));
      return out;
    }
    case Family::AdvDiff: {
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
          out.at(i, j) = ref::advdiff_exact(task.a, task.nu, grid.x(i), grid.y(j));
      return out;
    }
    case Family::VarAdv: {
      const ref::InitialCondition ic{ref::InitialCondition::Kind::PeriodicGaussian, task.x0,
                                     task.nu};
      const ref::CharacteristicMap map(task.beta, 1e-10);
      for (int j = 0; j < grid.ny; ++j)
        for (int i = 0; i < grid.nx; ++i)
          out.at(i, j) = map.solution(ic, grid.x(i), grid.y(j));
      return out;
    }
  }
  throw Error("reference_field: unknown family");
}

ref::SampledField predictor_field(const PredictorModel& model, const TaskParams& task,
                                  const ref::GridSpec& grid) {
  ref::SampledField out;
  out.grid = grid;
  out.values.resize(static_cast<Eigen::Index>(grid.nx) * grid.ny);
  if (model.family() == Family::Poisson) {
    const auto g = model.generate_geometry(task);
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i)
        out.at(i, j) = model.eval_poisson_geom(g, grid.x(i), grid.y(j)).u;
    return out;
  }
  const auto gates = model.gates(task);
  for (int j = 0; j < grid.ny; ++j) {
    const double t = grid.y(j);
    const auto states = model.dynamic_states(task, t);
    for (int i = 0; i < grid.nx; ++i)
      out.at(i, j) = model.eval_transport_states(task, states, gates, grid.x(i), t).u;
  }
  return out;
}

ref::SampledField corrector_field(const CorrectorDictionary& dict, const ref::GridSpec& grid) {
  ref::SampledField out;
  out.grid = grid;
  out.values.resize(static_cast<Eigen::Index>(grid.nx) * grid.ny);
  for (int j = 0; j < grid.ny; ++j)
    for (int i = 0; i < grid.nx; ++i) out.at(i, j) = eval_corrector(dict, grid.x(i), grid.y(j));
  return out;
}

// ---------------------------------------------------------------------------
// experiment drivers
// ---------------------------------------------------------------------------

namespace {

std::string default_regime(const RunConfig& config, const TaskParams& task) {
  const auto lam = task.lambda();
  return config.train.dist.ranges().contains(lam) ? "in-range" : "out-of-range";
}

ErrorReport base_report(const RunConfig& config, const TaskSpec& spec, double train_seconds) {
  ErrorReport r;
  r.family = config.family;
  r.task = spec.task;
  r.regime = spec.regime.empty() ? default_regime(config, spec.task) : spec.regime;
  r.train_s = train_seconds;
  r.seed = config.seed;
  return r;
}

}  // namespace

std::vector<ErrorReport> run_predictor_corrector(const RunConfig& config,
                                                 const PredictorModel& model,
                                                 double train_seconds) {
  const auto grid = eval_grid(config);
  std::vector<ErrorReport> reports;
  for (const auto& spec : config.tasks) {
    ErrorReport r = base_report(config, spec, train_seconds);
    const auto u_ref = reference_field(config.family, spec.task, grid, config.train.adv_ic);
    const auto u_pred = predictor_field(model, spec.task, grid);
    r.e_pred = relative_l2(u_pred, u_ref);

    CorrectorConfig corr = config.corr;
    corr.adv_ic = config.train.adv_ic;
    const auto result = correct(model, spec.task, corr);
    const auto u_corr = corrector_field(result.dict, grid);
    r.e_corr = relative_l2(u_corr, u_ref);
    r.m_inh = result.dict.m_inh;
    r.m_ref = result.dict.m_ref;
    r.m_bg = result.dict.m_bg;
    r.ridge = result.dict.ridge_used;
    r.solve_s = result.solve_seconds;
    reports.push_back(std::move(r));
  }
  return reports;
}

std::vector<ErrorReport> ablate_uniform_grid(const RunConfig& config, const PredictorModel& model,
                                             double train_seconds) {
  const auto grid = eval_grid(config);
  std::vector<ErrorReport> reports;
  for (const auto& spec : config.tasks) {
    const auto u_ref = reference_field(config.family, spec.task, grid, config.train.adv_ic);
    const auto u_pred = predictor_field(model, spec.task, grid);
    const double e_pred = relative_l2(u_pred, u_ref);

    CorrectorConfig guided_cfg = config.corr;
    guided_cfg.adv_ic = config.train.adv_ic;
    const auto guided = correct(model, spec.task, guided_cfg);
    ErrorReport g = base_report(config, spec, train_seconds);
    g.regime += "/guided";
    g.e_pred = e_pred;
    g.e_corr = relative_l2(corrector_field(guided.dict, grid), u_ref);
    g.m_inh = guided.dict.m_inh;
    g.m_ref = guided.dict.m_ref;
    g.m_bg = guided.dict.m_bg;
    g.ridge = guided.dict.ridge_used;
    g.solve_s = guided.solve_seconds;
    reports.push_back(g);

    ErrorReport best;
    double best_err = std::numeric_limits<double>::infinity();
    for (int res : config.grid_sweep) {
      CorrectorConfig uni = guided_cfg;
      uni.use_inherited = false;
      uni.use_refinement = false;
      uni.bg_nx = res;
      uni.bg_nt = config.family == Family::Poisson ? res : std::max(2, (res + 1) / 2);
      const auto r = correct(model, spec.task, uni);
      ErrorReport row = base_report(config, spec, train_seconds);
      row.regime += "/uniform-" + std::to_string(res);
      row.e_pred = e_pred;
      row.e_corr = relative_l2(corrector_field(r.dict, grid), u_ref);
      row.m_inh = r.dict.m_inh;
      row.m_ref = r.dict.m_ref;
      row.m_bg = r.dict.m_bg;
      row.ridge = r.dict.ridge_used;
      row.solve_s = r.solve_seconds;
      reports.push_back(row);
      if (row.e_corr < best_err) {
        best_err = row.e_corr;
        best = row;
        best.regime = (spec.regime.empty() ? default_regime(config, spec.task) : spec.regime) +
                      "/uniform-best";
      }
    }
    if (std::isfinite(best_err)) reports.push_back(best);
  }
  return reports;
}

std::vector<InstanceReport> ablate_single_instance(const RunConfig& config,
                                                   const PredictorModel& kapi_model,
                                                   double kapi_train_seconds) {
  const auto grid = eval_grid(config);
  std::vector<InstanceReport> reports;
  for (const auto& spec : config.tasks) {
    const auto u_ref = reference_field(config.family, spec.task, grid, config.train.adv_ic);

    InstanceReport kapi;
    kapi.family = config.family;
    kapi.task = spec.task;
    kapi.method = "kapi";
    kapi.train_s = kapi_train_seconds;
    kapi.retraining_per_task = false;
    {
      const auto t0 = std::chrono::steady_clock::now();
      const auto u = predictor_field(kapi_model, spec.task, grid);
      kapi.infer_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      kapi.rel_l2 = relative_l2(u, u_ref);
    }
    reports.push_back(kapi);

    TrainConfig icfg = config.train;
    icfg.seed = config.seed;
    const auto trained = train_single_instance(spec.task, icfg);
    InstanceReport inst;
    inst.family = config.family;
    inst.task = spec.task;
    inst.method = "single-instance";
    inst.train_s = trained.wall_seconds;
    inst.retraining_per_task = true;
    {
      const auto t0 = std::chrono::steady_clock::now();
      const auto u = predictor_field(trained.model, spec.task, grid);
      inst.infer_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      inst.rel_l2 = relative_l2(u, u_ref);
    }
    reports.push_back(inst);
  }
  return reports;
}

// ---------------------------------------------------------------------------
// exports
// ---------------------------------------------------------------------------

namespace {

void fmt_float(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

void export_geometry(const std::string& path, const PredictorModel& model, const TaskParams& task,
                     int snapshots) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "id,provenance,center_x,center_y,width_x,width_y,gate,coeff\n";

  if (model.family() == Family::Poisson) {
    const auto g = model.generate_geometry(task);
    double max_c = 0.0;
    for (int j = 0; j < g.M; ++j) max_c = std::max(max_c, std::abs(g.gate[j] * g.coeff[j]));
    for (int j = 0; j < g.M; ++j) {
      os << j << ",predictor,";
      fmt_float(os, g.planar[j].mu_x); os << ',';
      fmt_float(os, g.planar[j].mu_y); os << ',';
      fmt_float(os, g.planar[j].sigma); os << ',';
      fmt_float(os, g.planar[j].sigma); os << ',';
      fmt_float(os, g.gate[j]); os << ',';
      fmt_float(os, max_c > 0 ? std::abs(g.gate[j] * g.coeff[j]) / max_c : 0.0);
      os << '\n';
    }
    return;
  }

  const auto gates = model.gates(task);
  const double horizon = family_horizon(model.family());
  std::vector<std::vector<geom::DynamicAtomState>> states;
  for (int s = 0; s < snapshots; ++s)
    states.push_back(model.dynamic_states(task, horizon * s / (snapshots - 1)));
  double max_c = 0.0;
  for (int s = 0; s < snapshots; ++s)
    for (int j = 0; j < model.kernel_count(); ++j)
      max_c = std::max(max_c, std::abs(gates[j] * states[s][j].alpha));
  for (int j = 0; j < model.kernel_count(); ++j) {
    for (int s = 0; s < snapshots; ++s) {
      const auto& st = states[s][j];
      os << j << ",predictor,";
      fmt_float(os, st.xi - std::floor(st.xi)); os << ',';
      fmt_float(os, horizon * s / (snapshots - 1)); os << ',';
      fmt_float(os, st.h); os << ',';
      os << "0,";
      fmt_float(os, gates[j]); os << ',';
      fmt_float(os, max_c > 0 ? std::abs(gates[j] * st.alpha) / max_c : 0.0);
      os << '\n';
    }
  }
}

void export_geometry(const std::string& path, const CorrectorDictionary& dict) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "id,provenance,center_x,center_y,width_x,width_y,gate,coeff\n";
  const double max_c = dict.coeff.size() ? dict.coeff.cwiseAbs().maxCoeff() : 0.0;
  for (int m = 0; m < dict.size(); ++m) {
    const auto& a = dict.atoms[m];
    os << m << ',' << provenance_name(a.prov) << ',';
    if (a.planar) {
      fmt_float(os, a.p.mu_x); os << ',';
      fmt_float(os, a.p.mu_y); os << ',';
      fmt_float(os, a.p.sigma); os << ',';
      fmt_float(os, a.p.sigma); os << ',';
    } else {
      fmt_float(os, a.st.xi); os << ',';
      fmt_float(os, a.st.tau); os << ',';
      fmt_float(os, a.st.h); os << ',';
      fmt_float(os, a.st.s); os << ',';
    }
    fmt_float(os, a.gate); os << ',';
    fmt_float(os, max_c > 0 ? std::abs(dict.coeff(m)) / max_c : 0.0);
    os << '\n';
  }
}

void write_reports_csv(const std::string& path, std::span<const ErrorReport> reports) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "family,p1,p2,p3,regime,e_pred,e_corr,m_inh,m_ref,m_bg,ridge,train_s,solve_s,seed\n";
  for (const auto& r : reports) {
    const auto lam = r.task.lambda();
    os << family_name(r.family) << ',';
    for (int k = 0; k < 3; ++k) {
      if (k < static_cast<int>(lam.size())) fmt_float(os, lam[k]);
      os << ',';
    }
    os << r.regime << ',';
    fmt_float(os, r.e_pred); os << ',';
    fmt_float(os, r.e_corr); os << ',';
    os << r.m_inh << ',' << r.m_ref << ',' << r.m_bg << ',';
    fmt_float(os, r.ridge); os << ',';
    fmt_float(os, r.train_s); os << ',';
    fmt_float(os, r.solve_s); os << ',';
    os << r.seed << '\n';
  }
}

void write_instance_csv(const std::string& path, std::span<const InstanceReport> reports) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "family,p1,p2,p3,method,rel_l2,train_s,infer_s,retraining_per_new_task\n";
  for (const auto& r : reports) {
    const auto lam = r.task.lambda();
    os << family_name(r.family) << ',';
    for (int k = 0; k < 3; ++k) {
      if (k < static_cast<int>(lam.size())) fmt_float(os, lam[k]);
      os << ',';
    }
    os << r.method << ',';
    fmt_float(os, r.rel_l2); os << ',';
    fmt_float(os, r.train_s); os << ',';
    fmt_float(os, r.infer_s); os << ',';
    os << (r.retraining_per_task ? "Yes" : "No") << '\n';
  }
}

// ---------------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

ref::InitialCondition::Kind parse_ic_kind(const std::string& v) {
  if (v == "gaussian") return ref::InitialCondition::Kind::PeriodicGaussian;
  if (v == "mexican-hat") return ref::InitialCondition::Kind::MexicanHat;
  throw ConfigError("unknown initial condition kind: " + v);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  // first pass: the family determines every default
  Family family = Family::Poisson;
  bool family_seen = false;
  std::istringstream scan(text);
  std::string line;
  while (std::getline(scan, line)) {
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    if (trim(line.substr(0, eq)) == "family") {
      family = family_from_name(trim(line.substr(eq + 1)));
      family_seen = true;
    }
  }
  if (!family_seen) throw ConfigError("config must set `family`");

  RunConfig cfg;
  cfg.family = family;
  cfg.train = default_train_config(family);
  cfg.corr = default_corrector_config(family);
  cfg.raw_text = text;

  std::istringstream is(text);
  while (std::getline(is, line)) {
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));

    try {
      if (key == "family") {
        // handled in the first pass
      } else if (key == "seed") {
        cfg.seed = std::stoull(val);
      } else if (key == "out") {
        cfg.out_dir = val;
      } else if (key == "checkpoint") {
        cfg.checkpoint = val;
      } else if (key == "task") {
        auto toks = split_ws(val);
        const std::size_t np = ParamRanges::defaults(family).lohi.size();
        if (toks.size() < np) throw ConfigError("task line needs " + std::to_string(np) + " values");
        std::vector<double> lam;
        for (std::size_t k = 0; k < np; ++k) lam.push_back(std::stod(toks[k]));
        TaskSpec spec;
        switch (family) {
          case Family::Poisson: spec.task = TaskParams::poisson(lam[0], lam[1], lam[2]); break;
          case Family::Advection: spec.task = TaskParams::advection(lam[0], lam[1]); break;
          case Family::AdvDiff: spec.task = TaskParams::advdiff(lam[0], lam[1]); break;
          case Family::VarAdv: spec.task = TaskParams::varadv(lam[0], lam[1], lam[2]); break;
        }
        for (std::size_t k = np; k < toks.size(); ++k)
          spec.regime += (spec.regime.empty() ? "" : " ") + toks[k];
        cfg.tasks.push_back(std::move(spec));
      } else if (key == "sweep") {
        cfg.grid_sweep.clear();
        for (const auto& t : split_ws(val)) cfg.grid_sweep.push_back(std::stoi(t));
      } else if (key == "eval.nx") {
        cfg.eval_nx = std::stoi(val);
      } else if (key == "eval.nt" || key == "eval.ny") {
        cfg.eval_nt = std::stoi(val);
      } else if (key == "train.epochs") {
        cfg.train.epochs = std::stoi(val);
      } else if (key == "train.lr") {
        cfg.train.lr = std::stod(val);
      } else if (key == "train.tasks_per_batch") {
        cfg.train.tasks_per_batch = std::stoi(val);
      } else if (key == "train.M") {
        cfg.train.arch.M = std::stoi(val);
      } else if (key == "train.gate_weight_decay") {
        cfg.train.gate_weight_decay = std::stod(val);
      } else if (key == "train.adv_ic") {
        cfg.train.adv_ic = parse_ic_kind(val);
      } else if (key == "train.interior") {
        cfg.train.colloc.interior = std::stoi(val);
      } else if (key == "train.n_times") {
        cfg.train.colloc.n_times = std::stoi(val);
      } else if (key == "train.ic") {
        cfg.train.colloc.ic = std::stoi(val);
      } else if (key == "train.bc") {
        cfg.train.colloc.bc = std::stoi(val);
      } else if (key == "train.near_ic") {
        cfg.train.colloc.near_ic = std::stoi(val);
      } else if (key == "train.w_int") {
        cfg.train.weights.w_int = std::stod(val);
      } else if (key == "train.w_bc") {
        cfg.train.weights.w_bc = std::stod(val);
      } else if (key == "train.w_ic") {
        cfg.train.weights.w_ic = std::stod(val);
      } else if (key == "train.w_reg") {
        cfg.train.weights.w_reg = std::stod(val);
      } else if (key == "train.lambda_sp") {
        cfg.train.weights.lambda_sp = std::stod(val);
      } else if (key == "train.lambda_c") {
        cfg.train.weights.lambda_c = std::stod(val);
      } else if (key == "train.lambda_w") {
        cfg.train.weights.lambda_w = std::stod(val);
      } else if (key == "train.eta") {
        cfg.train.weights.eta = std::stod(val);
      } else if (key == "train.h_target") {
        cfg.train.weights.h_target = std::stod(val);
      } else if (key.rfind("train.range", 0) == 0) {
        const int idx = std::stoi(key.substr(std::string("train.range").size()));
        auto toks = split_ws(val);
        if (toks.size() != 2) throw ConfigError("range needs `lo hi`: " + key);
        if (idx < 0 || idx >= static_cast<int>(cfg.train.dist.laws.size()))
          throw ConfigError("range index out of bounds: " + key);
        cfg.train.dist.laws[idx].lo = std::stod(toks[0]);
        cfg.train.dist.laws[idx].hi = std::stod(toks[1]);
      } else if (key == "corrector.m_inherit") {
        cfg.corr.m_inherit = std::stoi(val);
      } else if (key == "corrector.m_refine") {
        cfg.corr.m_refine = std::stoi(val);
      } else if (key == "corrector.bg_nx") {
        cfg.corr.bg_nx = std::stoi(val);
      } else if (key == "corrector.bg_nt") {
        cfg.corr.bg_nt = std::stoi(val);
      } else if (key == "corrector.snapshots") {
        cfg.corr.snapshots = std::stoi(val);
      } else if (key == "corrector.colloc_nx") {
        cfg.corr.colloc_nx = std::stoi(val);
      } else if (key == "corrector.colloc_nt") {
        cfg.corr.colloc_nt = std::stoi(val);
      } else if (key == "corrector.probe_nx") {
        cfg.corr.probe_nx = std::stoi(val);
      } else if (key == "corrector.probe_nt") {
        cfg.corr.probe_nt = std::stoi(val);
      } else if (key == "corrector.anchor_n") {
        cfg.corr.anchor_n = std::stoi(val);
      } else if (key == "corrector.anchor_weight") {
        cfg.corr.anchor_weight = std::stod(val);
      } else if (key == "corrector.ic_n") {
        cfg.corr.ic_n = std::stoi(val);
      } else if (key == "corrector.bc_n") {
        cfg.corr.bc_n = std::stoi(val);
      } else if (key == "corrector.w_bc") {
        cfg.corr.w_bc = std::stod(val);
      } else if (key == "corrector.w_ic") {
        cfg.corr.w_ic = std::stod(val);
      } else if (key == "corrector.ridge") {
        cfg.corr.ridge = std::stod(val);
      } else if (key == "corrector.ridge_candidates") {
        cfg.corr.ridge_candidates.clear();
        for (const auto& t : split_ws(val)) cfg.corr.ridge_candidates.push_back(std::stod(t));
      } else if (key == "corrector.use_inherited") {
        cfg.corr.use_inherited = val == "1" || val == "true";
      } else if (key == "corrector.use_refinement") {
        cfg.corr.use_refinement = val == "1" || val == "true";
      } else {
        throw ConfigError("unknown config key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for " + key + ": " + val);
    } catch (const std::out_of_range&) {
      throw ConfigError("value out of range for " + key + ": " + val);
    }
  }
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  mix(config.raw_text);
  mix("|seed=" + std::to_string(config.seed));
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string run_directory(const RunConfig& config) {
  return config.out_dir + "/" + family_name(config.family) + "-" + config_hash(config) + "-s" +
         std::to_string(config.seed);
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

void write_run_meta(const RunConfig& cfg, const std::string& dir) {
  std::ofstream os(dir + "/run_meta.txt");
  os << "family = " << family_name(cfg.family) << "\n";
  os << "config_hash = " << config_hash(cfg) << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "ls_solver = householder-qr on stacked [A; sqrt(ridge) I] (column-pivoted rank check at ridge 0)\n";
  os << "periodic_corrector_kernel = curvature-matched smooth periodic exponent (C2 at the antipode)\n";
  os << "poisson_reference = five-point FD, direct sparse solve\n";
}

std::string resolved_checkpoint(const RunConfig& cfg) {
  if (!cfg.checkpoint.empty()) return cfg.checkpoint;
  return run_directory(cfg) + "/checkpoint.kapi";
}

PredictorModel load_checkpoint_or_fail(const RunConfig& cfg) {
  const std::string path = resolved_checkpoint(cfg);
  if (!fs::exists(path)) throw ConfigError("missing checkpoint: " + path);
  return PredictorModel::load(path);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"KAPI predictor-corrector experiments for parametric linear PDEs"};
  app.require_subcommand(1);

  std::string config_path, out_override, ckpt_override, what = "predictor";
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  int task_index = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration file")->required();
    sub->add_option("--seed", seed_override, "override the config seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_override, "override the output directory");
    sub->add_option("--checkpoint", ckpt_override, "override the checkpoint path");
  };

  auto* cmd_train = app.add_subcommand("train", "meta-train a predictor and checkpoint it");
  auto* cmd_solve = app.add_subcommand("solve", "run the corrector and dump fields/dictionaries");
  auto* cmd_eval = app.add_subcommand("eval", "evaluate predictor and corrector errors");
  auto* cmd_grid = app.add_subcommand("ablate-grid", "uniform-only corrector ablation sweep");
  auto* cmd_inst = app.add_subcommand("ablate-instance", "single-instance trainer comparison");
  auto* cmd_geom = app.add_subcommand("export-geometry", "dump basis geometry as CSV");
  for (auto* sub : {cmd_train, cmd_solve, cmd_eval, cmd_grid, cmd_inst, cmd_geom}) add_common(sub);
  cmd_geom->add_option("--task-index", task_index, "task row to export (default 0)");
  cmd_geom->add_option("--what", what, "predictor | corrector");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  RunConfig cfg = parse_config_file(config_path);
  if (seed_set) {
    cfg.seed = seed_override;
    cfg.train.seed = seed_override;
  }
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (!ckpt_override.empty()) cfg.checkpoint = ckpt_override;

  const std::string dir = run_directory(cfg);
  fs::create_directories(dir);

  if (app.got_subcommand(cmd_train)) {
    cfg.mode = RunMode::Train;
    const auto result = train_predictor(cfg.train);
    result.model.save(dir + "/checkpoint.kapi");
    write_loss_history(dir + "/loss_history.txt", result.loss_history);
    write_run_meta(cfg, dir);
    std::ofstream(dir + "/train_seconds.txt") << result.wall_seconds << "\n";
    std::printf("checkpoint: %s/checkpoint.kapi (%.1fs, final loss %.6g)\n", dir.c_str(),
                result.wall_seconds,
                result.loss_history.empty() ? 0.0 : result.loss_history.back());
    return 0;
  }

  if (app.got_subcommand(cmd_eval) || app.got_subcommand(cmd_solve)) {
    cfg.mode = app.got_subcommand(cmd_eval) ? RunMode::Eval : RunMode::Solve;
    const auto model = load_checkpoint_or_fail(cfg);
    const auto reports = run_predictor_corrector(cfg, model);
    write_reports_csv(dir + "/report.csv", reports);
    write_run_meta(cfg, dir);
    if (cfg.mode == RunMode::Solve) {
      const auto grid = eval_grid(cfg);
      for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
        CorrectorConfig corr = cfg.corr;
        corr.adv_ic = cfg.train.adv_ic;
        const auto result = correct(model, cfg.tasks[k].task, corr);
        write_dictionary(dir + "/dictionary-" + std::to_string(k) + ".txt", result.dict);
        ref::write_field(dir + "/u_corr-" + std::to_string(k) + ".txt",
                         corrector_field(result.dict, grid));
        ref::write_field(dir + "/u_pred-" + std::to_string(k) + ".txt",
                         predictor_field(model, cfg.tasks[k].task, grid));
        ref::write_field(
            dir + "/u_ref-" + std::to_string(k) + ".txt",
            reference_field(cfg.family, cfg.tasks[k].task, grid, cfg.train.adv_ic));
      }
    }
    for (const auto& r : reports)
      std::printf("%s [%s] e_pred=%.4g e_corr=%.4g\n", family_name(r.family), r.regime.c_str(),
                  r.e_pred, r.e_corr);
    std::printf("report: %s/report.csv\n", dir.c_str());
    return 0;
  }

  if (app.got_subcommand(cmd_grid)) {
    cfg.mode = RunMode::AblateGrid;
    const auto model = load_checkpoint_or_fail(cfg);
    const auto reports = ablate_uniform_grid(cfg, model);
    write_reports_csv(dir + "/grid_ablation.csv", reports);
    write_run_meta(cfg, dir);
    for (const auto& r : reports)
      std::printf("%s [%s] e_corr=%.4g\n", family_name(r.family), r.regime.c_str(), r.e_corr);
    std::printf("report: %s/grid_ablation.csv\n", dir.c_str());
    return 0;
  }

  if (app.got_subcommand(cmd_inst)) {
    cfg.mode = RunMode::AblateInstance;
    PredictorModel model = [&] {
      const std::string path = resolved_checkpoint(cfg);
      if (fs::exists(path)) return PredictorModel::load(path);
      std::printf("no checkpoint at %s; meta-training first\n", path.c_str());
      auto result = train_predictor(cfg.train);
      result.model.save(dir + "/checkpoint.kapi");
      return std::move(result.model);
    }();
    const auto reports = ablate_single_instance(cfg, model, 0.0);
    write_instance_csv(dir + "/instance_ablation.csv", reports);
    write_run_meta(cfg, dir);
    for (const auto& r : reports)
      std::printf("%s %s rel_l2=%.4g train=%.1fs retrain=%s\n", family_name(r.family),
                  r.method.c_str(), r.rel_l2, r.train_s, r.retraining_per_task ? "Yes" : "No");
    return 0;
  }

  if (app.got_subcommand(cmd_geom)) {
    cfg.mode = RunMode::ExportGeometry;
    const auto model = load_checkpoint_or_fail(cfg);
    if (task_index < 0 || task_index >= static_cast<int>(cfg.tasks.size()))
      throw ConfigError("task index out of range");
    const auto& task = cfg.tasks[task_index].task;
    const std::string path = dir + "/geometry-" + std::to_string(task_index) + ".csv";
    if (what == "predictor") {
      export_geometry(path, model, task, cfg.corr.snapshots);
    } else if (what == "corrector") {
      CorrectorConfig corr = cfg.corr;
      corr.adv_ic = cfg.train.adv_ic;
      export_geometry(path, correct(model, task, corr).dict);
    } else {
      throw ConfigError("--what must be predictor or corrector");
    }
    std::printf("geometry: %s\n", path.c_str());
    return 0;
  }
  return 1;
}

}  // namespace

int cli_main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 2;
  }
}

}  // namespace kapi
