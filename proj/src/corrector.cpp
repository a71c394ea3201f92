#include "kapi/corrector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "kapi/detail/predictor_eval.hpp"
#include "kapi/reference.hpp"

namespace kapi {

const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::Inherited: return "inherited";
    case Provenance::Refinement: return "refinement";
    case Provenance::Background: return "background";
  }
  return "?";
}

CorrectorConfig default_corrector_config(Family f) {
  CorrectorConfig c;
  if (f == Family::Poisson) {
    c.m_inherit = 64;
    c.bg_nx = 10;
    c.bg_nt = 10;
    c.colloc_nx = 48;
    c.colloc_nt = 48;
    c.probe_nx = 64;
    c.probe_nt = 64;
  } else {
    c.m_inherit = 24;
    c.bg_nx = 12;
    c.bg_nt = 8;
    c.colloc_nx = 64;
    c.colloc_nt = 32;
    c.probe_nx = 64;
    c.probe_nt = 33;
    if (f == Family::Advection) c.ridge_candidates = {1e-10, 1e-8, 1e-6, 1e-4};
  }
  return c;
}

// ---------------------------------------------------------------------------
// dictionary construction
// ---------------------------------------------------------------------------

namespace {

std::vector<int> ranked_indices(std::span<const double> score, int k) {
  std::vector<int> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    return a < b;
  });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k)));
  return idx;
}

std::vector<double> snapshot_times(Family family, int snapshots) {
  const double horizon = family_horizon(family);
  std::vector<double> ts(snapshots);
  for (int s = 0; s < snapshots; ++s) ts[s] = horizon * s / (snapshots - 1);
  return ts;
}

}  // namespace

std::vector<CorrectorAtom> select_inherited(const PredictorModel& model, const TaskParams& task,
                                            int k, const CorrectorConfig& config) {
  std::vector<CorrectorAtom> out;
  const int M = model.kernel_count();
  k = std::min(k, M);
  if (k <= 0) return out;

  if (model.family() == Family::Poisson) {
    const auto g = model.generate_geometry(task);
    std::vector<double> score(M);
    for (int j = 0; j < M; ++j) score[j] = std::abs(g.gate[j]) * std::abs(g.coeff[j]);
    for (int j : ranked_indices(score, k)) {
      CorrectorAtom a;
      a.prov = Provenance::Inherited;
      a.planar = true;
      a.p = g.planar[j];
      a.source_index = j;
      a.gate = g.gate[j];
      a.score = score[j];
      out.push_back(a);
    }
    return out;
  }

  const auto gates = model.gates(task);
  const auto times = snapshot_times(model.family(), config.snapshots);
  std::vector<std::vector<geom::DynamicAtomState>> states;
  states.reserve(times.size());
  for (double t : times) states.push_back(model.dynamic_states(task, t));

  std::vector<double> score(M, 0.0);
  for (int j = 0; j < M; ++j) {
    double amp = 0.0;
    for (const auto& st : states) amp = std::max(amp, std::abs(st[j].alpha));
    score[j] = std::abs(gates[j]) * amp;
  }

  const double dt_snap = times.size() > 1 ? times[1] - times[0] : family_horizon(model.family());
  const bool periodic = family_is_periodic(model.family());
  for (int j : ranked_indices(score, k)) {
    for (std::size_t s = 0; s < times.size(); ++s) {
      CorrectorAtom a;
      a.prov = Provenance::Inherited;
      a.planar = false;
      a.st = geom::SpaceTimeAtom{periodic ? states[s][j].xi - std::floor(states[s][j].xi)
                                          : states[s][j].xi,
                                 std::max(states[s][j].h, geom::kWidthFloor), times[s],
                                 config.snapshot_width_factor * dt_snap, periodic};
      a.source_index = j;
      a.gate = gates[j];
      a.score = score[j];
      out.push_back(a);
    }
  }
  return out;
}

std::vector<int> top_scored_grid_points(std::span<const double> scores, int nx, int ny, int q) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<int> chosen;
  std::vector<std::pair<int, int>> cells;
  for (int flat : order) {
    if (static_cast<int>(chosen.size()) >= q) break;
    const int i = flat % nx, j = flat / nx;
    bool close = false;
    for (const auto& [ci, cj] : cells) {
      if (std::max(std::abs(ci - i), std::abs(cj - j)) <= 1) {
        close = true;
        break;
      }
    }
    if (close) continue;
    cells.emplace_back(i, j);
    chosen.push_back(flat);
  }
  (void)ny;
  return chosen;
}

std::vector<CorrectorAtom> extract_refinement(const PredictorModel& model, const TaskParams& task,
                                              const CorrectorConfig& config) {
  const Family fam = model.family();
  const int nx = config.probe_nx, nt = config.probe_nt;
  std::vector<double> grad(static_cast<std::size_t>(nx) * nt, 0.0);
  std::vector<double> res(static_cast<std::size_t>(nx) * nt, 0.0);

  double hx, ht;
  std::vector<double> xs(nx), ts(nt);
  if (fam == Family::Poisson) {
    hx = 1.0 / (nx + 1);
    ht = 1.0 / (nt + 1);
    for (int i = 0; i < nx; ++i) xs[i] = (i + 1) * hx;
    for (int j = 0; j < nt; ++j) ts[j] = (j + 1) * ht;
    const auto g = model.generate_geometry(task);
    const ref::PoissonSource src{task.x0, task.y0, task.nu, 1.0};
    for (int j = 0; j < nt; ++j) {
      for (int i = 0; i < nx; ++i) {
        // gradient by tight central differences of the cheap geometry eval
        const double x = xs[i], y = ts[j];
        const auto c = model.eval_poisson_geom(g, x, y);
        const double gx = (model.eval_poisson_geom(g, x + 1e-6, y).u -
                           model.eval_poisson_geom(g, x - 1e-6, y).u) /
                          2e-6;
        const double gy = (model.eval_poisson_geom(g, x, y + 1e-6).u -
                           model.eval_poisson_geom(g, x, y - 1e-6).u) /
                          2e-6;
        grad[static_cast<std::size_t>(j) * nx + i] = std::hypot(gx, gy);
        res[static_cast<std::size_t>(j) * nx + i] =
            std::abs(-c.lap - ref::poisson_forcing({&src, 1}, x, y));
      }
    }
  } else {
    const bool periodic = family_is_periodic(fam);
    const double horizon = family_horizon(fam);
    hx = periodic ? 1.0 / nx : 1.0 / (nx - 1);
    ht = horizon / (nt - 1);
    for (int i = 0; i < nx; ++i) xs[i] = i * hx;
    for (int j = 0; j < nt; ++j) ts[j] = j * ht;
    const auto gates = model.gates(task);
    for (int j = 0; j < nt; ++j) {
      const auto states = model.dynamic_states(task, ts[j]);
      for (int i = 0; i < nx; ++i) {
        const auto s = model.eval_transport_states(task, states, gates, xs[i], ts[j]);
        double r = 0.0;
        switch (fam) {
          case Family::Advection: r = s.ut + s.ux; break;
          case Family::AdvDiff: r = s.ut + task.a * s.ux - task.nu * s.uxx; break;
          case Family::VarAdv: r = s.ut + detail::varadv_speed(task.beta, xs[i]) * s.ux; break;
          default: break;
        }
        grad[static_cast<std::size_t>(j) * nx + i] = std::hypot(s.ux, s.ut);
        res[static_cast<std::size_t>(j) * nx + i] = std::abs(r);
      }
    }
  }

  const double gmax = *std::max_element(grad.begin(), grad.end());
  const double rmax = *std::max_element(res.begin(), res.end());
  std::vector<double> score(grad.size(), 0.0);
  for (std::size_t k = 0; k < score.size(); ++k) {
    if (gmax > 0.0) score[k] += grad[k] / gmax;
    if (rmax > 0.0) score[k] += res[k] / rmax;
  }

  std::vector<CorrectorAtom> out;
  for (int flat : top_scored_grid_points(score, nx, nt, config.m_refine)) {
    const int i = flat % nx, j = flat / nx;
    CorrectorAtom a;
    a.prov = Provenance::Refinement;
    a.score = score[flat];
    if (fam == Family::Poisson) {
      a.planar = true;
      a.p = geom::PlanarAtom{xs[i], ts[j], config.ref_width_factor * hx};
    } else {
      a.planar = false;
      a.st = geom::SpaceTimeAtom{xs[i], config.ref_width_factor * hx, ts[j],
                                 config.ref_width_factor * ht, family_is_periodic(fam)};
    }
    out.push_back(a);
  }
  return out;
}

std::vector<CorrectorAtom> background_scaffold(Family family, int nx, int nt_or_ny,
                                               double width_factor) {
  std::vector<CorrectorAtom> out;
  if (nx < 2 || nt_or_ny < 2) return out;
  if (family == Family::Poisson) {
    const double h = 1.0 / (nx - 1);
    const double hy = 1.0 / (nt_or_ny - 1);
    for (int j = 0; j < nt_or_ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        CorrectorAtom a;
        a.prov = Provenance::Background;
        a.planar = true;
        a.p = geom::PlanarAtom{i * h, j * hy, width_factor * h};
        out.push_back(a);
      }
    }
    return out;
  }
  const bool periodic = family_is_periodic(family);
  const double horizon = family_horizon(family);
  const double hx = periodic ? 1.0 / nx : 1.0 / (nx - 1);
  const double ht = horizon / (nt_or_ny - 1);
  for (int j = 0; j < nt_or_ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      CorrectorAtom a;
      a.prov = Provenance::Background;
      a.planar = false;
      a.st = geom::SpaceTimeAtom{i * hx, width_factor * hx, j * ht, width_factor * ht, periodic};
      out.push_back(a);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// assembly and solve
// ---------------------------------------------------------------------------

namespace {

/// -Lap(trial * G) and trial * G for a Poisson dictionary atom.
struct PoissonAtomEval {
  double value, neg_lap;
};

PoissonAtomEval poisson_atom(const CorrectorAtom& a, double x, double y) {
  const auto e = geom::atom_eval_2d(a.p, x, y);
  const double trial = poisson_trial(x, y);
  const double lap = trial * e.lap + 2.0 * (poisson_trial_dx(x, y) * e.dx) +
                     2.0 * (poisson_trial_dy(x, y) * e.dy) + poisson_trial_lap(x, y) * e.phi;
  return {trial * e.phi, -lap};
}

double transport_row_entry(Family fam, const TaskParams& task, const CorrectorAtom& a, double x,
                           double t) {
  const auto e = geom::atom_eval_st(a.st, x, t);
  switch (fam) {
    case Family::Advection: return e.dt + e.dx;
    case Family::AdvDiff: return e.dt + task.a * e.dx - task.nu * e.dxx;
    case Family::VarAdv: return e.dt + detail::varadv_speed(task.beta, x) * e.dx;
    default: return 0.0;
  }
}

}  // namespace

LinearSystem assemble_system(const PredictorModel& model, const TaskParams& task,
                             std::span<const CorrectorAtom> atoms, const CorrectorConfig& config) {
  const Family fam = model.family();
  const int cols = static_cast<int>(atoms.size());
  LinearSystem sys;
  sys.ridge = config.ridge;

  if (fam == Family::Poisson) {
    const int n_int = config.colloc_nx * config.colloc_nt;
    const int n_anchor = std::max(config.anchor_n, 0) * std::max(config.anchor_n, 0);
    sys.A.resize(n_int + n_anchor, cols);
    sys.b.resize(n_int + n_anchor);

    const ref::PoissonSource src{task.x0, task.y0, task.nu, 1.0};
    auto forcing = [&](double x, double y) {
      return config.forcing_override ? config.forcing_override(x, y)
                                     : ref::poisson_forcing({&src, 1}, x, y);
    };

    int r = 0;
    for (int j = 0; j < config.colloc_nt; ++j) {
      const double y = static_cast<double>(j + 1) / (config.colloc_nt + 1);
      for (int i = 0; i < config.colloc_nx; ++i, ++r) {
        const double x = static_cast<double>(i + 1) / (config.colloc_nx + 1);
        for (int m = 0; m < cols; ++m) sys.A(r, m) = poisson_atom(atoms[m], x, y).neg_lap;
        sys.b(r) = forcing(x, y);
      }
    }
    sys.blocks.push_back({RowBlock::Kind::Interior, 0, r, 1.0});

    if (n_anchor > 0) {
      const int anchor_begin = r;
      const auto g = model.generate_geometry(task);
      for (int j = 0; j < config.anchor_n; ++j) {
        const double y = static_cast<double>(j + 1) / (config.anchor_n + 1);
        for (int i = 0; i < config.anchor_n; ++i, ++r) {
          const double x = static_cast<double>(i + 1) / (config.anchor_n + 1);
          for (int m = 0; m < cols; ++m)
            sys.A(r, m) = config.anchor_weight * poisson_atom(atoms[m], x, y).value;
          sys.b(r) = config.anchor_weight * model.eval_poisson_geom(g, x, y).u;
        }
      }
      sys.blocks.push_back({RowBlock::Kind::Anchor, anchor_begin, r, config.anchor_weight});
    }
    return sys;
  }

  const bool periodic = family_is_periodic(fam);
  const double horizon = family_horizon(fam);
  const int n_int = config.colloc_nx * config.colloc_nt;
  const int n_ic = config.ic_n;
  const int bc_times = config.bc_n / 2;
  const int n_bc = bc_times * 2;
  sys.A.resize(n_int + n_ic + n_bc, cols);
  sys.b.resize(n_int + n_ic + n_bc);

  int r = 0;
  for (int j = 0; j < config.colloc_nt; ++j) {
    const double t = horizon * j / (config.colloc_nt - 1);
    for (int i = 0; i < config.colloc_nx; ++i, ++r) {
      const double x = periodic ? static_cast<double>(i) / config.colloc_nx
                                : static_cast<double>(i) / (config.colloc_nx - 1);
      for (int m = 0; m < cols; ++m) sys.A(r, m) = transport_row_entry(fam, task, atoms[m], x, t);
      sys.b(r) = 0.0;  // homogeneous transport/diffusion operator
    }
  }
  sys.blocks.push_back({RowBlock::Kind::Interior, 0, r, 1.0});

  const ref::InitialCondition ic_fn{fam == Family::Advection
                                        ? config.adv_ic
                                        : ref::InitialCondition::Kind::PeriodicGaussian,
                                    task.x0, task.nu};
  const int ic_begin = r;
  for (int i = 0; i < n_ic; ++i, ++r) {
    const double x =
        periodic ? static_cast<double>(i) / n_ic : static_cast<double>(i) / (n_ic - 1);
    for (int m = 0; m < cols; ++m)
      sys.A(r, m) = config.w_ic * geom::atom_eval_st(atoms[m].st, x, 0.0).phi;
    const double u0 =
        fam == Family::AdvDiff ? detail::advdiff_profile(task.nu, x).u0 : ic_fn(x);
    sys.b(r) = config.w_ic * u0;
  }
  sys.blocks.push_back({RowBlock::Kind::Ic, ic_begin, r, config.w_ic});

  const int bc_begin = r;
  for (int k = 1; k <= bc_times; ++k) {
    const double t = horizon * k / bc_times;
    if (periodic) {
      for (int m = 0; m < cols; ++m) {
        const auto e0 = geom::atom_eval_st(atoms[m].st, 0.0, t);
        const auto e1 = geom::atom_eval_st(atoms[m].st, 1.0, t);
        sys.A(r, m) = config.w_bc * (e0.phi - e1.phi);
        sys.A(r + 1, m) = config.w_bc * (e0.dx - e1.dx);
      }
      sys.b(r) = 0.0;
      sys.b(r + 1) = 0.0;
    } else {
      for (int m = 0; m < cols; ++m) {
        sys.A(r, m) = config.w_bc * geom::atom_eval_st(atoms[m].st, 0.0, t).phi;
        sys.A(r + 1, m) = config.w_bc * geom::atom_eval_st(atoms[m].st, 1.0, t).phi;
      }
      sys.b(r) = config.w_bc * ref::advdiff_exact(task.a, task.nu, 0.0, t);
      sys.b(r + 1) = config.w_bc * ref::advdiff_exact(task.a, task.nu, 1.0, t);
    }
    r += 2;
  }
  sys.blocks.push_back({RowBlock::Kind::Bc, bc_begin, r, config.w_bc});
  return sys;
}

CorrectorResult correct(const PredictorModel& model, const TaskParams& task,
                        const CorrectorConfig& config_in) {
  const auto t_begin = std::chrono::steady_clock::now();
  CorrectorConfig config = config_in;
  const Family fam = model.family();
  const auto defaults = default_corrector_config(fam);
  if (config.m_inherit < 0) config.m_inherit = defaults.m_inherit;
  if (config.bg_nx < 0) config.bg_nx = defaults.bg_nx;
  if (config.bg_nt < 0) config.bg_nt = defaults.bg_nt;
  if (config.colloc_nx < 0) config.colloc_nx = defaults.colloc_nx;
  if (config.colloc_nt < 0) config.colloc_nt = defaults.colloc_nt;

  CorrectorResult out;
  out.dict.family = fam;
  out.dict.task = task;

  std::vector<CorrectorAtom> atoms;
  if (config.use_inherited) {
    auto inh = select_inherited(model, task, config.m_inherit, config);
    out.dict.m_inh = static_cast<int>(inh.size());
    atoms.insert(atoms.end(), inh.begin(), inh.end());
  }
  if (config.use_refinement) {
    auto ref_atoms = extract_refinement(model, task, config);
    out.dict.m_ref = static_cast<int>(ref_atoms.size());
    atoms.insert(atoms.end(), ref_atoms.begin(), ref_atoms.end());
  }
  {
    auto bg = background_scaffold(fam, config.bg_nx, config.bg_nt, config.bg_width_factor);
    out.dict.m_bg = static_cast<int>(bg.size());
    atoms.insert(atoms.end(), bg.begin(), bg.end());
  }
  out.dict.atoms = std::move(atoms);
  if (out.dict.atoms.empty())
    throw SingularSystem(0, 0);

  LinearSystem sys = assemble_system(model, task, out.dict.atoms, config);
  out.rows = static_cast<int>(sys.A.rows());
  out.cols = static_cast<int>(sys.A.cols());

  std::vector<double> candidates = config.ridge_candidates;
  if (candidates.empty()) candidates = {config.ridge};

  double best_res = std::numeric_limits<double>::infinity();
  linalg::Vector best_c;
  double best_ridge = candidates.front();
  for (double ridge : candidates) {
    const linalg::Vector c = linalg::ridge_lstsq(sys.A, sys.b, ridge);
    const double res = (sys.A * c - sys.b).norm();
    if (res < best_res) {
      best_res = res;
      best_c = c;
      best_ridge = ridge;
    }
  }
  out.dict.coeff = best_c;
  out.dict.ridge_used = best_ridge;
  out.colloc_residual = best_res;
  out.solve_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin).count();
  return out;
}

double eval_corrector(const CorrectorDictionary& dict, double x, double y_or_t) {
  double acc = 0.0;
  if (dict.family == Family::Poisson) {
    for (int m = 0; m < dict.size(); ++m)
      acc += dict.coeff(m) * geom::atom_eval_2d(dict.atoms[m].p, x, y_or_t).phi;
    return poisson_trial(x, y_or_t) * acc;
  }
  for (int m = 0; m < dict.size(); ++m)
    acc += dict.coeff(m) * geom::atom_eval_st(dict.atoms[m].st, x, y_or_t).phi;
  return acc;
}

void write_dictionary(const std::string& path, const CorrectorDictionary& dict) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  os << "# provenance center_x center_y_or_xi width tau temporal_width coefficient\n";
  char buf[256];
  for (int m = 0; m < dict.size(); ++m) {
    const auto& a = dict.atoms[m];
    if (a.planar) {
      std::snprintf(buf, sizeof buf, "%s %.17g %.17g %.17g - - %.17g\n", provenance_name(a.prov),
                    a.p.mu_x, a.p.mu_y, a.p.sigma, dict.coeff(m));
    } else {
      std::snprintf(buf, sizeof buf, "%s %.17g - %.17g %.17g %.17g %.17g\n",
                    provenance_name(a.prov), a.st.xi, a.st.h, a.st.tau, a.st.s, dict.coeff(m));
    }
    os << buf;
  }
}

}  // namespace kapi
