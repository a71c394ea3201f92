#include "kapi/predictor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "kapi/detail/predictor_eval.hpp"
#include "kapi/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace kapi {

const char* family_name(Family f) {
  switch (f) {
    case Family::Poisson: return "poisson";
    case Family::Advection: return "advection";
    case Family::AdvDiff: return "advdiff";
    case Family::VarAdv: return "varadv";
  }
  return "?";
}

Family family_from_name(const std::string& name) {
  for (Family f : {Family::Poisson, Family::Advection, Family::AdvDiff, Family::VarAdv})
    if (name == family_name(f)) return f;
  throw ConfigError("unknown family: " + name);
}

bool family_is_dynamic(Family f) { return f != Family::Poisson; }
bool family_is_periodic(Family f) { return f == Family::Advection || f == Family::VarAdv; }
double family_horizon(Family f) { return f == Family::AdvDiff ? 0.5 : 1.0; }

std::vector<double> TaskParams::lambda() const {
  switch (family) {
    case Family::Poisson: return {x0, y0, nu};
    case Family::Advection: return {x0, nu};
    case Family::AdvDiff: return {a, nu};
    case Family::VarAdv: return {x0, nu, beta};
  }
  return {};
}

ParamRanges ParamRanges::defaults(Family f) {
  ParamRanges r;
  switch (f) {
    case Family::Poisson: r.lohi = {{0.4, 0.6}, {0.4, 0.6}, {0.05, 0.10}}; break;
    case Family::Advection: r.lohi = {{0.35, 0.65}, {0.03, 0.12}}; break;
    case Family::AdvDiff: r.lohi = {{0.5, 1.0}, {0.01, 0.05}}; break;
    case Family::VarAdv: r.lohi = {{0.2, 0.8}, {0.03, 0.12}, {0.20, 0.60}}; break;
  }
  return r;
}

std::vector<double> ParamRanges::normalize(std::span<const double> lam) const {
  std::vector<double> out(lam.size());
  for (std::size_t k = 0; k < lam.size(); ++k) {
    const auto [lo, hi] = lohi[k];
    out[k] = 2.0 * (lam[k] - lo) / (hi - lo) - 1.0;
  }
  return out;
}

bool ParamRanges::contains(std::span<const double> lam) const {
  for (std::size_t k = 0; k < lam.size(); ++k) {
    const auto [lo, hi] = lohi[k];
    if (lam[k] < lo || lam[k] > hi) return false;
  }
  return true;
}

ModelConfig ModelConfig::defaults(Family f) {
  ModelConfig c;
  c.family = f;
  switch (f) {
    case Family::Poisson:
      c.M = 128; c.cond_width = 64; c.cond_depth = 2;
      break;
    case Family::Advection:
      c.M = 32; c.enc_width = 64; c.dyn_width = 96; c.dyn_depth = 2;
      break;
    case Family::AdvDiff:
      c.M = 48; c.dyn_width = 128; c.dyn_depth = 3;
      break;
    case Family::VarAdv:
      c.M = 64; c.dyn_width = 128; c.dyn_depth = 2;
      break;
  }
  return c;
}

namespace {
double softplus_inv(double y) { return std::log(std::expm1(y)); }
}  // namespace

PredictorModel PredictorModel::create(const ModelConfig& config, std::uint64_t init_seed,
                                      ParamRanges ranges) {
  PredictorModel m;
  m.config_ = config;
  m.ranges_ = ranges.lohi.empty() ? ParamRanges::defaults(config.family) : std::move(ranges);
  CounterRng rng(init_seed, 0x6b617069);  // init stream

  const int M = config.M;
  auto& ps = m.params_;
  const int ff_dim = 1 + 2 * config.fourier_k;

  switch (config.family) {
    case Family::Poisson: {
      if (config.single_instance) {
        m.nets_.raw_geom_id = ps.add("pinn.geom_raw", 4 * M);
        auto raw = ps.array(m.nets_.raw_geom_id);
        for (int j = 0; j < M; ++j) raw[M + j] = rng.uniform(-1.0, 1.0);      // mu_x
        for (int j = 0; j < M; ++j) raw[2 * M + j] = rng.uniform(-1.0, 1.0);  // mu_y
      } else {
        std::vector<int> hidden(config.cond_depth, config.cond_width);
        m.nets_.cond = ad::Mlp::create(ps, "cond", 3, hidden, 4 * M, rng);
      }
      m.nets_.coeff_id = ps.add("coeff", M);
      break;
    }
    case Family::Advection: {
      if (config.single_instance) {
        m.nets_.gate_raw_id = ps.add("pinn.gate_raw", M);
        m.nets_.dyn = ad::Mlp::create(ps, "dyn", ff_dim,
                                      std::vector<int>(config.dyn_depth, config.dyn_width), 3 * M,
                                      rng);
      } else {
        m.nets_.enc = ad::Mlp::create(ps, "enc", 2, {config.enc_width}, config.enc_width, rng);
        m.nets_.gate_head = ad::Mlp::create(ps, "gate", config.enc_width, {}, M, rng);
        m.nets_.dyn = ad::Mlp::create(ps, "dyn", ff_dim + config.enc_width,
                                      std::vector<int>(config.dyn_depth, config.dyn_width), 3 * M,
                                      rng);
      }
      break;
    }
    case Family::AdvDiff: {
      m.nets_.dyn = ad::Mlp::create(ps, "dyn", ff_dim + 2,
                                    std::vector<int>(config.dyn_depth, config.dyn_width), 3 * M,
                                    rng);
      break;
    }
    case Family::VarAdv: {
      m.nets_.dyn = ad::Mlp::create(ps, "dyn", ff_dim + 3,
                                    std::vector<int>(config.dyn_depth, config.dyn_width), 3 * M,
                                    rng);
      m.nets_.base_center_id = ps.add("base.center", M);
      m.nets_.base_width_id = ps.add("base.width_raw", M);
      auto bc = ps.array(m.nets_.base_center_id);
      auto bw = ps.array(m.nets_.base_width_id);
      for (int j = 0; j < M; ++j) {
        bc[j] = static_cast<double>(j) / M;
        bw[j] = softplus_inv(config.base_width - geom::kWidthFloor);
      }
      break;
    }
  }
  return m;
}

BasisGeometry PredictorModel::generate_geometry(const TaskParams& task) const {
  BasisGeometry g;
  g.family = family();
  g.M = kernel_count();
  if (family() == Family::Poisson) {
    const auto lam = ranges_.normalize(task.lambda());
    auto pg = detail::poisson_geometry_eval<double>(*this, ad::view(params_),
                                                    std::span<const double>(lam));
    g.gate = std::move(pg.gate);
    g.coeff = std::move(pg.coeff);
    g.planar.resize(g.M);
    for (int j = 0; j < g.M; ++j) g.planar[j] = {pg.mux[j], pg.muy[j], pg.sigma[j]};
  } else {
    g.dynamic = true;
    g.gate = gates(task);
  }
  return g;
}

std::vector<double> PredictorModel::gates(const TaskParams& task) const {
  if (family() == Family::Poisson) return generate_geometry(task).gate;
  if (family() == Family::Advection) {
    const auto lam = ranges_.normalize(task.lambda());
    auto ctx = detail::dynamic_context<double>(*this, ad::view(params_),
                                               std::span<const double>(lam));
    return ctx.gate;
  }
  // AdvDiff/VarAdv hypotheses carry no task gates; report neutral activity.
  return std::vector<double>(kernel_count(), 0.5);
}

std::vector<geom::DynamicAtomState> PredictorModel::dynamic_states(const TaskParams& task,
                                                                   double t) const {
  const auto lam = ranges_.normalize(task.lambda());
  auto ctx = detail::dynamic_context<double>(*this, ad::view(params_),
                                             std::span<const double>(lam));
  auto st = detail::dynamic_states_eval<double>(*this, ad::view(params_), ctx,
                                                ad::Dual<double>{t, 1.0});
  std::vector<geom::DynamicAtomState> out(kernel_count());
  for (int j = 0; j < kernel_count(); ++j)
    out[j] = {st.alpha[j].v, st.xi[j].v, st.h[j].v, st.alpha[j].d, st.xi[j].d, st.h[j].d};
  return out;
}

PoissonSample PredictorModel::eval_poisson_geom(const BasisGeometry& g, double x, double y) const {
  const double trial = poisson_trial(x, y);
  const double tdx2 = 2.0 * poisson_trial_dx(x, y);
  const double tdy2 = 2.0 * poisson_trial_dy(x, y);
  const double tlap = poisson_trial_lap(x, y);
  double s = 0, sx = 0, sy = 0, sl = 0;
  for (int j = 0; j < g.M; ++j) {
    const auto e = geom::atom_eval_2d(g.planar[j], x, y);
    const double gc = g.gate[j] * g.coeff[j];
    s += gc * e.phi;
    sx += gc * e.dx;
    sy += gc * e.dy;
    sl += gc * e.lap;
  }
  return {trial * s, trial * sl + tdx2 * sx + tdy2 * sy + tlap * s};
}

PoissonSample PredictorModel::eval_poisson(const TaskParams& task, double x, double y) const {
  return eval_poisson_geom(generate_geometry(task), x, y);
}

TransportSample PredictorModel::eval_transport_states(
    const TaskParams& task, std::span<const geom::DynamicAtomState> states,
    std::span<const double> gate, double x, double t) const {
  const Family fam = family();
  const bool periodic = family_is_periodic(fam);
  double s = 0, sx = 0, sxx = 0, st_ = 0;
  for (std::size_t j = 0; j < states.size(); ++j) {
    const auto p = geom::dynamic_packet_eval(states[j], x, periodic);
    const double g = fam == Family::Advection ? gate[j] : 1.0;
    s += g * p.u;
    sx += g * p.dx;
    sxx += g * p.dxx;
    st_ += g * p.dt;
  }
  if (fam == Family::Advection) return {s, sx, sxx, st_};
  const auto prof = fam == Family::AdvDiff
                        ? detail::advdiff_profile(task.nu, x)
                        : detail::periodic_gaussian_profile(task.x0, task.nu, x);
  return {prof.u0 + t * s, prof.du0 + t * sx, prof.d2u0 + t * sxx, s + t * st_};
}

TransportSample PredictorModel::eval_transport(const TaskParams& task, double x, double t) const {
  const auto states = dynamic_states(task, t);
  const auto g = family() == Family::Advection ? gates(task) : std::vector<double>();
  return eval_transport_states(task, states, g, x, t);
}

TransportSample PredictorModel::eval_advection(const TaskParams& task, double x, double t) const {
  return eval_transport(task, x, t);
}
TransportSample PredictorModel::eval_advdiff(const TaskParams& task, double x, double t) const {
  return eval_transport(task, x, t);
}
TransportSample PredictorModel::eval_varadv(const TaskParams& task, double x, double t) const {
  return eval_transport(task, x, t);
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw IoError("truncated checkpoint");
  return v;
}

constexpr char kMagic[5] = {'K', 'A', 'P', 'I', '1'};

}  // namespace

void PredictorModel::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path);
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(config_.family));
  put<std::uint32_t>(os, config_.M);
  put<std::uint32_t>(os, config_.single_instance ? 1 : 0);
  put<std::uint32_t>(os, config_.fourier_k);
  put<std::uint32_t>(os, config_.cond_width);
  put<std::uint32_t>(os, config_.cond_depth);
  put<std::uint32_t>(os, config_.enc_width);
  put<std::uint32_t>(os, config_.dyn_width);
  put<std::uint32_t>(os, config_.dyn_depth);
  put<double>(os, config_.base_width);

  put<std::uint32_t>(os, static_cast<std::uint32_t>(ranges_.lohi.size()));
  for (const auto& [lo, hi] : ranges_.lohi) {
    put<double>(os, lo);
    put<double>(os, hi);
  }

  put<std::uint32_t>(os, params_.array_count());
  for (int id = 0; id < params_.array_count(); ++id) {
    const auto& info = params_.info(id);
    put<std::uint16_t>(os, static_cast<std::uint16_t>(info.name.size()));
    os.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
    put<std::uint32_t>(os, info.rows);
    put<std::uint32_t>(os, info.cols);
    const auto arr = params_.array(id);
    os.write(reinterpret_cast<const char*>(arr.data()),
             static_cast<std::streamsize>(arr.size() * sizeof(double)));
  }
  if (!os) throw IoError("write failed: " + path);
}

PredictorModel PredictorModel::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[5];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw IoError("not a KAPI1 checkpoint: " + path);

  ModelConfig c;
  c.family = static_cast<Family>(get<std::uint32_t>(is));
  c.M = static_cast<int>(get<std::uint32_t>(is));
  c.single_instance = get<std::uint32_t>(is) != 0;
  c.fourier_k = static_cast<int>(get<std::uint32_t>(is));
  c.cond_width = static_cast<int>(get<std::uint32_t>(is));
  c.cond_depth = static_cast<int>(get<std::uint32_t>(is));
  c.enc_width = static_cast<int>(get<std::uint32_t>(is));
  c.dyn_width = static_cast<int>(get<std::uint32_t>(is));
  c.dyn_depth = static_cast<int>(get<std::uint32_t>(is));
  c.base_width = get<double>(is);

  ParamRanges ranges;
  const auto n_ranges = get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < n_ranges; ++k) {
    const double lo = get<double>(is);
    const double hi = get<double>(is);
    ranges.lohi.emplace_back(lo, hi);
  }

  PredictorModel m = create(c, 0, ranges);
  const auto n_arrays = get<std::uint32_t>(is);
  if (n_arrays != static_cast<std::uint32_t>(m.params_.array_count()))
    throw IoError("checkpoint array count mismatch");
  for (std::uint32_t k = 0; k < n_arrays; ++k) {
    const auto len = get<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rows = get<std::uint32_t>(is);
    const auto cols = get<std::uint32_t>(is);
    const int id = m.params_.find(name);
    if (id < 0) throw IoError("checkpoint names unknown array " + name);
    const auto& info = m.params_.info(id);
    if (info.rows != static_cast<int>(rows) || info.cols != static_cast<int>(cols))
      throw IoError("checkpoint shape mismatch for " + name);
    auto arr = m.params_.array(id);
    is.read(reinterpret_cast<char*>(arr.data()),
            static_cast<std::streamsize>(arr.size() * sizeof(double)));
    if (!is) throw IoError("truncated checkpoint array " + name);
  }
  return m;
}

}  // namespace kapi
