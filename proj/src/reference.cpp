#include "kapi/reference.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "kapi/geometry.hpp"
#include "kapi/linalg.hpp"

namespace kapi::ref {

void write_field(std::ostream& os, const SampledField& f) {
  char buf[64];
  os << f.grid.nx << ' ' << f.grid.ny << ' ';
  for (double v : {f.grid.x0, f.grid.x1, f.grid.y0, f.grid.y1}) {
    std::snprintf(buf, sizeof buf, "%.17g ", v);
    os << buf;
  }
  os << (f.grid.x_periodic ? 1 : 0) << '\n';
  for (int j = 0; j < f.grid.ny; ++j) {
    for (int i = 0; i < f.grid.nx; ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", f.at(i, j));
      os << buf << (i + 1 < f.grid.nx ? ' ' : '\n');
    }
  }
}

void write_field(const std::string& path, const SampledField& field) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path);
  write_field(os, field);
}

SampledField read_field(std::istream& is) {
  SampledField f;
  int per = 0;
  if (!(is >> f.grid.nx >> f.grid.ny >> f.grid.x0 >> f.grid.x1 >> f.grid.y0 >> f.grid.y1 >> per))
    throw IoError("malformed field header");
  f.grid.x_periodic = per != 0;
  f.values.resize(static_cast<Eigen::Index>(f.grid.nx) * f.grid.ny);
  for (Eigen::Index k = 0; k < f.values.size(); ++k)
    if (!(is >> f.values[k])) throw IoError("truncated field values");
  return f;
}

double mexican_hat_ic(double x0, double sigma, double x) {
  double sum = 0.0;
  for (int k = -1; k <= 1; ++k) {
    const double d = x - x0 + k;
    const double q = d * d / (sigma * sigma);
    sum += (1.0 - q) * std::exp(-0.5 * q);
  }
  return sum;
}

double InitialCondition::operator()(double x) const {
  if (kind == Kind::MexicanHat) return mexican_hat_ic(x0, width, x);
  const double d = geom::wrapped_distance(x - std::floor(x), x0);
  return std::exp(-0.5 * d * d / (width * width));
}

double poisson_forcing(std::span<const PoissonSource> sources, double x, double y) {
  double f = 0.0;
  for (const auto& s : sources) {
    const double r2 = (x - s.x0) * (x - s.x0) + (y - s.y0) * (y - s.y0);
    f += s.weight / (2.0 * M_PI * s.nu * s.nu) * std::exp(-0.5 * r2 / (s.nu * s.nu));
  }
  return f;
}

SampledField poisson_fd(std::span<const PoissonSource> sources, int n) {
  if (n < 17) throw Error("poisson_fd: grid too coarse (n < 17)");
  if (sources.empty()) throw Error("poisson_fd: no sources");
  const int m = n - 2;
  const double h = 1.0 / (n - 1);

  linalg::FivePointSystem sys;
  sys.n = m;
  sys.h = h;
  sys.rhs.resize(static_cast<Eigen::Index>(m) * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i)
      sys.rhs[static_cast<Eigen::Index>(j) * m + i] =
          poisson_forcing(sources, (i + 1) * h, (j + 1) * h);

  const linalg::Vector u = linalg::solve_five_point(sys);

  SampledField out;
  out.grid = GridSpec{n, n, 0.0, 1.0, 0.0, 1.0, false};
  out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n) * n);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i)
      out.at(i + 1, j + 1) = u[static_cast<Eigen::Index>(j) * m + i];
  return out;
}

double advection_exact(const InitialCondition& ic, double x, double t) {
  double z = x - t;
  z -= std::floor(z);
  return ic(z);
}

double advdiff_exact(double a, double nu, double x, double t) {
  const double w = 4.0 * t + 1.0;
  const double d = x - kAdvDiffCenter - a * t;
  return std::exp(-d * d / (nu * w)) / std::sqrt(w);
}

namespace {

// 7-point Gauss-Legendre nodes/weights on [-1, 1]
constexpr double kGlx[7] = {-0.9491079123427585, -0.7415311855993945, -0.4058451513773972, 0.0,
                            0.4058451513773972, 0.7415311855993945, 0.9491079123427585};
constexpr double kGlw[7] = {0.1294849661688697, 0.2797053914892766, 0.3818300505051189,
                            0.4179591836734694, 0.3818300505051189, 0.2797053914892766,
                            0.1294849661688697};

template <class F>
double gauss7(const F& f, double a, double b) {
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  double s = 0.0;
  for (int k = 0; k < 7; ++k) s += kGlw[k] * f(c + r * kGlx[k]);
  return r * s;
}

template <class F>
double adaptive_gauss(const F& f, double a, double b, double tol, int depth = 0) {
  const double whole = gauss7(f, a, b);
  const double mid = 0.5 * (a + b);
  const double split = gauss7(f, a, mid) + gauss7(f, mid, b);
  if (std::abs(split - whole) <= tol || depth >= 24) return split;
  return adaptive_gauss(f, a, mid, 0.5 * tol, depth + 1) +
         adaptive_gauss(f, mid, b, 0.5 * tol, depth + 1);
}

}  // namespace

CharacteristicMap::CharacteristicMap(double beta, double tol)
    : beta_(beta), tol_(tol), table_n_(2048) {
  if (std::abs(beta) >= 1.0) throw Error("CharacteristicMap: |beta| must be < 1");
  const auto slowness = [this](double x) { return 1.0 / speed(x); };
  node_s_.resize(static_cast<std::size_t>(table_n_) + 1);
  node_s_[0] = 0.0;
  const double hh = 1.0 / table_n_;
  for (int i = 0; i < table_n_; ++i)
    node_s_[i + 1] = node_s_[i] + adaptive_gauss(slowness, i * hh, (i + 1) * hh, 1e-14);
  period_ = node_s_[table_n_];
}

double CharacteristicMap::travel(double y) const {
  const double k = std::floor(y);
  const double frac = y - k;
  const double pos = frac * table_n_;
  int cell = std::min(static_cast<int>(pos), table_n_ - 1);
  const double a = static_cast<double>(cell) / table_n_;
  const auto slowness = [this](double x) { return 1.0 / speed(x); };
  return k * period_ + node_s_[cell] + adaptive_gauss(slowness, a, frac, 1e-13);
}

double CharacteristicMap::invert_base(double s) const {
  // bracket by table lookup, then bisection with secant refinement
  int lo = 0, hi = table_n_;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (node_s_[mid] <= s) lo = mid; else hi = mid;
  }
  double a = static_cast<double>(lo) / table_n_;
  double b = static_cast<double>(hi) / table_n_;
  double fa = node_s_[lo] - s, fb = node_s_[hi] - s;
  if (fa > 0.0 || fb < 0.0) throw RootNotBracketed("CharacteristicMap::invert_base");
  for (int it = 0; it < 200; ++it) {
    double m = (std::abs(fb - fa) > 1e-300) ? a - fa * (b - a) / (fb - fa) : 0.5 * (a + b);
    if (!(m > a && m < b)) m = 0.5 * (a + b);
    const double fm = travel(m) - s;
    if (std::abs(fm) <= tol_ || b - a <= tol_ * 1e-3) return m;
    if (fm < 0.0) { a = m; fa = fm; } else { b = m; fb = fm; }
  }
  return 0.5 * (a + b);
}

double CharacteristicMap::foot(double x, double t) const {
  const double xr = x - std::floor(x);
  double s = travel(xr) - t;
  const double k = std::floor(s / period_);
  const double y0 = invert_base(s - k * period_) + k;
  return y0 - std::floor(y0);
}

double CharacteristicMap::solution(const InitialCondition& ic, double x, double t) const {
  return ic(foot(x, t));
}

double varadv_exact(const InitialCondition& ic, double beta, double x, double t, double tol) {
  return CharacteristicMap(beta, tol).solution(ic, x, t);
}

}  // namespace kapi::ref
