#include <doctest.h>

#include <sstream>

#include "kapi/reference.hpp"
#include "kapi/rng.hpp"
#include "support.hpp"

using namespace kapi;
using namespace kapi::ref;

TEST_CASE("poisson_fd basics") {
  SUBCASE("zero-weight forcing gives the zero solution") {
    std::vector<PoissonSource> src{{0.5, 0.5, 0.07, 0.0}};
    const auto u = poisson_fd(src, 33);
    CHECK(u.values.cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("linear superposition of two sources") {
    std::vector<PoissonSource> a{{0.4, 0.5, 0.08, 1.0}};
    std::vector<PoissonSource> b{{0.6, 0.45, 0.06, 1.0}};
    std::vector<PoissonSource> both{a[0], b[0]};
    const auto ua = poisson_fd(a, 49), ub = poisson_fd(b, 49), uab = poisson_fd(both, 49);
    CHECK((uab.values - ua.values - ub.values).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SUBCASE("boundary stays exactly zero") {
    std::vector<PoissonSource> src{{0.5, 0.5, 0.07, 1.0}};
    const auto u = poisson_fd(src, 33);
    for (int i = 0; i < 33; ++i) {
      CHECK(u.at(i, 0) == 0.0);
      CHECK(u.at(i, 32) == 0.0);
      CHECK(u.at(0, i) == 0.0);
      CHECK(u.at(32, i) == 0.0);
    }
  }
}

TEST_CASE("advection_exact transport") {
  InitialCondition ic{InitialCondition::Kind::PeriodicGaussian, 0.5, 0.07};
  CounterRng rng(41);
  for (int rep = 0; rep < 50; ++rep) {
    const double x = rng.uniform();
    CHECK(advection_exact(ic, x, 0.0) == doctest::Approx(ic(x)).epsilon(1e-14));
    CHECK(advection_exact(ic, x, 1.0) == doctest::Approx(ic(x)).epsilon(1e-12));
  }
  // packet peak transported from 0.5 to 0.75 at t = 0.25
  CHECK(advection_exact(ic, 0.75, 0.25) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("advdiff_exact closed form") {
  CHECK(advdiff_exact(0.7, 0.03, 0.31, 0.0) ==
        doctest::Approx(std::exp(-(0.31 - 0.2) * (0.31 - 0.2) / 0.03)).epsilon(1e-14));

  for (double t : {0.1, 0.25, 0.5}) {
    const double a = 0.85, peak_x = 0.2 + a * t;
    CHECK(advdiff_exact(a, 0.02, peak_x, t) ==
          doctest::Approx(1.0 / std::sqrt(4.0 * t + 1.0)).epsilon(1e-14));
  }

  SUBCASE("plug-in PDE residual via symbolic partials") {
    CounterRng rng(42);
    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
      const double a = rng.uniform(0.5, 1.0), nu = rng.uniform(0.008, 0.05);
      const double x = rng.uniform(), t = rng.uniform(0.0, 0.5);
      const double w = 4.0 * t + 1.0, q = nu * w, d = x - 0.2 - a * t;
      const double u = advdiff_exact(a, nu, x, t);
      const double ux = -2.0 * d / q * u;
      const double uxx = (4.0 * d * d / (q * q) - 2.0 / q) * u;
      const double ut = u * (-2.0 / w + 2.0 * a * d / q + 4.0 * nu * d * d / (q * q));
      worst = std::max(worst, std::abs(ut + a * ux - nu * uxx));
    }
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("varadv_exact characteristics") {
  InitialCondition ic{InitialCondition::Kind::PeriodicGaussian, 0.5, 0.07};

  SUBCASE("beta = 0 reduces to constant-speed advection") {
    CounterRng rng(43);
    CharacteristicMap map(0.0);
    for (int rep = 0; rep < 200; ++rep) {
      const double x = rng.uniform(), t = rng.uniform(0.0, 1.0);
      CHECK(std::abs(map.solution(ic, x, t) - advection_exact(ic, x, t)) <= 1e-9);
    }
  }

  SUBCASE("t = 0 identity") {
    CharacteristicMap map(0.45);
    CounterRng rng(44);
    for (int rep = 0; rep < 50; ++rep) {
      const double x = rng.uniform();
      CHECK(std::abs(map.solution(ic, x, 0.0) - ic(x)) <= 1e-9);
    }
  }

  SUBCASE("constancy along RK4-integrated characteristics") {
    CounterRng rng(45);
    for (double beta : {0.25, 0.45, 0.7}) {
      CharacteristicMap map(beta);
      for (int rep = 0; rep < 20; ++rep) {
        const double x0 = rng.uniform(), t_end = rng.uniform(0.1, 1.0);
        // integrate dx/dt = a(x) forward with RK4
        const int steps = 4000;
        const double dt = t_end / steps;
        double x = x0;
        for (int s = 0; s < steps; ++s) {
          const double k1 = map.speed(x);
          const double k2 = map.speed(x + 0.5 * dt * k1);
          const double k3 = map.speed(x + 0.5 * dt * k2);
          const double k4 = map.speed(x + dt * k3);
          x += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        x -= std::floor(x);
        CHECK(std::abs(map.solution(ic, x, t_end) - ic(x0)) <= 1e-6);
      }
    }
  }

  SUBCASE("period travel time matches the closed form") {
    for (double beta : {0.2, 0.5, 0.7}) {
      CharacteristicMap map(beta);
      CHECK(map.period_time() ==
            doctest::Approx(1.0 / std::sqrt(1.0 - beta * beta)).epsilon(1e-11));
    }
  }
}

TEST_CASE("mexican hat initial condition") {
  const double sigma = 0.07;
  CHECK(mexican_hat_ic(0.5, sigma, 0.5) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(mexican_hat_ic(0.5, sigma, 0.5 + sigma)) <= 1e-12);
  CHECK(std::abs(mexican_hat_ic(0.5, sigma, 0.5 - sigma)) <= 1e-12);

  // the truncated image sum is periodic across the domain seam for centers
  // inside the training range and sigma <= 0.1
  CounterRng rng(46);
  for (double s : {0.05, 0.1}) {
    for (int rep = 0; rep < 100; ++rep) {
      const double x0 = rng.uniform(0.2, 0.8);
      const double eps = rng.uniform(0.0, 1e-3);
      CHECK(std::abs(mexican_hat_ic(x0, s, eps) - mexican_hat_ic(x0, s, eps + 1.0)) <= 1e-12);
      CHECK(std::abs(mexican_hat_ic(x0, s, 0.0) - mexican_hat_ic(x0, s, 1.0)) <= 1e-12);
    }
  }
}

TEST_CASE("field text serialization round trip") {
  SampledField f;
  f.grid = GridSpec{4, 3, 0.0, 1.0, 0.0, 0.5, true};
  f.values.resize(12);
  CounterRng rng(47);
  for (int k = 0; k < 12; ++k) f.values[k] = rng.uniform(-5, 5);

  std::stringstream ss;
  write_field(ss, f);
  const auto g = read_field(ss);
  CHECK(g.grid == f.grid);
  CHECK((g.values - f.values).cwiseAbs().maxCoeff() == 0.0);
}
