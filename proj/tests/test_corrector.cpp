#include <doctest.h>

#include "kapi/corrector.hpp"
#include "kapi/detail/predictor_eval.hpp"
#include "kapi/harness.hpp"
#include "support.hpp"

using namespace kapi;
using test::small_model;

namespace {

double softplus_inv(double y) { return std::log(std::expm1(y)); }

/// Single-instance Poisson model rigged so atom 0 is exactly
/// (mu, mu, sigma) with near-unit gate and coefficient 1/gate.
PredictorModel rigged_poisson(double mu, double sigma, int M = 6) {
  ModelConfig c = ModelConfig::defaults(Family::Poisson);
  c.M = M;
  c.single_instance = true;
  auto model = PredictorModel::create(c, 1);
  auto raw = model.params().array(model.nets().raw_geom_id);
  for (int j = 0; j < M; ++j) {
    raw[j] = j == 0 ? 8.0 : -8.0;                                // gate logits
    raw[M + j] = 0.0;                                            // mu_x = 0.5
    raw[2 * M + j] = 0.0;                                        // mu_y = 0.5
    raw[3 * M + j] = softplus_inv(sigma - geom::kWidthFloor) - kSigmaRawOffset;
  }
  raw[M] = std::log(mu / (1.0 - mu));  // atom 0 center
  raw[2 * M] = std::log(mu / (1.0 - mu));
  auto coeff = model.params().array(model.nets().coeff_id);
  const double gate0 = 1.0 / (1.0 + std::exp(-8.0));
  coeff[0] = 1.0 / gate0;
  return model;
}

}  // namespace

TEST_CASE("background scaffold construction") {
  const auto atoms = background_scaffold(Family::Poisson, 4, 4, 1.2);
  REQUIRE(atoms.size() == 16);
  CHECK(atoms[0].p.mu_x == 0.0);
  CHECK(atoms[0].p.mu_y == 0.0);
  CHECK(atoms[15].p.mu_x == 1.0);
  CHECK(atoms[5].p.sigma == doctest::Approx(1.2 / 3.0).epsilon(1e-14));

  const auto corners = background_scaffold(Family::AdvDiff, 2, 2, 1.2);
  REQUIRE(corners.size() == 4);
  CHECK(corners[0].st.xi == 0.0);
  CHECK(corners[3].st.xi == 1.0);
  CHECK(corners[3].st.tau == 0.5);

  // periodic scaffold: the atom at x = 0 is the atom at x = 1
  const auto per = background_scaffold(Family::Advection, 4, 3, 1.2);
  for (const auto& a : per) {
    CHECK(a.st.periodic);
    CHECK(geom::atom_eval_st(a.st, 0.0, 0.3).phi ==
          doctest::Approx(geom::atom_eval_st(a.st, 1.0, 0.3).phi).epsilon(1e-13));
  }
  CHECK(background_scaffold(Family::Poisson, 1, 4, 1.2).empty());
}

TEST_CASE("top_scored_grid_points: ties and dedupe") {
  std::vector<double> flat(36, 0.0);
  const auto zero_case = top_scored_grid_points(flat, 6, 6, 4);
  CHECK(zero_case == std::vector<int>{0, 2, 4, 12});

  flat[21] = 5.0;  // single bump at (3, 3)
  const auto bump = top_scored_grid_points(flat, 6, 6, 3);
  REQUIRE(!bump.empty());
  CHECK(bump[0] == 21);
}

TEST_CASE("select_inherited scoring") {
  SUBCASE("dominant gate wins, ties break to the lower index") {
    ModelConfig c = ModelConfig::defaults(Family::Poisson);
    c.M = 6;
    c.single_instance = true;
    auto model = PredictorModel::create(c, 2);
    auto raw = model.params().array(model.nets().raw_geom_id);
    for (int j = 0; j < 6; ++j) raw[j] = -6.0;
    raw[3] = 6.0;
    auto coeff = model.params().array(model.nets().coeff_id);
    for (int j = 0; j < 6; ++j) coeff[j] = 1.0;
    const auto task = TaskParams::poisson(0.5, 0.5, 0.07);

    const auto top1 = select_inherited(model, task, 1, default_corrector_config(Family::Poisson));
    REQUIRE(top1.size() == 1);
    CHECK(top1[0].source_index == 3);

    for (int j = 0; j < 6; ++j) raw[j] = 0.0;  // all gates equal: tie-break by index
    const auto top2 = select_inherited(model, task, 2, default_corrector_config(Family::Poisson));
    REQUIRE(top2.size() == 2);
    CHECK(top2[0].source_index == 0);
    CHECK(top2[1].source_index == 1);

    const auto all = select_inherited(model, task, 6, default_corrector_config(Family::Poisson));
    CHECK(all.size() == 6);
    for (std::size_t k = 1; k < all.size(); ++k) CHECK(all[k - 1].score >= all[k].score);
  }

  SUBCASE("dynamic atoms are snapshotted on the time grid") {
    auto model = small_model(Family::Advection, 3, 5);
    auto cfg = default_corrector_config(Family::Advection);
    cfg.snapshots = 8;
    const auto task = TaskParams::advection(0.5, 0.07);
    const auto atoms = select_inherited(model, task, 2, cfg);
    REQUIRE(atoms.size() == 16);  // 2 atoms x 8 snapshots
    CHECK(atoms[0].st.tau == 0.0);
    CHECK(atoms[7].st.tau == doctest::Approx(1.0));
    const double dt = 1.0 / 7.0;
    CHECK(atoms[3].st.s == doctest::Approx(1.5 * dt).epsilon(1e-12));
    CHECK(atoms[0].st.periodic);
  }
}

TEST_CASE("refinement places atoms at predictor hot spots") {
  // rigged sharp bump: refinement must concentrate near it
  auto model = rigged_poisson(0.3, 0.05);
  auto cfg = default_corrector_config(Family::Poisson);
  cfg.m_refine = 8;
  cfg.probe_nx = 32;
  cfg.probe_nt = 32;
  const auto atoms = extract_refinement(model, TaskParams::poisson(0.3, 0.3, 0.05), cfg);
  REQUIRE(atoms.size() == 8);
  // top refinement atom lands within one probe spacing of the bump apex
  CHECK(std::hypot(atoms[0].p.mu_x - 0.3, atoms[0].p.mu_y - 0.3) <= 2.0 / 33.0 + 1e-9);
}

TEST_CASE("assemble_system structure") {
  SUBCASE("poisson single atom, single interior point") {
    auto model = rigged_poisson(0.5, 0.2, 2);
    const auto task = TaskParams::poisson(0.5, 0.5, 0.07);
    std::vector<CorrectorAtom> atoms(1);
    atoms[0].prov = Provenance::Background;
    atoms[0].planar = true;
    atoms[0].p = {0.4, 0.6, 0.15};
    CorrectorConfig cfg = default_corrector_config(Family::Poisson);
    cfg.colloc_nx = 1;
    cfg.colloc_nt = 1;
    cfg.anchor_n = 0;
    const auto sys = assemble_system(model, task, atoms, cfg);
    REQUIRE(sys.A.rows() == 1);
    REQUIRE(sys.A.cols() == 1);

    // independent product-rule expansion of -lap(trial * G) at (0.5, 0.5)
    const double x = 0.5, y = 0.5, sg = 0.15;
    const double dx = x - 0.4, dy = y - 0.6, r2 = dx * dx + dy * dy;
    const double G = std::exp(-r2 / (sg * sg));
    const double Gx = -2.0 * dx / (sg * sg) * G;
    const double Gy = -2.0 * dy / (sg * sg) * G;
    const double Glap = (-4.0 / (sg * sg) + 4.0 * r2 / (sg * sg * sg * sg)) * G;
    const double trial = x * (1 - x) * y * (1 - y);
    const double tx = (1 - 2 * x) * y * (1 - y), ty = x * (1 - x) * (1 - 2 * y);
    const double tlap = -2 * y * (1 - y) - 2 * x * (1 - x);
    const double expect = -(trial * Glap + 2 * (tx * Gx + ty * Gy) + tlap * G);
    CHECK(sys.A(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(sys.b(0) == doctest::Approx(ref::poisson_forcing(
                          std::vector<ref::PoissonSource>{{0.5, 0.5, 0.07, 1.0}}, 0.5, 0.5))
                          .epsilon(1e-12));
    CHECK(sys.blocks.size() == 1);
  }

  SUBCASE("transport interior right-hand side is homogeneous") {
    auto model = small_model(Family::AdvDiff, 5);
    const auto task = TaskParams::advdiff(0.75, 0.03);
    const auto atoms = background_scaffold(Family::AdvDiff, 4, 3, 1.2);
    CorrectorConfig cfg = default_corrector_config(Family::AdvDiff);
    cfg.colloc_nx = 6;
    cfg.colloc_nt = 4;
    cfg.ic_n = 5;
    cfg.bc_n = 4;
    const auto sys = assemble_system(model, task, atoms, cfg);
    for (int r = 0; r < 24; ++r) CHECK(sys.b(r) == 0.0);
    // IC rows carry the initial profile
    CHECK(sys.b(24) == doctest::Approx(cfg.w_ic * kapi::detail::advdiff_profile(task.nu, 0.0).u0));
    CHECK(sys.A.rows() == 24 + 5 + 4);
  }

  SUBCASE("empty dictionary raises SingularSystem") {
    auto model = small_model(Family::Poisson, 6);
    CorrectorConfig cfg = default_corrector_config(Family::Poisson);
    cfg.use_inherited = false;
    cfg.use_refinement = false;
    cfg.bg_nx = 1;  // below the scaffold minimum: empty dictionary
    CHECK_THROWS_AS(correct(model, TaskParams::poisson(0.5, 0.5, 0.07), cfg), SingularSystem);
  }
}

TEST_CASE("manufactured poisson solution is recovered exactly") {
  const double sigma = 0.15;
  auto model = rigged_poisson(0.5, sigma);
  const auto task = TaskParams::poisson(0.5, 0.5, 0.07);

  // independent oracle: f = -lap(trial * G) for the rigged atom
  auto manufactured = [&](double x, double y) {
    const double dx = x - 0.5, dy = y - 0.5, r2 = dx * dx + dy * dy;
    const double G = std::exp(-r2 / (sigma * sigma));
    const double Gx = -2.0 * dx / (sigma * sigma) * G;
    const double Gy = -2.0 * dy / (sigma * sigma) * G;
    const double Glap = (-4.0 / (sigma * sigma) + 4.0 * r2 / std::pow(sigma, 4)) * G;
    const double trial = x * (1 - x) * y * (1 - y);
    const double tx = (1 - 2 * x) * y * (1 - y), ty = x * (1 - x) * (1 - 2 * y);
    const double tlap = -2 * y * (1 - y) - 2 * x * (1 - x);
    return -(trial * Glap + 2 * (tx * Gx + ty * Gy) + tlap * G);
  };

  CorrectorConfig cfg = default_corrector_config(Family::Poisson);
  cfg.forcing_override = manufactured;
  const auto result = correct(model, task, cfg);
  CHECK(result.colloc_residual <= 1e-8);

  // evaluation error against trial * G on the family evaluation grid
  double worst = 0.0;
  for (int j = 0; j <= 100; ++j) {
    for (int i = 0; i <= 100; ++i) {
      const double x = i / 100.0, y = j / 100.0;
      const double trial = x * (1 - x) * y * (1 - y);
      const double truth =
          trial * std::exp(-((x - 0.5) * (x - 0.5) + (y - 0.5) * (y - 0.5)) / (sigma * sigma));
      worst = std::max(worst, std::abs(eval_corrector(result.dict, x, y) - truth));
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("appending atoms never hurts the ridge-free collocation residual") {
  CounterRng rng(101);
  auto model = small_model(Family::Poisson, 7);
  const auto task = TaskParams::poisson(0.5, 0.5, 0.07);
  CorrectorConfig cfg = default_corrector_config(Family::Poisson);
  cfg.colloc_nx = 10;
  cfg.colloc_nt = 10;
  cfg.anchor_n = 2;

  for (int rep = 0; rep < 20; ++rep) {
    std::vector<CorrectorAtom> atoms;
    const int base = 4 + static_cast<int>(rng.below(4));
    for (int m = 0; m < base + 2; ++m) {
      CorrectorAtom a;
      a.planar = true;
      a.p = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.08, 0.3)};
      atoms.push_back(a);
    }
    const std::span<const CorrectorAtom> small_dict(atoms.data(), base);
    const auto sys_small = assemble_system(model, task, small_dict, cfg);
    const auto sys_big = assemble_system(model, task, atoms, cfg);
    linalg::Vector c_small, c_big;
    try {
      c_small = linalg::ridge_lstsq(sys_small.A, sys_small.b, 0.0);
      c_big = linalg::ridge_lstsq(sys_big.A, sys_big.b, 0.0);
    } catch (const SingularSystem&) {
      continue;  // random near-duplicate atoms
    }
    const double r_small = (sys_small.A * c_small - sys_small.b).norm();
    const double r_big = (sys_big.A * c_big - sys_big.b).norm();
    CHECK(r_big <= r_small + 1e-12);
  }
}

TEST_CASE("uniform-only path equals correct() with guidance disabled") {
  auto model = small_model(Family::Poisson, 8);
  CounterRng rng(102);
  for (double& c : model.params().array(model.nets().coeff_id)) c = rng.uniform(-1, 1);
  const auto task = TaskParams::poisson(0.5, 0.5, 0.05);

  CorrectorConfig cfg = default_corrector_config(Family::Poisson);
  cfg.use_inherited = false;
  cfg.use_refinement = false;
  cfg.bg_nx = 6;
  cfg.bg_nt = 6;
  const auto via_correct = correct(model, task, cfg);
  CHECK(via_correct.dict.m_inh == 0);
  CHECK(via_correct.dict.m_ref == 0);
  CHECK(via_correct.dict.m_bg == 36);
  CHECK(via_correct.dict.size() == 36);

  const auto bg = background_scaffold(Family::Poisson, 6, 6, cfg.bg_width_factor);
  const auto sys_a = assemble_system(model, task, bg, cfg);
  const auto sys_b = assemble_system(model, task, via_correct.dict.atoms, cfg);
  CHECK((sys_a.A - sys_b.A).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sys_a.b - sys_b.b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full corrector run on an untrained model is well formed") {
  for (Family f : {Family::Poisson, Family::Advection, Family::AdvDiff, Family::VarAdv}) {
    auto model = small_model(f, 9);
    CounterRng rng(103);
    if (f == Family::Poisson)
      for (double& c : model.params().array(model.nets().coeff_id)) c = rng.uniform(-1, 1);
    const auto task = test::random_task(f, rng);
    CorrectorConfig cfg = default_corrector_config(f);
    cfg.m_refine = 8;
    cfg.bg_nx = 6;
    cfg.bg_nt = 6;
    cfg.colloc_nx = f == Family::Poisson ? 20 : 24;
    cfg.colloc_nt = 20;
    cfg.probe_nx = 24;
    cfg.probe_nt = 24;
    const auto result = correct(model, task, cfg);
    CHECK(result.dict.size() == result.dict.m_inh + result.dict.m_ref + result.dict.m_bg);
    CHECK(result.dict.coeff.allFinite());
    // ridge optimality on the emitted system
    const auto sys = assemble_system(model, task, result.dict.atoms, cfg);
    const auto gap = (sys.A.transpose() * (sys.A * result.dict.coeff - sys.b) +
                      result.dict.ridge_used * result.dict.coeff)
                         .cwiseAbs()
                         .maxCoeff();
    CHECK(gap <= 1e-8 * ((sys.A.transpose() * sys.b).cwiseAbs().maxCoeff() + 1.0));
  }
}
