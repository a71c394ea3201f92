#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kapi/harness.hpp"
#include "support.hpp"

using namespace kapi;
namespace fs = std::filesystem;

namespace {

ref::SampledField make_field(int nx, int ny, double fill) {
  ref::SampledField f;
  f.grid = ref::GridSpec{nx, ny, 0, 1, 0, 1, false};
  f.values = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(nx) * ny, fill);
  return f;
}

}  // namespace

TEST_CASE("relative_l2 metric") {
  auto ref_field = make_field(5, 4, 2.0);
  CounterRng rng(111);
  for (Eigen::Index k = 0; k < ref_field.values.size(); ++k)
    ref_field.values[k] = rng.uniform(0.5, 2.0);

  CHECK(relative_l2(ref_field, ref_field) == 0.0);

  auto twice = ref_field;
  twice.values *= 2.0;
  CHECK(relative_l2(twice, ref_field) == doctest::Approx(1.0).epsilon(1e-14));

  auto zero = ref_field;
  zero.values.setZero();
  CHECK(relative_l2(zero, ref_field) == doctest::Approx(1.0).epsilon(1e-14));

  for (double c : {0.3, 1.7, 4.0}) {
    auto scaled = ref_field;
    scaled.values *= c;
    CHECK(relative_l2(scaled, ref_field) == doctest::Approx(std::abs(c - 1.0)).epsilon(1e-12));
  }

  auto other = make_field(5, 5, 1.0);
  CHECK_THROWS_AS(relative_l2(other, ref_field), GridMismatch);
  CHECK_THROWS_AS(relative_l2(zero, zero), ZeroReference);
}

TEST_CASE("config parsing") {
  const std::string text = R"(
# poisson desk config
family = poisson
seed = 11
out = tmp_runs
train.epochs = 5
train.M = 8
train.lr = 5e-4
corrector.m_inherit = 4
corrector.ridge = 1e-7
task = 0.5 0.5 0.07 in-range
task = 0.3 0.3 0.06 out-of-range
sweep = 4 6
eval.nx = 41
eval.nt = 41
)";
  const auto cfg = parse_config_text(text);
  CHECK(cfg.family == Family::Poisson);
  CHECK(cfg.seed == 11);
  CHECK(cfg.train.epochs == 5);
  CHECK(cfg.train.arch.M == 8);
  CHECK(cfg.train.lr == 5e-4);
  CHECK(cfg.corr.m_inherit == 4);
  CHECK(cfg.corr.ridge == 1e-7);
  REQUIRE(cfg.tasks.size() == 2);
  CHECK(cfg.tasks[0].task.x0 == 0.5);
  CHECK(cfg.tasks[0].regime == "in-range");
  CHECK(cfg.tasks[1].regime == "out-of-range");
  CHECK(cfg.grid_sweep == std::vector<int>{4, 6});
  CHECK(cfg.eval_nx == 41);

  CHECK_THROWS_AS(parse_config_text("family = poisson\nbogus.key = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("train.epochs = 5\n"), ConfigError);  // family missing

  // hash covers the seed so run directories never collide across seeds
  auto cfg2 = cfg;
  cfg2.seed = 12;
  CHECK(config_hash(cfg) != config_hash(cfg2));
  CHECK(run_directory(cfg).find("poisson-") != std::string::npos);
}

TEST_CASE("family evaluation grids") {
  const auto gp = family_eval_grid(Family::Poisson);
  CHECK(gp.nx == 101);
  CHECK(gp.ny == 101);
  CHECK_FALSE(gp.x_periodic);
  const auto ga = family_eval_grid(Family::Advection);
  CHECK(ga.nx == 201);
  CHECK(ga.ny == 101);
  CHECK(ga.x_periodic);
  CHECK(ga.y1 == 1.0);
  const auto gd = family_eval_grid(Family::AdvDiff);
  CHECK(gd.y1 == 0.5);
  CHECK_FALSE(gd.x_periodic);
}

TEST_CASE("reference fields match their oracles") {
  SUBCASE("poisson reference is the FD solution restricted to the grid") {
    const auto task = TaskParams::poisson(0.5, 0.5, 0.07);
    ref::GridSpec grid{51, 51, 0, 1, 0, 1, false};
    const auto field = reference_field(Family::Poisson, task, grid,
                                       ref::InitialCondition::Kind::PeriodicGaussian);
    const ref::PoissonSource src{0.5, 0.5, 0.07, 1.0};
    const auto fd = ref::poisson_fd({&src, 1}, 201);  // 51 - 1 divides 200
    CHECK(field.at(25, 25) == fd.at(100, 100));
    CHECK(field.at(10, 30) == fd.at(40, 120));
  }

  SUBCASE("transport references") {
    const auto grid = family_eval_grid(Family::Advection);
    const auto task = TaskParams::advection(0.5, 0.07);
    const auto field = reference_field(Family::Advection, task, grid,
                                       ref::InitialCondition::Kind::PeriodicGaussian);
    const ref::InitialCondition ic{ref::InitialCondition::Kind::PeriodicGaussian, 0.5, 0.07};
    CHECK(field.at(3, 7) == ref::advection_exact(ic, grid.x(3), grid.y(7)));
  }
}

TEST_CASE("geometry export shapes and normalization") {
  const std::string dir = "tmp_export_test";
  fs::create_directories(dir);

  SUBCASE("static poisson export: one row per atom") {
    auto model = test::small_model(Family::Poisson, 121, 16);
    CounterRng rng(122);
    for (double& c : model.params().array(model.nets().coeff_id)) c = rng.uniform(-1, 1);
    export_geometry(dir + "/geom.csv", model, TaskParams::poisson(0.5, 0.5, 0.07), 8);
    std::ifstream is(dir + "/geom.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "id,provenance,center_x,center_y,width_x,width_y,gate,coeff");
    int rows = 0;
    double max_coeff = 0.0;
    while (std::getline(is, line)) {
      ++rows;
      const auto pos = line.find_last_of(',');
      const double c = std::stod(line.substr(pos + 1));
      CHECK(c >= 0.0);
      CHECK(c <= 1.0);
      max_coeff = std::max(max_coeff, c);
    }
    CHECK(rows == 16);
    CHECK(max_coeff == 1.0);
  }

  SUBCASE("dynamic export: one row per atom per snapshot") {
    auto model = test::small_model(Family::Advection, 123, 5);
    export_geometry(dir + "/geom_dyn.csv", model, TaskParams::advection(0.5, 0.07), 8);
    std::ifstream is(dir + "/geom_dyn.csv");
    std::string line;
    std::getline(is, line);
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 5 * 8);
  }

  fs::remove_all(dir);
}

TEST_CASE("csv report schema") {
  std::vector<ErrorReport> reports(1);
  reports[0].family = Family::AdvDiff;
  reports[0].task = TaskParams::advdiff(0.75, 0.030);
  reports[0].regime = "in-range";
  reports[0].e_pred = 0.123456789012345678;
  reports[0].e_corr = 1e-4;
  reports[0].m_inh = 192;
  reports[0].m_ref = 32;
  reports[0].m_bg = 96;
  reports[0].ridge = 1e-8;
  reports[0].seed = 7;

  const std::string path = "tmp_report.csv";
  write_reports_csv(path, reports);
  std::ifstream is(path);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  CHECK(header == "family,p1,p2,p3,regime,e_pred,e_corr,m_inh,m_ref,m_bg,ridge,train_s,solve_s,seed");
  CHECK(row.find("advdiff,0.75,0.029999999999999999,,in-range,0.12345678901234568,") == 0);
  CHECK(row.find(",192,32,96,") != std::string::npos);
  fs::remove(path);
}

TEST_CASE("zero-epoch instance ablation is well-formed with unit errors") {
  RunConfig cfg;
  cfg.family = Family::Poisson;
  cfg.train = default_train_config(Family::Poisson);
  cfg.train.arch.M = 8;
  cfg.train.arch.cond_width = 8;
  cfg.train.epochs = 0;
  cfg.eval_nx = 33;
  cfg.eval_nt = 33;
  cfg.tasks.push_back({TaskParams::poisson(0.5, 0.5, 0.07), "in-range"});

  const auto kapi_model = PredictorModel::create(cfg.train.arch, 0);
  const auto reports = ablate_single_instance(cfg, kapi_model, 0.0);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].method == "kapi");
  CHECK_FALSE(reports[0].retraining_per_task);
  CHECK(reports[1].method == "single-instance");
  CHECK(reports[1].retraining_per_task);
  // untrained models have zero output coefficients: error is exactly one
  CHECK(reports[0].rel_l2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(reports[1].rel_l2 == doctest::Approx(1.0).epsilon(1e-12));

  const std::string path = "tmp_instance.csv";
  write_instance_csv(path, reports);
  std::ifstream is(path);
  std::string header, r1, r2;
  std::getline(is, header);
  std::getline(is, r1);
  std::getline(is, r2);
  CHECK(header == "family,p1,p2,p3,method,rel_l2,train_s,infer_s,retraining_per_new_task");
  CHECK(r1.find(",kapi,") != std::string::npos);
  CHECK(r1.find(",No") != std::string::npos);
  CHECK(r2.find(",single-instance,") != std::string::npos);
  CHECK(r2.find(",Yes") != std::string::npos);
  fs::remove(path);
}

TEST_CASE("cli end-to-end smoke: train, eval, ablations, exports") {
  const std::string dir = "tmp_cli_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg_path = dir + "/tiny.cfg";
  {
    std::ofstream os(cfg_path);
    os << "family = poisson\n"
       << "seed = 5\n"
       << "out = " << dir << "/runs\n"
       << "train.epochs = 4\n"
       << "train.M = 6\n"
       << "train.interior = 32\n"
       << "corrector.m_inherit = 4\n"
       << "corrector.m_refine = 6\n"
       << "corrector.bg_nx = 5\n"
       << "corrector.bg_nt = 5\n"
       << "corrector.colloc_nx = 16\n"
       << "corrector.colloc_nt = 16\n"
       << "corrector.probe_nx = 16\n"
       << "corrector.probe_nt = 16\n"
       << "corrector.anchor_n = 4\n"
       << "eval.nx = 26\n"
       << "eval.nt = 26\n"
       << "sweep = 4 5\n"
       << "task = 0.5 0.5 0.07 in-range\n";
  }

  auto run = [&](std::vector<std::string> args) {
    std::vector<char*> argv;
    args.insert(args.begin(), "kapi");
    for (auto& a : args) argv.push_back(a.data());
    return cli_main(static_cast<int>(argv.size()), argv.data());
  };

  SUBCASE("unknown subcommand exits 1 with a synopsis") {
    CHECK(run({"frobnicate", "--config", cfg_path}) == 1);
  }

  SUBCASE("eval without a checkpoint reports the missing file") {
    CHECK(run({"eval", "--config", cfg_path}) == 1);
  }

  SUBCASE("train then eval, ablate and export") {
    REQUIRE(run({"train", "--config", cfg_path}) == 0);
    // the run directory is derived from the config hash and seed
    std::string run_dir;
    for (const auto& e : fs::directory_iterator(dir + "/runs")) run_dir = e.path().string();
    REQUIRE(!run_dir.empty());
    CHECK(fs::exists(run_dir + "/checkpoint.kapi"));
    CHECK(fs::exists(run_dir + "/loss_history.txt"));

    CHECK(run({"eval", "--config", cfg_path}) == 0);
    CHECK(fs::exists(run_dir + "/report.csv"));

    CHECK(run({"ablate-grid", "--config", cfg_path}) == 0);
    CHECK(fs::exists(run_dir + "/grid_ablation.csv"));

    CHECK(run({"export-geometry", "--config", cfg_path, "--what", "predictor"}) == 0);
    CHECK(fs::exists(run_dir + "/geometry-0.csv"));

    CHECK(run({"solve", "--config", cfg_path}) == 0);
    CHECK(fs::exists(run_dir + "/dictionary-0.txt"));
    CHECK(fs::exists(run_dir + "/u_corr-0.txt"));

    // determinism: retraining with the same seed reproduces the checkpoint
    std::ifstream f1(run_dir + "/checkpoint.kapi", std::ios::binary);
    std::string before((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    REQUIRE(run({"train", "--config", cfg_path}) == 0);
    std::ifstream f2(run_dir + "/checkpoint.kapi", std::ios::binary);
    std::string after((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(before == after);
  }

  fs::remove_all(dir);
}
