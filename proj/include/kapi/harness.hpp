#pragma once

#include <string>
#include <vector>

#include "kapi/corrector.hpp"
#include "kapi/reference.hpp"
#include "kapi/training.hpp"

namespace kapi {

/// Relative discrete L2 error over all grid values. Throws GridMismatch on
/// incompatible specs and ZeroReference when ||ref|| = 0.
double relative_l2(const ref::SampledField& pred, const ref::SampledField& ref_field);

/// Uniform evaluation grids: Poisson 101x101 on [0,1]^2, transport families
/// 201x101 on (x, t).
ref::GridSpec family_eval_grid(Family f);

struct ErrorReport {
  Family family = Family::Poisson;
  TaskParams task;
  std::string regime;
  double e_pred = 0.0, e_corr = 0.0;
  int m_inh = 0, m_ref = 0, m_bg = 0;
  double ridge = 0.0;
  double train_s = 0.0, solve_s = 0.0;
  std::uint64_t seed = 0;
};

struct InstanceReport {
  Family family = Family::Poisson;
  TaskParams task;
  std::string method;  // "kapi" or "single-instance"
  double rel_l2 = 0.0;
  double train_s = 0.0, infer_s = 0.0;
  bool retraining_per_task = false;
};

enum class RunMode { Train, Solve, Eval, AblateGrid, AblateInstance, ExportGeometry };

struct TaskSpec {
  TaskParams task;
  std::string regime;
};

struct RunConfig {
  Family family = Family::Poisson;
  RunMode mode = RunMode::Eval;
  TrainConfig train;
  CorrectorConfig corr;
  std::vector<TaskSpec> tasks;
  std::vector<int> grid_sweep = {6, 8, 10, 12, 14, 16};
  std::string out_dir = "runs";
  std::string checkpoint;
  std::uint64_t seed = 0;
  int eval_nx = -1, eval_nt = -1;  // <0: family default
  std::string raw_text;            // canonical config text (hash input)
};

/// Flat key-value config with section prefixes (family, seed, train.*,
/// corrector.*, eval.*, task, sweep, checkpoint, out).
RunConfig parse_config_file(const std::string& path);
RunConfig parse_config_text(const std::string& text);

/// FNV-1a over the canonical config text and the effective seed.
std::string config_hash(const RunConfig& config);
/// out_dir/<family>-<hash>-s<seed>
std::string run_directory(const RunConfig& config);

ref::GridSpec eval_grid(const RunConfig& config);
ref::SampledField reference_field(Family family, const TaskParams& task,
                                  const ref::GridSpec& grid,
                                  ref::InitialCondition::Kind adv_ic);
ref::SampledField predictor_field(const PredictorModel& model, const TaskParams& task,
                                  const ref::GridSpec& grid);
ref::SampledField corrector_field(const CorrectorDictionary& dict, const ref::GridSpec& grid);

std::vector<ErrorReport> run_predictor_corrector(const RunConfig& config,
                                                 const PredictorModel& model,
                                                 double train_seconds = 0.0);

/// Uniform-only PIELM baseline over the resolution sweep; emits one guided
/// row plus per-resolution and best-of-sweep rows per task (regime suffixes
/// "/guided", "/uniform-N", "/uniform-best").
std::vector<ErrorReport> ablate_uniform_grid(const RunConfig& config, const PredictorModel& model,
                                             double train_seconds = 0.0);

std::vector<InstanceReport> ablate_single_instance(const RunConfig& config,
                                                   const PredictorModel& kapi_model,
                                                   double kapi_train_seconds);

void export_geometry(const std::string& path, const PredictorModel& model, const TaskParams& task,
                     int snapshots);
void export_geometry(const std::string& path, const CorrectorDictionary& dict);

void write_reports_csv(const std::string& path, std::span<const ErrorReport> reports);
void write_instance_csv(const std::string& path, std::span<const InstanceReport> reports);

int cli_main(int argc, char** argv);

}  // namespace kapi
