#pragma once

#include <functional>
#include <string>
#include <vector>

#include "kapi/linalg.hpp"
#include "kapi/predictor.hpp"
#include "kapi/reference.hpp"

namespace kapi {

enum class Provenance { Inherited, Refinement, Background };
const char* provenance_name(Provenance p);

/// One frozen dictionary atom. Poisson atoms are planar Gaussians multiplied
/// by the boundary trial factor; transport atoms are space-time kernels
/// (periodic families use the smooth periodic spatial form).
struct CorrectorAtom {
  Provenance prov = Provenance::Background;
  bool planar = false;
  geom::PlanarAtom p;
  geom::SpaceTimeAtom st;
  int source_index = -1;  // predictor atom index for inherited atoms
  double gate = 0.0;
  double score = 0.0;
};

struct RowBlock {
  enum class Kind { Interior, Bc, Ic, Anchor };
  Kind kind;
  int begin = 0, end = 0;
  double weight = 1.0;
};

struct LinearSystem {
  linalg::DenseMatrix A;
  linalg::Vector b;
  double ridge = 0.0;
  std::vector<RowBlock> blocks;
};

struct CorrectorConfig {
  int m_inherit = -1;  // < 0: family default (32 Poisson, 24 transport)
  int m_refine = 32;
  int bg_nx = -1, bg_nt = -1;      // background grid (Poisson 10x10, transport 12x8)
  int snapshots = 8;               // dynamic-atom snapshot times
  double snapshot_width_factor = 1.5;
  int probe_nx = 64, probe_nt = 64;  // refinement probe grid
  int colloc_nx = -1, colloc_nt = -1;
  int anchor_n = 12;               // Poisson anchor grid (per axis)
  double anchor_weight = 0.05;
  int ic_n = 64, bc_n = 32;
  double w_bc = 10.0, w_ic = 10.0;
  double ridge = 1e-8;
  std::vector<double> ridge_candidates;  // advection picks the best of these
  bool use_inherited = true, use_refinement = true;
  double bg_width_factor = 1.2;
  double ref_width_factor = 1.5;
  /// Advection initial profile entering the IC rows.
  ref::InitialCondition::Kind adv_ic = ref::InitialCondition::Kind::PeriodicGaussian;
  /// Test hook: replaces the task forcing in interior right-hand sides
  /// (manufactured-solution oracles).
  std::function<double(double, double)> forcing_override;
};

CorrectorConfig default_corrector_config(Family f);

struct CorrectorDictionary {
  Family family = Family::Poisson;
  TaskParams task;
  std::vector<CorrectorAtom> atoms;
  linalg::Vector coeff;
  int m_inh = 0, m_ref = 0, m_bg = 0;
  double ridge_used = 0.0;

  int size() const { return static_cast<int>(atoms.size()); }
};

/// Top-k predictor atoms by |gate| x amplitude score; dynamic atoms are
/// snapshotted onto `snapshots` equispaced times. Ties break toward the lower
/// atom index.
std::vector<CorrectorAtom> select_inherited(const PredictorModel& model, const TaskParams& task,
                                            int k, const CorrectorConfig& config);

/// Probe-grid refinement: top-q points of the combined normalized
/// |gradient| + |PDE residual| score of u_pred, duplicates within one grid
/// spacing suppressed.
std::vector<CorrectorAtom> extract_refinement(const PredictorModel& model, const TaskParams& task,
                                              const CorrectorConfig& config);

/// Deterministic placement core behind extract_refinement (exposed for the
/// degenerate flat-score and argmax contracts): returns up to q flat indices
/// by descending score, row-major tie-break, Chebyshev-adjacent duplicates
/// suppressed.
std::vector<int> top_scored_grid_points(std::span<const double> scores, int nx, int ny, int q);

/// Fixed tensor scaffold over the domain; widths 1.2x the grid spacing.
std::vector<CorrectorAtom> background_scaffold(Family family, int nx, int nt_or_ny,
                                               double width_factor);

LinearSystem assemble_system(const PredictorModel& model, const TaskParams& task,
                             std::span<const CorrectorAtom> atoms, const CorrectorConfig& config);

struct CorrectorResult {
  CorrectorDictionary dict;
  double solve_seconds = 0.0;
  double colloc_residual = 0.0;  // ||A c - b||_2 of the kept solve
  int rows = 0, cols = 0;
};

/// Full pipeline: inherit, refine, scaffold, assemble, ridge least squares.
CorrectorResult correct(const PredictorModel& model, const TaskParams& task,
                        const CorrectorConfig& config);

double eval_corrector(const CorrectorDictionary& dict, double x, double y_or_t);

/// Text table (provenance, centers, widths, temporal center/width,
/// coefficient) feeding the geometry figures.
void write_dictionary(const std::string& path, const CorrectorDictionary& dict);

}  // namespace kapi
