// Experiment driver: runs the manufactured-solution study end to end and
// reports results as CSV/JSON records plus a plain-text iteration table.
//
// Modes
//   solve        one configuration, full time loop, errors at the final time
//   oracle-check one time step solved both by the domain-decomposition solver
//                and by a direct factorization of the monolithic system;
//                reports the relative difference per field
//   converge     mesh refinement sweep at fixed nd = 2 with dt proportional
//                to h; reports L2 errors and observed rates
//   scalability  sweep over subdomain counts, coarseness ratios, and the two
//                material regimes; reports PCG iteration statistics
//
// The CSV output is fully deterministic: re-running a mode with the same
// configuration and thread count produces byte-identical bytes. Wall-clock
// timings and per-step iteration lists therefore live only in the JSON
// mirror.

#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "biotdd/assembly.hpp"
#include "biotdd/fetidp.hpp"

namespace biotdd {

struct RunConfig {
  std::string mode = "solve";

  // Cell axes. Single-entry lists in solve/oracle-check; the scalability
  // sweep defaults to the full grid below when the CLI leaves them unset.
  std::vector<int> nd_list = {2};
  std::vector<int> ratio_list = {8};                            // H/h
  std::vector<std::pair<double, double>> regimes = {{0.3, 1e-2}};  // (nu, kappa)

  double E = 1000.0;
  double alpha = 1.0;
  double c0 = 0.0;
  double delta_stab = 100.0;
  double dt = 0.00625;
  double t_end = 0.25;
  double tol = 1e-8;
  int max_iterations = 500;
  PrecondKind precond = PrecondKind::dirichlet;
  CoarseSpace coarse = CoarseSpace::edge_moments;

  // Also solve the first time step without a preconditioner and record the
  // iteration count next to the preconditioned one.
  bool compare_unpreconditioned = false;
  int unpreconditioned_max_iterations = 5000;

  // converge mode: mesh sizes (nd = 2 throughout) and the time step scale;
  // dt(m) = converge_dt_scale / m keeps dt proportional to h.
  std::vector<int> converge_m = {8, 16, 32};
  double converge_dt_scale = 0.025;

  int threads = 1;
  std::string out_dir = ".";
  std::string format = "both";  // csv | json | both
};

// One CSV row. Fields that do not apply to a mode keep their sentinels
// (-1 for counts, NaN for measurements). `note` and the timing/iteration
// details only appear in the JSON mirror.
struct ResultRecord {
  int schema_version = 1;
  std::string mode;
  int m = 0;
  int nd = 0;
  int ratio = 0;
  double nu = 0.0;
  double kappa = 0.0;
  double delta_stab = 0.0;
  double dt = 0.0;
  double t_end = 0.0;
  double tol = 0.0;
  std::string precond;
  int steps = 0;
  bool converged = false;
  int iters_max = -1;
  double iters_mean = 0.0;
  int iters_first = -1;
  int unprecond_iters_first = -1;
  double err_u = 0.0;
  double err_z = 0.0;
  double err_p = 0.0;
  double rate_u = 0.0;
  double rate_z = 0.0;
  double rate_p = 0.0;
  double oracle_diff_u = 0.0;
  double oracle_diff_z = 0.0;
  double oracle_diff_p = 0.0;

  // JSON-only extras.
  std::string note;
  std::vector<int> per_step_iterations;
  double wall_assembly_s = 0.0;
  double wall_factorization_s = 0.0;
  double wall_pcg_s = 0.0;
  double wall_total_s = 0.0;
};

ResultRecord make_result_record();  // all sentinels pre-filled

// Direct factorization of the monolithic system (bordered by the constant
// pressure mode when c0 = 0), returning the full solution state including
// boundary values. The reference the iterative path is checked against.
State monolithic_direct_solve(const BlockSystem& system, const Mesh& mesh,
                              const DofMap& dofmap);

// Full time loop for one cell (first entries of the config axes).
ResultRecord run_solve(const RunConfig& config);

// One time step, iterative vs direct. Requires m = nd * ratio <= 32 (the
// direct factorization cap); throws std::invalid_argument beyond it.
ResultRecord run_oracle_check(const RunConfig& config);

// Refinement sweep at nd = 2 over config.converge_m with dt = scale / m.
std::vector<ResultRecord> run_convergence(const RunConfig& config);

// Sweep over regimes x ratios x subdomain counts. A failing cell is
// recorded (converged = false, note set) and the sweep continues.
std::vector<ResultRecord> run_scalability(const RunConfig& config);

void write_csv(std::ostream& out, const std::vector<ResultRecord>& records);
void write_json(std::ostream& out, const std::vector<ResultRecord>& records);

// Iteration-count table (max over time steps), rows N = nd x nd, column
// groups per H/h with one sub-column per regime.
std::string iteration_table(const std::vector<ResultRecord>& records);

// Parses the command line, runs the requested mode, writes the output
// files. Returns 0 when every record passed, nonzero otherwise.
int run_cli(int argc, const char* const* argv);

}  // namespace biotdd
