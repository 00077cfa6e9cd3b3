// Experiment driver implementation: mode runners, result serialization,
// command-line front end.

#include "biotdd/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <tuple>
#include <utility>

#include "CLI11.hpp"
#include "json.hpp"

#include "biotdd/dofmap.hpp"
#include "biotdd/linalg.hpp"
#include "biotdd/mesh.hpp"

namespace biotdd {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Shortest exact decimal representation; locale-independent, so CSV output
// is byte-stable across environments.
std::string fmt_double(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_double_short(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

double rel_diff(const Vector& a, const Vector& b) {
  const double scale = b.norm();
  const double diff = (a - b).norm();
  return scale > 0.0 ? diff / scale : diff;
}

struct Problem {
  Mesh mesh;
  SubdomainPartition partition;
  DofMap dofmap;
  ModelParams params;
};

Problem make_problem(const RunConfig& config, int nd, int ratio, double nu,
                     double kappa, double dt) {
  Problem problem;
  problem.mesh = build_structured_mesh(nd * ratio);
  problem.partition = build_partition(problem.mesh, nd);
  problem.dofmap =
      build_dofmap(problem.mesh, problem.partition, BcSpec::test_problem());
  problem.params = make_model_params(config.E, nu, kappa, config.alpha,
                                     config.c0, config.delta_stab, dt,
                                     config.t_end);
  return problem;
}

int checked_step_count(double t_end, double dt) {
  const auto steps = static_cast<int>(std::llround(t_end / dt));
  if (steps < 1 || std::abs(steps * dt - t_end) > 1e-9 * std::max(t_end, 1.0)) {
    throw std::invalid_argument(
        "driver: t_end must be a positive integer multiple of dt");
  }
  return steps;
}

void fill_cell_identity(ResultRecord& rec, const RunConfig& config,
                        const std::string& mode, int nd, int ratio, double nu,
                        double kappa, double dt) {
  rec.mode = mode;
  rec.m = nd * ratio;
  rec.nd = nd;
  rec.ratio = ratio;
  rec.nu = nu;
  rec.kappa = kappa;
  rec.delta_stab = config.delta_stab;
  rec.dt = dt;
  rec.t_end = config.t_end;
  rec.tol = config.tol;
  rec.precond = precond_name(config.precond);
}

void finish_iteration_stats(ResultRecord& rec) {
  if (rec.per_step_iterations.empty()) {
    return;
  }
  rec.iters_first = rec.per_step_iterations.front();
  rec.iters_max = *std::max_element(rec.per_step_iterations.begin(),
                                    rec.per_step_iterations.end());
  rec.iters_mean =
      std::accumulate(rec.per_step_iterations.begin(),
                      rec.per_step_iterations.end(), 0.0) /
      static_cast<double>(rec.per_step_iterations.size());
}

// Full time loop for one configuration cell.
ResultRecord solve_cell(const RunConfig& config, const std::string& mode,
                        int nd, int ratio, double nu, double kappa, double dt,
                        int threads) {
  const auto t_total = Clock::now();
  ResultRecord rec = make_result_record();
  fill_cell_identity(rec, config, mode, nd, ratio, nu, kappa, dt);

  const int steps = checked_step_count(config.t_end, dt);
  const Problem problem = make_problem(config, nd, ratio, nu, kappa, dt);
  State state = initial_state(problem.mesh);

  auto t0 = Clock::now();
  BlockSystem system =
      assemble_time_step_system(problem.mesh, problem.partition,
                                problem.dofmap, problem.params, dt, state);
  rec.wall_assembly_s += seconds_since(t0);

  t0 = Clock::now();
  const FetidpSolver solver(system, problem.dofmap, problem.partition, threads,
                            config.coarse);
  rec.wall_factorization_s = seconds_since(t0);

  bool all_steps_converged = true;
  for (int n = 1; n <= steps; ++n) {
    const double t_n = n * dt;
    if (n > 1) {
      t0 = Clock::now();
      update_rhs(system, problem.mesh, problem.partition, problem.dofmap,
                 problem.params, t_n, state);
      rec.wall_assembly_s += seconds_since(t0);
    }

    t0 = Clock::now();
    const PreparedRhs prep = solver.prepare_rhs(system);
    auto [lambda, report] = solver.solve_interface(
        prep.f_delta_star, config.precond, config.tol, config.max_iterations);
    rec.per_step_iterations.push_back(report.iterations);

    if (n == 1 && config.compare_unpreconditioned) {
      const auto unprecond = solver.solve_interface(
          prep.f_delta_star, PrecondKind::none, config.tol,
          config.unpreconditioned_max_iterations);
      if (unprecond.second.converged) {
        rec.unprecond_iters_first = unprecond.second.iterations;
      } else {
        rec.note = "unpreconditioned first-step solve hit the iteration cap; ";
      }
    }

    if (!report.converged) {
      all_steps_converged = false;
      rec.note += "PCG hit the iteration cap at step " + std::to_string(n);
      rec.wall_pcg_s += seconds_since(t0);
      break;
    }

    const FetidpSolution solution =
        solver.recover_solution(prep, lambda, system);
    state = solution.state;
    rec.wall_pcg_s += seconds_since(t0);
  }

  rec.steps = static_cast<int>(rec.per_step_iterations.size());
  rec.converged = all_steps_converged && rec.steps == steps;
  finish_iteration_stats(rec);

  if (rec.converged) {
    const ErrorNorms errors =
        error_norms(state, problem.mesh, problem.params, config.t_end);
    rec.err_u = errors.u;
    rec.err_z = errors.z;
    rec.err_p = errors.p;
  }
  rec.wall_total_s = seconds_since(t_total);
  return rec;
}

void require_axes(const RunConfig& config) {
  if (config.nd_list.empty() || config.ratio_list.empty() ||
      config.regimes.empty()) {
    throw std::invalid_argument("driver: empty configuration axis");
  }
}

}  // namespace

ResultRecord make_result_record() {
  ResultRecord rec;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  rec.iters_mean = nan;
  rec.err_u = rec.err_z = rec.err_p = nan;
  rec.rate_u = rec.rate_z = rec.rate_p = nan;
  rec.oracle_diff_u = rec.oracle_diff_z = rec.oracle_diff_p = nan;
  return rec;
}

State monolithic_direct_solve(const BlockSystem& system, const Mesh& mesh,
                              const DofMap& dofmap) {
  const int n = system.n_total();
  const int n_ext = n + (system.pressure_nullspace ? 1 : 0);
  const int off_p = system.n_u + system.n_z;

  std::vector<Triplet> triplets;
  triplets.reserve(system.monolithic.nnz() + 2 * system.n_p);
  for (int row = 0; row < system.monolithic.n_rows; ++row) {
    for (int k = system.monolithic.row_offsets[row];
         k < system.monolithic.row_offsets[row + 1]; ++k) {
      triplets.push_back(
          {row, system.monolithic.col_indices[k], system.monolithic.values[k]});
    }
  }
  if (system.pressure_nullspace) {
    // Border with the constant-pressure mode to pin the pressure gauge.
    for (int t = 0; t < system.n_p; ++t) {
      triplets.push_back({off_p + t, n, system.p_null[t]});
      triplets.push_back({n, off_p + t, system.p_null[t]});
    }
  }
  const SparseMatrix a = csr_from_triplets(n_ext, n_ext, std::move(triplets));
  const Factorization factor = factorize_symmetric_indefinite(a);

  Vector rhs = Vector::Zero(n_ext);
  rhs.segment(0, system.n_u) = system.f1;
  rhs.segment(system.n_u, system.n_z) = system.f2;
  rhs.segment(off_p, system.n_p) = system.f3;
  const Vector x = factor.solve(rhs);

  State state = initial_state(mesh);
  state.t = system.t;
  const int n_scalar = 2 * static_cast<int>(mesh.nodes.size());
  for (const auto& [dof, value] : system.boundary_values) {
    if (dof < n_scalar) {
      state.u[dof] = value;
    } else {
      state.z[dof - n_scalar] = value;
    }
  }
  for (int i = 0; i < system.n_u; ++i) {
    state.u[system.free_u[i]] = x[i];
  }
  for (int i = 0; i < system.n_z; ++i) {
    state.z[system.free_z[i] - n_scalar] = x[system.n_u + i];
  }
  for (int t = 0; t < system.n_p; ++t) {
    state.p[t] = x[off_p + t];
  }
  (void)dofmap;
  return state;
}

ResultRecord run_solve(const RunConfig& config) {
  require_axes(config);
  return solve_cell(config, "solve", config.nd_list.front(),
                    config.ratio_list.front(), config.regimes.front().first,
                    config.regimes.front().second, config.dt, config.threads);
}

ResultRecord run_oracle_check(const RunConfig& config) {
  require_axes(config);
  const int nd = config.nd_list.front();
  const int ratio = config.ratio_list.front();
  const auto [nu, kappa] = config.regimes.front();
  const int m = nd * ratio;
  if (m > 32) {
    throw std::invalid_argument("oracle-check: m = " + std::to_string(m) +
                                " exceeds the direct-factorization cap of 32");
  }

  const auto t_total = Clock::now();
  ResultRecord rec = make_result_record();
  fill_cell_identity(rec, config, "oracle-check", nd, ratio, nu, kappa,
                     config.dt);

  const Problem problem = make_problem(config, nd, ratio, nu, kappa, config.dt);
  const State zero = initial_state(problem.mesh);

  auto t0 = Clock::now();
  const BlockSystem system =
      assemble_time_step_system(problem.mesh, problem.partition,
                                problem.dofmap, problem.params, config.dt,
                                zero);
  rec.wall_assembly_s = seconds_since(t0);

  const State direct = monolithic_direct_solve(system, problem.mesh,
                                               problem.dofmap);

  t0 = Clock::now();
  const FetidpSolver solver(system, problem.dofmap, problem.partition,
                            config.threads, config.coarse);
  rec.wall_factorization_s = seconds_since(t0);

  t0 = Clock::now();
  const PreparedRhs prep = solver.prepare_rhs(system);
  const auto [lambda, report] = solver.solve_interface(
      prep.f_delta_star, config.precond, config.tol, config.max_iterations);
  const FetidpSolution solution = solver.recover_solution(prep, lambda, system);
  rec.wall_pcg_s = seconds_since(t0);

  rec.steps = 1;
  rec.per_step_iterations = {report.iterations};
  finish_iteration_stats(rec);

  rec.oracle_diff_u = rel_diff(solution.state.u, direct.u);
  rec.oracle_diff_z = rel_diff(solution.state.z, direct.z);
  rec.oracle_diff_p = rel_diff(solution.state.p, direct.p);

  const double kMatchTol = 1e-6;
  rec.converged = report.converged && rec.oracle_diff_u <= kMatchTol &&
                  rec.oracle_diff_z <= kMatchTol &&
                  rec.oracle_diff_p <= kMatchTol;
  if (!report.converged) {
    rec.note = "PCG hit the iteration cap";
  } else if (!rec.converged) {
    const double worst = std::max(
        {rec.oracle_diff_u, rec.oracle_diff_z, rec.oracle_diff_p});
    const char* field = worst == rec.oracle_diff_u
                            ? "u"
                            : (worst == rec.oracle_diff_z ? "z" : "p");
    rec.note = std::string("direct/iterative mismatch above 1e-6 in ") + field;
  }
  rec.wall_total_s = seconds_since(t_total);
  return rec;
}

std::vector<ResultRecord> run_convergence(const RunConfig& config) {
  const int nd = 2;
  std::vector<ResultRecord> records;
  records.reserve(config.converge_m.size());
  for (const int m : config.converge_m) {
    if (m < nd || m % nd != 0) {
      throw std::invalid_argument("converge: mesh size " + std::to_string(m) +
                                  " is not a multiple of nd = 2");
    }
    const double dt = config.converge_dt_scale / m;
    records.push_back(solve_cell(config, "converge", nd, m / nd,
                                 config.regimes.front().first,
                                 config.regimes.front().second, dt,
                                 config.threads));
  }
  for (std::size_t i = 1; i < records.size(); ++i) {
    const ResultRecord& prev = records[i - 1];
    ResultRecord& cur = records[i];
    if (!prev.converged || !cur.converged) {
      continue;
    }
    const double refine = std::log(static_cast<double>(cur.m) / prev.m);
    cur.rate_u = std::log(prev.err_u / cur.err_u) / refine;
    cur.rate_z = std::log(prev.err_z / cur.err_z) / refine;
    cur.rate_p = std::log(prev.err_p / cur.err_p) / refine;
  }
  return records;
}

std::vector<ResultRecord> run_scalability(const RunConfig& config) {
  require_axes(config);
  struct Cell {
    double nu;
    double kappa;
    int ratio;
    int nd;
  };
  std::vector<Cell> cells;
  for (const auto& [nu, kappa] : config.regimes) {
    for (const int ratio : config.ratio_list) {
      for (const int nd : config.nd_list) {
        cells.push_back({nu, kappa, ratio, nd});
      }
    }
  }

  std::vector<ResultRecord> records(cells.size());
  // Cells are independent; spread them over the available threads and keep
  // each cell single-threaded when more than one runs at a time.
  const int cell_threads = std::max(1, config.threads);
  const int inner_threads = cell_threads > 1 ? 1 : config.threads;
  parallel_for(static_cast<int>(cells.size()), cell_threads, [&](int i) {
    const Cell& cell = cells[i];
    try {
      records[i] = solve_cell(config, "scalability", cell.nd, cell.ratio,
                              cell.nu, cell.kappa, config.dt, inner_threads);
    } catch (const std::exception& e) {
      ResultRecord rec = make_result_record();
      fill_cell_identity(rec, config, "scalability", cell.nd, cell.ratio,
                         cell.nu, cell.kappa, config.dt);
      rec.converged = false;
      rec.note = e.what();
      records[i] = rec;
    }
  });
  return records;
}

void write_csv(std::ostream& out, const std::vector<ResultRecord>& records) {
  out << "schema_version,mode,m,nd,ratio,nu,kappa,delta_stab,dt,t_end,tol,"
         "precond,steps,converged,iters_max,iters_mean,iters_first,"
         "unprecond_iters_first,err_u,err_z,err_p,rate_u,rate_z,rate_p,"
         "oracle_diff_u,oracle_diff_z,oracle_diff_p\n";
  for (const ResultRecord& r : records) {
    out << std::to_string(r.schema_version) << ',' << r.mode << ','
        << std::to_string(r.m) << ',' << std::to_string(r.nd) << ','
        << std::to_string(r.ratio) << ',' << fmt_double(r.nu) << ','
        << fmt_double(r.kappa) << ',' << fmt_double(r.delta_stab) << ','
        << fmt_double(r.dt) << ',' << fmt_double(r.t_end) << ','
        << fmt_double(r.tol) << ',' << r.precond << ','
        << std::to_string(r.steps) << ',' << (r.converged ? '1' : '0') << ','
        << std::to_string(r.iters_max) << ',' << fmt_double(r.iters_mean)
        << ',' << std::to_string(r.iters_first) << ','
        << std::to_string(r.unprecond_iters_first) << ','
        << fmt_double(r.err_u) << ',' << fmt_double(r.err_z) << ','
        << fmt_double(r.err_p) << ',' << fmt_double(r.rate_u) << ','
        << fmt_double(r.rate_z) << ',' << fmt_double(r.rate_p) << ','
        << fmt_double(r.oracle_diff_u) << ',' << fmt_double(r.oracle_diff_z)
        << ',' << fmt_double(r.oracle_diff_p) << '\n';
  }
}

void write_json(std::ostream& out, const std::vector<ResultRecord>& records) {
  auto number_or_null = [](double v) {
    nlohmann::ordered_json j;
    if (std::isnan(v)) {
      j = nullptr;
    } else {
      j = v;
    }
    return j;
  };
  nlohmann::ordered_json root = nlohmann::ordered_json::array();
  for (const ResultRecord& r : records) {
    nlohmann::ordered_json j;
    j["schema_version"] = r.schema_version;
    j["mode"] = r.mode;
    j["m"] = r.m;
    j["nd"] = r.nd;
    j["ratio"] = r.ratio;
    j["nu"] = r.nu;
    j["kappa"] = r.kappa;
    j["delta_stab"] = r.delta_stab;
    j["dt"] = r.dt;
    j["t_end"] = r.t_end;
    j["tol"] = r.tol;
    j["precond"] = r.precond;
    j["steps"] = r.steps;
    j["converged"] = r.converged;
    j["iters_max"] = r.iters_max;
    j["iters_mean"] = number_or_null(r.iters_mean);
    j["iters_first"] = r.iters_first;
    j["unprecond_iters_first"] = r.unprecond_iters_first;
    j["err_u"] = number_or_null(r.err_u);
    j["err_z"] = number_or_null(r.err_z);
    j["err_p"] = number_or_null(r.err_p);
    j["rate_u"] = number_or_null(r.rate_u);
    j["rate_z"] = number_or_null(r.rate_z);
    j["rate_p"] = number_or_null(r.rate_p);
    j["oracle_diff_u"] = number_or_null(r.oracle_diff_u);
    j["oracle_diff_z"] = number_or_null(r.oracle_diff_z);
    j["oracle_diff_p"] = number_or_null(r.oracle_diff_p);
    j["note"] = r.note;
    j["per_step_iterations"] = r.per_step_iterations;
    j["wall_assembly_s"] = r.wall_assembly_s;
    j["wall_factorization_s"] = r.wall_factorization_s;
    j["wall_pcg_s"] = r.wall_pcg_s;
    j["wall_total_s"] = r.wall_total_s;
    root.push_back(std::move(j));
  }
  out << root.dump(2) << '\n';
}

std::string iteration_table(const std::vector<ResultRecord>& records) {
  std::vector<int> ratios;
  std::vector<int> nds;
  std::vector<std::pair<double, double>> regimes;
  for (const ResultRecord& r : records) {
    if (std::find(ratios.begin(), ratios.end(), r.ratio) == ratios.end()) {
      ratios.push_back(r.ratio);
    }
    if (std::find(nds.begin(), nds.end(), r.nd) == nds.end()) {
      nds.push_back(r.nd);
    }
    const std::pair<double, double> regime{r.nu, r.kappa};
    if (std::find(regimes.begin(), regimes.end(), regime) == regimes.end()) {
      regimes.push_back(regime);
    }
  }
  std::sort(ratios.begin(), ratios.end());
  std::sort(nds.begin(), nds.end());

  std::map<std::tuple<int, double, int>, const ResultRecord*> by_cell;
  for (const ResultRecord& r : records) {
    by_cell[{r.ratio, r.nu, r.nd}] = &r;
  }

  const int label_width = 7;
  const int col_width = 11;
  std::ostringstream out;
  out << "PCG iteration counts, max over time steps (precond = "
      << (records.empty() ? std::string("-") : records.front().precond)
      << ", tol = "
      << fmt_double_short(records.empty() ? 0.0 : records.front().tol)
      << ")\n\n";

  out << std::setw(label_width) << "";
  for (const int ratio : ratios) {
    std::ostringstream group;
    group << "H/h=" << ratio;
    out << std::setw(col_width * static_cast<int>(regimes.size()))
        << group.str();
  }
  out << '\n' << std::setw(label_width) << "N";
  for (std::size_t g = 0; g < ratios.size(); ++g) {
    for (const auto& regime : regimes) {
      out << std::setw(col_width) << ("nu=" + fmt_double_short(regime.first));
    }
  }
  out << '\n';
  for (const int nd : nds) {
    out << std::setw(label_width)
        << (std::to_string(nd) + "x" + std::to_string(nd));
    for (const int ratio : ratios) {
      for (const auto& regime : regimes) {
        const auto it = by_cell.find({ratio, regime.first, nd});
        std::string cell = "-";
        if (it != by_cell.end() && it->second->converged &&
            it->second->iters_max >= 0) {
          cell = std::to_string(it->second->iters_max);
        }
        out << std::setw(col_width) << cell;
      }
    }
    out << '\n';
  }
  return out.str();
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Stabilized three-field Biot solver with a FETI-DP method"};
  RunConfig config;
  std::string mode = "solve";
  std::string precond = "dirichlet";
  std::string coarse_space = "edge-moments";
  int nsub = 0;
  int ratio = 0;
  const double unset = std::numeric_limits<double>::quiet_NaN();
  double nu = unset;
  double perm = unset;

  app.add_option("--mode", mode,
                 "solve | oracle-check | converge | scalability")
      ->capture_default_str();
  app.add_option("--nsub", nsub, "subdomains per side");
  app.add_option("--ratio", ratio, "elements per subdomain side (H/h)");
  app.add_option("--nu", nu, "Poisson ratio");
  app.add_option("--perm", perm, "permeability");
  app.add_option("--delta-stab", config.delta_stab,
                 "pressure stabilization parameter")
      ->capture_default_str();
  app.add_option("--dt", config.dt, "time step")->capture_default_str();
  app.add_option("--t-end", config.t_end, "final time")->capture_default_str();
  app.add_option("--tol", config.tol, "PCG relative residual tolerance")
      ->capture_default_str();
  app.add_option("--precond", precond, "dirichlet | dirichlet-a-only | none")
      ->capture_default_str();
  app.add_option("--coarse", coarse_space, "edge-moments | edge-averages | vertex")
      ->capture_default_str();
  app.add_option("--threads", config.threads, "worker thread count")
      ->capture_default_str();
  app.add_option("--out", config.out_dir, "output directory")
      ->capture_default_str();
  app.add_option("--format", config.format, "csv | json | both")
      ->capture_default_str();
  app.add_flag("--compare-unpreconditioned", config.compare_unpreconditioned,
               "also solve the first step without preconditioning");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  std::vector<ResultRecord> records;
  try {
    config.mode = mode;
    config.precond = parse_precond(precond);
    config.coarse = parse_coarse_space(coarse_space);
    if (config.threads < 1) {
      throw std::invalid_argument("--threads must be at least 1");
    }
    if (config.format != "csv" && config.format != "json" &&
        config.format != "both") {
      throw std::invalid_argument("--format must be csv, json, or both");
    }
    const bool sweep = mode == "scalability";
    if (nsub > 0) {
      config.nd_list = {nsub};
    } else if (sweep) {
      config.nd_list = {2, 3, 4, 5, 6, 7, 8};
    }
    if (ratio > 0) {
      config.ratio_list = {ratio};
    } else if (sweep) {
      config.ratio_list = {8, 12, 16};
    }
    if (!std::isnan(nu) || !std::isnan(perm)) {
      config.regimes = {{std::isnan(nu) ? 0.3 : nu,
                         std::isnan(perm) ? 1e-2 : perm}};
    } else if (sweep) {
      config.regimes = {{0.3, 1e-2}, {0.4999, 1e-7}};
    }

    if (mode == "solve") {
      records.push_back(run_solve(config));
    } else if (mode == "oracle-check") {
      records.push_back(run_oracle_check(config));
    } else if (mode == "converge") {
      records = run_convergence(config);
    } else if (mode == "scalability") {
      records = run_scalability(config);
    } else {
      throw std::invalid_argument("unknown mode: " + mode);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  bool ok = !records.empty();
  for (const ResultRecord& r : records) {
    std::cout << r.mode << " m=" << r.m << " nd=" << r.nd
              << " nu=" << fmt_double_short(r.nu)
              << " kappa=" << fmt_double_short(r.kappa);
    if (r.iters_max >= 0) {
      std::cout << " iters_max=" << r.iters_max;
    }
    if (!std::isnan(r.err_p)) {
      std::cout << " err_u=" << fmt_double_short(r.err_u)
                << " err_z=" << fmt_double_short(r.err_z)
                << " err_p=" << fmt_double_short(r.err_p);
    }
    if (!std::isnan(r.oracle_diff_p)) {
      std::cout << " diff_u=" << fmt_double_short(r.oracle_diff_u)
                << " diff_z=" << fmt_double_short(r.oracle_diff_z)
                << " diff_p=" << fmt_double_short(r.oracle_diff_p);
    }
    std::cout << (r.converged ? " [ok]" : " [FAILED]");
    if (!r.note.empty()) {
      std::cout << "  (" << r.note << ")";
    }
    std::cout << '\n';
    ok = ok && r.converged;
  }

  // The refinement study must show monotonically decreasing errors.
  if (mode == "converge") {
    for (std::size_t i = 1; i < records.size(); ++i) {
      if (!records[i].converged || !records[i - 1].converged) {
        continue;
      }
      if (records[i].err_u >= records[i - 1].err_u ||
          records[i].err_z >= records[i - 1].err_z ||
          records[i].err_p >= records[i - 1].err_p) {
        std::cout << "non-monotone error between m=" << records[i - 1].m
                  << " and m=" << records[i].m << '\n';
        ok = false;
      }
    }
  }

  try {
    std::filesystem::create_directories(config.out_dir);
    const std::filesystem::path dir(config.out_dir);
    if (config.format == "csv" || config.format == "both") {
      std::ofstream csv(dir / "results.csv",
                        std::ios::out | std::ios::binary | std::ios::trunc);
      write_csv(csv, records);
      if (!csv) {
        throw std::runtime_error("failed to write results.csv");
      }
    }
    if (config.format == "json" || config.format == "both") {
      std::ofstream json(dir / "results.json",
                         std::ios::out | std::ios::binary | std::ios::trunc);
      write_json(json, records);
      if (!json) {
        throw std::runtime_error("failed to write results.json");
      }
    }
    if (mode == "scalability") {
      std::ofstream table(dir / "table1_repro.txt",
                          std::ios::out | std::ios::binary | std::ios::trunc);
      table << iteration_table(records);
      if (!table) {
        throw std::runtime_error("failed to write table1_repro.txt");
      }
      std::cout << '\n' << iteration_table(records);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  return ok ? 0 : 1;
}

}  // namespace biotdd
