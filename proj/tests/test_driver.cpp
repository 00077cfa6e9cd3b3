// Driver tests: mode runners, the direct reference solve, serialization
// byte-stability, the iteration table, and the command-line front end.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "biotdd/assembly.hpp"
#include "biotdd/driver.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

using namespace biotdd;

namespace {

const char* const kCsvHeader =
    "schema_version,mode,m,nd,ratio,nu,kappa,delta_stab,dt,t_end,tol,"
    "precond,steps,converged,iters_max,iters_mean,iters_first,"
    "unprecond_iters_first,err_u,err_z,err_p,rate_u,rate_z,rate_p,"
    "oracle_diff_u,oracle_diff_z,oracle_diff_p\n";

std::string csv_string(const std::vector<ResultRecord>& records) {
  std::ostringstream out;
  write_csv(out, records);
  return out.str();
}

// Nodal/centroid interpolant of the exact solution on the free dofs, in
// monolithic ordering.
Vector interpolant(const BlockSystem& bs, const Mesh& mesh,
                   const ModelParams& params, double t) {
  Vector x(bs.n_total());
  for (int i = 0; i < bs.n_u; ++i) {
    const int node = bs.free_u[i] / 2;
    const ExactState e =
        exact_solution_eval(mesh.nodes[node].x, mesh.nodes[node].y, t, params);
    x[i] = e.u[bs.free_u[i] % 2];
  }
  for (int i = 0; i < bs.n_z; ++i) {
    const int node = (bs.free_z[i] - 2 * mesh.n_nodes()) / 2;
    const ExactState e =
        exact_solution_eval(mesh.nodes[node].x, mesh.nodes[node].y, t, params);
    x[bs.n_u + i] = e.z[bs.free_z[i] % 2];
  }
  for (int tr = 0; tr < bs.n_p; ++tr) {
    double cx = 0.0, cy = 0.0;
    for (int k = 0; k < 3; ++k) {
      cx += mesh.nodes[static_cast<size_t>(
                           mesh.triangles[static_cast<size_t>(tr)][k])].x / 3.0;
      cy += mesh.nodes[static_cast<size_t>(
                           mesh.triangles[static_cast<size_t>(tr)][k])].y / 3.0;
    }
    x[bs.n_u + bs.n_z + tr] = exact_solution_eval(cx, cy, t, params).p;
  }
  return x;
}

// Silences and collects run_cli's terminal output for the duration of a test.
struct StreamCapture {
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  StreamCapture()
      : old_out(std::cout.rdbuf(out.rdbuf())),
        old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~StreamCapture() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

int cli(const std::vector<const char*>& args) {
  return run_cli(static_cast<int>(args.size()), args.data());
}

}  // namespace

TEST_CASE("csv schema and formatting are frozen") {
  ResultRecord rec = make_result_record();
  rec.mode = "solve";
  rec.m = 8;
  rec.nd = 2;
  rec.ratio = 4;
  // Dyadic values render without rounding artifacts.
  rec.nu = 0.5;
  rec.kappa = 0.25;
  rec.delta_stab = 100.0;
  rec.dt = 0.125;
  rec.t_end = 0.5;
  rec.tol = 0.25;
  rec.precond = "dirichlet";
  rec.steps = 2;
  rec.converged = true;
  rec.iters_max = 5;
  rec.iters_mean = 4.5;
  rec.iters_first = 4;

  const std::string expected =
      std::string(kCsvHeader) +
      "1,solve,8,2,4,0.5,0.25,100,0.125,0.5,0.25,dirichlet,2,1,5,4.5,4,-1,"
      "nan,nan,nan,nan,nan,nan,nan,nan,nan\n";
  CHECK(csv_string({rec}) == expected);
  CHECK(csv_string({rec}) == csv_string({rec}));
  CHECK(csv_string({}) == kCsvHeader);
}

TEST_CASE("json mirror uses nulls for absent measurements") {
  ResultRecord rec = make_result_record();
  rec.mode = "scalability";
  rec.m = 16;
  rec.nd = 2;
  rec.ratio = 8;
  rec.nu = 0.3;
  rec.kappa = 1e-2;
  rec.precond = "dirichlet";
  rec.converged = true;
  rec.steps = 2;
  rec.iters_max = 6;
  rec.iters_mean = 5.5;
  rec.iters_first = 5;
  rec.err_u = 1.5e-4;
  rec.note = "note text";
  rec.per_step_iterations = {5, 6};

  std::ostringstream out;
  write_json(out, {rec});
  const auto root = nlohmann::json::parse(out.str());
  REQUIRE(root.is_array());
  REQUIRE(root.size() == 1);
  const auto& j = root[0];
  CHECK(j["schema_version"] == 1);
  CHECK(j["mode"] == "scalability");
  CHECK(j["m"] == 16);
  CHECK(j["converged"] == true);
  CHECK(j["iters_max"] == 6);
  CHECK(j["unprecond_iters_first"] == -1);
  CHECK(j["err_u"] == doctest::Approx(1.5e-4));
  CHECK(j["err_z"].is_null());     // NaN sentinel becomes null
  CHECK(j["rate_u"].is_null());
  CHECK(j["oracle_diff_p"].is_null());
  CHECK(j["note"] == "note text");
  CHECK(j["per_step_iterations"] == std::vector<int>({5, 6}));
  CHECK(j["wall_total_s"].is_number());
}

TEST_CASE("monolithic direct solve satisfies the assembled equations") {
  for (const auto& [nu, kappa] :
       std::vector<std::pair<double, double>>{{0.3, 1e-2}, {0.4999, 1e-7}}) {
    CAPTURE(nu);
    const Mesh mesh = build_structured_mesh(8);
    const SubdomainPartition part = build_partition(mesh, 2);
    const DofMap dofs = build_dofmap(mesh, part, BcSpec::test_problem());
    const ModelParams params =
        make_model_params(1000.0, nu, kappa, 1.0, 0.0, 100.0, 0.00625, 0.25);
    const BlockSystem sys = assemble_time_step_system(
        mesh, part, dofs, params, params.dt, initial_state(mesh));
    const State state = monolithic_direct_solve(sys, mesh, dofs);

    // Scatter the state back into monolithic ordering and check the residual.
    Vector x(sys.n_total());
    for (int i = 0; i < sys.n_u; ++i) x[i] = state.u[sys.free_u[i]];
    for (int i = 0; i < sys.n_z; ++i) {
      x[sys.n_u + i] = state.z[sys.free_z[i] - 2 * mesh.n_nodes()];
    }
    x.segment(sys.n_u + sys.n_z, sys.n_p) = state.p;
    Vector f(sys.n_total());
    f << sys.f1, sys.f2, sys.f3;
    Vector r(sys.n_total());
    sys.monolithic.multiply(x, r);
    r -= f;
    CHECK(r.norm() <= 1e-9 * f.norm());

    // Dirichlet data is injected verbatim; the pressure gauge is zero mean.
    for (const auto& [dof, value] : sys.boundary_values) {
      const double got = dof < 2 * mesh.n_nodes()
                             ? state.u[dof]
                             : state.z[dof - 2 * mesh.n_nodes()];
      CHECK(got == value);
    }
    CHECK(std::abs(sys.p_null.dot(state.p)) <=
          1e-10 * sys.p_null.norm() * state.p.norm());
    CHECK(state.t == params.dt);
  }
}

TEST_CASE("oracle check: iterative equals direct within tolerance") {
  RunConfig config;
  config.mode = "oracle-check";

  struct Cell {
    int nd, ratio;
    double nu, kappa;
  };
  for (const Cell& cell : {Cell{2, 8, 0.3, 1e-2}, Cell{4, 4, 0.3, 1e-2},
                           Cell{2, 8, 0.4999, 1e-7}}) {
    CAPTURE(cell.nd);
    CAPTURE(cell.nu);
    config.nd_list = {cell.nd};
    config.ratio_list = {cell.ratio};
    config.regimes = {{cell.nu, cell.kappa}};
    const ResultRecord rec = run_oracle_check(config);
    CHECK(rec.mode == "oracle-check");
    CHECK(rec.m == cell.nd * cell.ratio);
    CHECK(rec.steps == 1);
    CHECK(rec.converged);
    CHECK(rec.iters_first == rec.iters_max);
    CHECK(rec.oracle_diff_u <= 1e-6);
    CHECK(rec.oracle_diff_z <= 1e-6);
    CHECK(rec.oracle_diff_p <= 1e-6);
    CHECK(rec.note.empty());
  }

  // Beyond the direct-factorization cap the mode refuses to run.
  config.nd_list = {4};
  config.ratio_list = {16};
  config.regimes = {{0.3, 1e-2}};
  CHECK_THROWS_AS((void)run_oracle_check(config), std::invalid_argument);
  config.nd_list.clear();
  CHECK_THROWS_AS((void)run_oracle_check(config), std::invalid_argument);
}

TEST_CASE("solve mode runs the full time loop and measures errors") {
  RunConfig config;
  config.nd_list = {2};
  config.ratio_list = {4};
  config.regimes = {{0.3, 1e-2}};
  config.dt = 0.03125;
  config.t_end = 0.125;
  const ResultRecord rec = run_solve(config);

  CHECK(rec.mode == "solve");
  CHECK(rec.m == 8);
  CHECK(rec.nd == 2);
  CHECK(rec.ratio == 4);
  CHECK(rec.precond == "dirichlet");
  CHECK(rec.converged);
  CHECK(rec.steps == 4);
  CHECK(rec.per_step_iterations.size() == 4);
  CHECK(rec.iters_first == rec.per_step_iterations.front());
  CHECK(rec.iters_max >= rec.iters_first);
  CHECK(rec.iters_mean <= rec.iters_max);
  CHECK(rec.iters_mean >= 1.0);
  CHECK(rec.unprecond_iters_first == -1);  // not requested
  CHECK(rec.err_u > 0.0);
  CHECK(rec.err_u < 1e-3);
  CHECK(rec.err_z > 0.0);
  CHECK(rec.err_z < 0.1);
  CHECK(rec.err_p > 0.0);
  CHECK(rec.err_p < 1.0);
  CHECK(std::isnan(rec.rate_u));

  // A time step that does not divide the horizon is rejected.
  config.dt = 0.07;
  CHECK_THROWS_AS((void)run_solve(config), std::invalid_argument);
}

TEST_CASE("convergence mode: errors shrink at the expected rates") {
  RunConfig config;
  config.regimes = {{0.3, 1e-2}};
  config.delta_stab = 0.01;  // keep the stabilization perturbation subordinate
  config.converge_m = {8, 16};
  const std::vector<ResultRecord> records = run_convergence(config);

  REQUIRE(records.size() == 2);
  for (const ResultRecord& rec : records) {
    CHECK(rec.mode == "converge");
    CHECK(rec.nd == 2);
    CHECK(rec.converged);
  }
  CHECK(records[0].m == 8);
  CHECK(records[1].m == 16);
  CHECK(records[0].dt == doctest::Approx(0.025 / 8).epsilon(1e-12));
  CHECK(records[1].dt == doctest::Approx(0.025 / 16).epsilon(1e-12));
  CHECK(std::isnan(records[0].rate_u));
  CHECK(records[1].err_u < records[0].err_u);
  CHECK(records[1].err_z < records[0].err_z);
  CHECK(records[1].err_p < records[0].err_p);
  CHECK(records[1].rate_u >= 1.6);
  CHECK(records[1].rate_u <= 2.5);
  CHECK(records[1].rate_z >= 1.6);
  CHECK(records[1].rate_z <= 2.5);
  CHECK(records[1].rate_p >= 0.8);
  CHECK(records[1].rate_p <= 2.5);

  config.converge_m = {9};
  CHECK_THROWS_AS((void)run_convergence(config), std::invalid_argument);
}

TEST_CASE("stabilization-free interpolant residuals shrink with the mesh") {
  // With delta_stab = 0 the discrete operator applied to the interpolated
  // exact solution leaves only the truncation residual of the scheme; its
  // block norms are frozen and must keep shrinking at the observed rates
  // (about h^2.7 for u and z from the superconvergent structured grid,
  // about h^2 for p).
  struct Level {
    int m;
    double u, z, p;
  };
  const Level frozen[] = {{8, 7.03224e-4, 1.50696e-5, 9.51487e-7},
                          {16, 1.06309e-4, 2.33976e-6, 2.30708e-7},
                          {32, 1.41426e-5, 3.1307e-7, 5.71547e-8}};
  std::vector<Level> got;
  for (const Level& lv : frozen) {
    const Mesh mesh = build_structured_mesh(lv.m);
    const SubdomainPartition part = build_partition(mesh, 2);
    const DofMap dofs = build_dofmap(mesh, part, BcSpec::test_problem());
    const ModelParams params =
        make_model_params(1000.0, 0.3, 1e-2, 1.0, 0.0, 0.0, 0.00625, 0.25);
    const BlockSystem sys = assemble_time_step_system(
        mesh, part, dofs, params, params.dt, initial_state(mesh));
    const Vector x = interpolant(sys, mesh, params, params.dt);
    Vector f(sys.n_total());
    f << sys.f1, sys.f2, sys.f3;
    Vector r(sys.n_total());
    sys.monolithic.multiply(x, r);
    r -= f;
    const Level level = {lv.m, r.segment(0, sys.n_u).norm(),
                         r.segment(sys.n_u, sys.n_z).norm(),
                         r.segment(sys.n_u + sys.n_z, sys.n_p).norm()};
    CAPTURE(lv.m);
    CHECK(level.u == doctest::Approx(lv.u).epsilon(1e-5));
    CHECK(level.z == doctest::Approx(lv.z).epsilon(1e-5));
    CHECK(level.p == doctest::Approx(lv.p).epsilon(1e-5));
    got.push_back(level);
  }
  for (size_t i = 1; i < got.size(); ++i) {
    CHECK(got[i - 1].u / got[i].u >= 3.5);
    CHECK(got[i - 1].z / got[i].z >= 3.5);
    CHECK(got[i - 1].p / got[i].p >= 1.9);
  }
}

TEST_CASE("scalability sweep: determinism, table, failing cells") {
  RunConfig config;
  config.mode = "scalability";
  config.nd_list = {2};
  config.ratio_list = {4};
  config.regimes = {{0.3, 1e-2}};
  config.compare_unpreconditioned = true;
  config.unpreconditioned_max_iterations = 1000;

  const std::vector<ResultRecord> first = run_scalability(config);
  const std::vector<ResultRecord> second = run_scalability(config);
  REQUIRE(first.size() == 1);
  CHECK(first[0].converged);
  CHECK(first[0].steps == 40);
  CHECK(first[0].unprecond_iters_first > 0);
  CHECK(first[0].per_step_iterations == second[0].per_step_iterations);
  CHECK(csv_string(first) == csv_string(second));  // byte-identical reruns

  const std::string table = iteration_table(first);
  CHECK(table.find("2x2") != std::string::npos);
  CHECK(table.find("H/h=4") != std::string::npos);
  CHECK(table.find("nu=0.3") != std::string::npos);
  CHECK(table.find(std::to_string(first[0].iters_max)) != std::string::npos);

  // A cell whose time step does not divide the horizon is recorded as a
  // failure with its reason, and the sweep continues.
  config.dt = 0.07;
  const std::vector<ResultRecord> failed = run_scalability(config);
  REQUIRE(failed.size() == 1);
  CHECK(!failed[0].converged);
  CHECK(!failed[0].note.empty());
  const std::string failed_table = iteration_table(failed);
  CHECK(failed_table.find("-") != std::string::npos);
}

TEST_CASE("command line runs modes and writes the output files") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "biotdd_test_driver";
  fs::remove_all(dir);
  const std::string out = dir.string();

  {
    StreamCapture capture;
    const int rc = cli({"biotdd", "--mode", "solve", "--nsub", "2", "--ratio",
                        "4", "--dt", "0.03125", "--t-end", "0.125", "--out",
                        out.c_str(), "--format", "both"});
    CHECK(rc == 0);
    CHECK(capture.out.str().find("[ok]") != std::string::npos);
  }
  REQUIRE(fs::exists(dir / "results.csv"));
  REQUIRE(fs::exists(dir / "results.json"));
  {
    std::ifstream csv(dir / "results.csv", std::ios::binary);
    std::string header;
    std::getline(csv, header);
    CHECK(header + "\n" == kCsvHeader);
    std::string row;
    std::getline(csv, row);
    CHECK(row.rfind("1,solve,8,2,4,", 0) == 0);
  }
  {
    std::ifstream json(dir / "results.json", std::ios::binary);
    const auto root = nlohmann::json::parse(json);
    REQUIRE(root.is_array());
    REQUIRE(root.size() == 1);
    CHECK(root[0]["mode"] == "solve");
    CHECK(root[0]["converged"] == true);
  }

  {
    StreamCapture capture;
    const int rc = cli({"biotdd", "--mode", "oracle-check", "--nsub", "2",
                        "--ratio", "4", "--out", out.c_str()});
    CHECK(rc == 0);
    CHECK(capture.out.str().find("diff_u=") != std::string::npos);
  }

  // Failure paths: bad mode, bad format, bad thread count, oversize oracle,
  // unknown flag.
  {
    StreamCapture capture;
    CHECK(cli({"biotdd", "--mode", "frobnicate", "--out", out.c_str()}) == 2);
    CHECK(capture.err.str().find("unknown mode") != std::string::npos);
  }
  {
    StreamCapture capture;
    CHECK(cli({"biotdd", "--format", "yaml", "--out", out.c_str()}) == 2);
    CHECK(cli({"biotdd", "--threads", "0", "--out", out.c_str()}) == 2);
    CHECK(cli({"biotdd", "--mode", "oracle-check", "--nsub", "4", "--ratio",
               "16", "--out", out.c_str()}) == 2);
    CHECK(cli({"biotdd", "--frobnicate"}) != 0);
  }
  fs::remove_all(dir);
}
