// Time-discrete stabilized P1-P1-P0 assembly of the three-field Biot system
// on one backward-Euler step, with the manufactured test data and error
// evaluation. The monolithic matrix uses the symmetrized row scaling
//   [ A_u        0         alpha*B1^T ]
//   [ 0          dt*A_z    dt*B2^T    ]
//   [ alpha*B1   dt*B2    -(c0*M_p + alpha*J) ]
// with B1, B2 the matrices of -(div(.), q); the named blocks a_*, b_* are
// stored unscaled.

#pragma once

#include "biotdd/dofmap.hpp"
#include "biotdd/linalg.hpp"
#include "biotdd/mesh.hpp"

#include <Eigen/Dense>

#include <array>
#include <utility>
#include <vector>

namespace biotdd {

struct ModelParams {
  double E = 1000.0;
  double nu = 0.3;
  double lambda = 0.0;  // derived, plane strain
  double mu = 0.0;      // derived
  double kappa = 1e-2;
  double alpha = 1.0;
  double c0 = 0.0;
  double delta_stab = 100.0;
  double dt = 0.00625;
  double t_end = 0.25;
};

// Computes the Lame parameters and validates nu < 0.5, kappa > 0,
// delta_stab >= 0, dt > 0; throws std::invalid_argument on violation.
ModelParams make_model_params(double E, double nu, double kappa, double alpha,
                              double c0, double delta_stab, double dt,
                              double t_end);

// Full nodal/element fields: u and z hold both components at every node
// (Dirichlet entries included), p one value per triangle.
struct State {
  Vector u;
  Vector z;
  Vector p;
  double t = 0.0;
};

State initial_state(const Mesh& mesh);

struct ExactState {
  std::array<double, 2> u{};
  std::array<double, 2> z{};
  double p = 0.0;
};

ExactState exact_solution_eval(double x, double y, double t,
                               const ModelParams& params);

// Fluid source of the mass-conservation equation compatible with the exact
// fields (alpha = 1, c0 = 0 test configuration).
double manufactured_source_g1(double x, double y, double t,
                              const ModelParams& params);

// Prescribed normal flux z.n on a boundary side (outward normal).
double boundary_normal_flux(double x, double y, double t, BoundarySide side,
                            const ModelParams& params);

using ElementMatrix = Eigen::Matrix<double, 6, 6>;
using ElementRow = Eigen::Matrix<double, 1, 6>;
using TriangleVerts = std::array<Node, 3>;

// Local dof order is (x0, y0, x1, y1, x2, y2).
ElementMatrix elasticity_element_matrix(const TriangleVerts& tri,
                                        double lambda, double mu);
ElementMatrix darcy_element_matrix(const TriangleVerts& tri, double kappa);
ElementRow div_coupling_row(const TriangleVerts& tri);

// Pressure-jump stabilization on p-dofs (indexed by triangle id): per unique
// counted edge e the coupling is 2*delta_stab*|e|^2*[[1,-1],[-1,1]]; edges on
// the outer boundary and on subdomain interfaces are excluded.
SparseMatrix stabilization_matrix(const Mesh& mesh,
                                  const SubdomainPartition& partition,
                                  double delta_stab);

// Per-subdomain restriction of the scaled monolithic matrix and rhs, in the
// local ordering [interior | dual | primal | pressure] given by the dofmap
// (element sums over owned triangles only, so interface rows carry each
// side's share).
struct LocalBlock {
  SparseMatrix k;
  Vector f;
};

struct BlockSystem {
  std::vector<int> free_u;  // ascending global dof ids
  std::vector<int> free_z;
  std::vector<int> u_index;  // global dof -> u block index, -1 if absent
  std::vector<int> z_index;
  int n_u = 0;
  int n_z = 0;
  int n_p = 0;

  SparseMatrix a_u;  // elasticity, free u dofs
  SparseMatrix a_z;  // (1/kappa) vector mass, free z dofs
  SparseMatrix a_p;  // (c0/alpha)*M_p + J
  SparseMatrix b1;   // -(div u, q), p rows by u columns
  SparseMatrix b2;   // -(div z, q)
  SparseMatrix monolithic;  // scaled, ordering [u | z | p]

  Vector f1;  // scaled rhs blocks; f3 is stored after the compatibility
  Vector f2;  // projection when the pressure nullspace is present
  Vector f3;

  std::vector<std::pair<int, double>> boundary_values;  // dof, value at t_n
  std::vector<LocalBlock> local_blocks;

  double t = 0.0;
  double dt = 0.0;
  double alpha = 1.0;
  double c0 = 0.0;
  bool pressure_nullspace = false;
  Vector p_null;  // element areas: the constant-pressure embedding weights

  [[nodiscard]] int n_total() const { return n_u + n_z + n_p; }
};

BlockSystem assemble_time_step_system(const Mesh& mesh,
                                      const SubdomainPartition& partition,
                                      const DofMap& dofmap,
                                      const ModelParams& params, double t_n,
                                      const State& prev_state);

// Recomputes boundary values and every right-hand-side vector of a
// previously assembled system for a new time and previous state; the
// matrices are time-independent and stay untouched. Equivalent to a full
// reassembly at (t_n, prev_state).
void update_rhs(BlockSystem& system, const Mesh& mesh,
                const SubdomainPartition& partition, const DofMap& dofmap,
                const ModelParams& params, double t_n,
                const State& prev_state);

struct ErrorNorms {
  double u = 0.0;
  double z = 0.0;
  double p = 0.0;
};

// L2 errors against the exact fields at time t (3-point edge-midpoint rule,
// exact to degree 2).
ErrorNorms error_norms(const State& solution, const Mesh& mesh,
                       const ModelParams& params, double t);

}  // namespace biotdd
