// FETI-DP reduction of the stabilized three-field Biot step: subdomain
// tearing with primal corner coupling, per-subdomain pressure split into an
// area-weighted constant (coarse coordinate) and its zero-mean complement
// (realized by bordering the local factorization with the mean constraint),
// dual-trace Schur operator, jump operator, PCG on the Lagrange multipliers,
// and full-field recovery.
//
// The coarse space always contains the corner u,z dofs and the per-subdomain
// constant pressures. With CoarseSpace::edge_averages every subdomain edge
// additionally contributes the mean of each u,z interface component over
// that edge: the nodal dual values on the edge are rewritten in an
// average + fluctuations basis, the average joins the coarse problem as a
// shared coordinate, and only the fluctuations stay dual. The averages keep
// the dual-trace Schur complement uniformly well conditioned as the number
// of subdomains grows. CoarseSpace::edge_moments (the default) also makes
// the first moment (the linear profile along the edge) of each component
// coarse; without it those modes carry near-boundary compression that the
// local extensions cannot relax when the material is almost incompressible,
// leaving a cluster of large eigenvalues that grows with the number of
// edges. vertex_only keeps the plain nodal dual space.
//
// Dual vectors ("torn traces") are the concatenation over subdomains, in
// subdomain-id order, of the local dual coordinate values (each shared
// coordinate appears once per side). Multiplier vectors carry one entry per
// shared dual coordinate, ordered by ascending global id of the associated
// node dof, signed + on the lower-numbered subdomain copy.

#pragma once

#include "biotdd/assembly.hpp"
#include "biotdd/dofmap.hpp"
#include "biotdd/linalg.hpp"
#include "biotdd/mesh.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace biotdd {

enum class PrecondKind {
  dirichlet,         // harmonic extension through the full local saddle
                     // interior (u, z, zero-mean pressure); default
  dirichlet_a_only,  // harmonic extension through the u,z blocks only
  none,              // identity
};

// Accepts "dirichlet", "dirichlet-a-only", "none"; throws
// std::invalid_argument otherwise.
PrecondKind parse_precond(const std::string& name);
std::string precond_name(PrecondKind kind);

enum class CoarseSpace {
  edge_moments,   // corners, p0, per-edge u,z averages and first moments;
                  // default
  edge_averages,  // corners, p0, and per-edge u,z averages
  vertex_only,    // corners and p0 only
};

// Accepts "edge-moments", "edge-averages", "vertex"; throws
// std::invalid_argument otherwise.
CoarseSpace parse_coarse_space(const std::string& name);
std::string coarse_space_name(CoarseSpace coarse);

// Torn right-hand side reduced onto the solver's spaces.
struct PreparedRhs {
  std::vector<Vector> f_a;  // per subdomain [interior | dual | pressure | 0]
  Vector f_c;               // coarse rhs (primal slots, edge slots,
                            // constant-pressure slots, gauge row)
  Vector f_delta_star;      // dual-trace rhs of the reduced interface system
};

struct FetidpSolution {
  State state;       // full fields at the step time, Dirichlet values set
  Vector beta;       // per-subdomain mean-constraint multipliers; ~0 at a
                     // converged solution
  double gamma = 0.0;              // global pressure-gauge multiplier
  double max_relative_jump = 0.0;  // interface mismatch before averaging
};

// Precomputed subdomain factorizations, coarse matrices, and jump maps for
// one time-step matrix (the matrix is time-independent, so one instance
// serves every step). Construction cost is dominated by the per-subdomain
// factorizations, parallelized over n_threads; all cross-subdomain
// reductions run serially in a fixed canonical subdomain order so results
// are identical for any thread count and under subdomain renumbering.
class FetidpSolver {
 public:
  FetidpSolver(const BlockSystem& system, const DofMap& dofmap,
               const SubdomainPartition& partition, int n_threads = 1,
               CoarseSpace coarse = CoarseSpace::edge_moments);
  ~FetidpSolver();
  FetidpSolver(FetidpSolver&&) noexcept;
  FetidpSolver& operator=(FetidpSolver&&) noexcept;
  FetidpSolver(const FetidpSolver&) = delete;
  FetidpSolver& operator=(const FetidpSolver&) = delete;

  [[nodiscard]] int n_multipliers() const;
  [[nodiscard]] int n_dual_total() const;  // torn dual dimension
  [[nodiscard]] int coarse_dim() const;
  [[nodiscard]] int n_subdomains() const;
  [[nodiscard]] CoarseSpace coarse_space() const;
  // Number of edge coarse coordinates: averages plus moments when active
  // (0 for vertex_only).
  [[nodiscard]] int n_edge_coarse() const;

  // Torn dual coordinates of a continuous global u,z vector (size 4*nodes):
  // per-subdomain gather of the dual values, rewritten in the edge
  // average (+ moment) + fluctuations basis when such a coarse space is
  // active. Applying the jump to the result of a continuous input is
  // exactly zero.
  [[nodiscard]] Vector torn_dual_coordinates(const Vector& uz) const;

  // Jump operator on torn dual vectors and its transpose.
  [[nodiscard]] Vector apply_jump(const Vector& torn) const;
  [[nodiscard]] Vector apply_jump_transpose(const Vector& lambda) const;

  // Dual-trace Schur operator: eliminate every non-dual variable (local
  // interior, pressure, mean constraint, coarse) with the dual trace
  // prescribed and return the dual residual.
  [[nodiscard]] Vector apply_schur(const Vector& torn) const;
  // Inverse realization through the torn solve; round-trip partner of
  // apply_schur built on an independent factorization split.
  [[nodiscard]] Vector apply_schur_inverse(const Vector& torn) const;

  // Interface operator F = B S^{-1} B^T on multiplier vectors.
  [[nodiscard]] Vector apply_interface_operator(const Vector& lambda) const;

  // Block harmonic-extension operator H on torn dual vectors (no jump,
  // no scaling); kind selects the interior solve variant.
  [[nodiscard]] Vector apply_harmonic(const Vector& torn,
                                      PrecondKind kind) const;
  // Dual-block-only quadratic form partner (zero extension energy).
  [[nodiscard]] Vector apply_dual_diagonal(const Vector& torn,
                                           PrecondKind kind) const;

  // M^{-1} = (1/4) B H B^T (multiplicity 2 on every dual dof).
  [[nodiscard]] Vector apply_dirichlet_preconditioner(const Vector& r) const;
  [[nodiscard]] Vector apply_preconditioner(const Vector& r,
                                            PrecondKind kind) const;

  [[nodiscard]] PreparedRhs prepare_rhs(const BlockSystem& system) const;

  // PCG on the multipliers; f_delta_star from prepare_rhs. With no dual
  // dofs (single subdomain) returns an empty multiplier immediately.
  [[nodiscard]] std::pair<Vector, PcgReport> solve_interface(
      const Vector& f_delta_star, PrecondKind precond, double tol,
      int max_it) const;

  // Back-substitution to the full fields; averages the two copies of each
  // dual dof and throws std::runtime_error if their relative mismatch
  // exceeds 1e-6 (signals multiplier under-convergence).
  [[nodiscard]] FetidpSolution recover_solution(const PreparedRhs& prep,
                                                const Vector& lambda,
                                                const BlockSystem& system) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace biotdd
