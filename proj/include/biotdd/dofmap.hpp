// Global scalar-dof numbering and FETI-DP classification. Displacement and
// flux carry two nodal components each, pressure one value per triangle:
//   u_x(n) = 2n, u_y(n) = 2n+1, z_x(n) = 2N + 2n, z_y(n) = 2N + 2n + 1,
//   p(t) = 4N + t, with N the node count.

#pragma once

#include "biotdd/mesh.hpp"

#include <array>
#include <vector>

namespace biotdd {

enum class DofClass : unsigned char {
  dirichlet,          // essentially constrained, eliminated from the system
  interior,           // free u,z scalar seen by exactly one subdomain
  dual,               // free interface u,z scalar shared by exactly two
  primal,             // free interface u,z scalar kept globally continuous
  pressure_interior,  // element pressure; the per-subdomain area-weighted
                      // constant direction is tracked separately (one
                      // coarse coordinate per subdomain)
};

// Boundary sides carrying the essential conditions. The test problem
// constrains u on all four sides and the normal flux on all four sides.
struct BcSpec {
  std::array<bool, 4> u_sides{true, true, true, true};  // left,right,bottom,top
  std::array<bool, 4> z_sides{true, true, true, true};

  [[nodiscard]] static BcSpec test_problem() { return BcSpec{}; }
};

// Per-subdomain views of the global numbering; the position inside each
// vector is the subdomain-local index. All vectors ascend in global order.
struct SubdomainDofs {
  std::vector<int> interior;  // class interior, u,z scalars
  std::vector<int> dual;      // class dual
  std::vector<int> primal;    // class primal touched by this subdomain
  std::vector<int> pressure;  // p dofs of owned triangles
};

struct DofMap {
  int n_nodes = 0;
  int n_triangles = 0;
  int n_subdomains = 0;
  int n_dofs = 0;  // 4 * n_nodes + n_triangles

  std::vector<DofClass> dof_class;
  // Subdomains seeing each dof (via the node for u,z; the owner for p).
  std::vector<std::vector<int>> dof_subdomains;
  std::vector<SubdomainDofs> per_subdomain;
  std::vector<int> primal_dofs;  // global list, ascending

  [[nodiscard]] int ux(int node) const { return 2 * node; }
  [[nodiscard]] int uy(int node) const { return 2 * node + 1; }
  [[nodiscard]] int zx(int node) const { return 2 * n_nodes + 2 * node; }
  [[nodiscard]] int zy(int node) const { return 2 * n_nodes + 2 * node + 1; }
  [[nodiscard]] int p(int tri) const { return 4 * n_nodes + tri; }

  [[nodiscard]] int multiplicity(int dof) const {
    return static_cast<int>(dof_subdomains[dof].size());
  }
  // Dimensions of the per-subdomain pressure split: the area-weighted
  // constant (coarse) direction and its zero-mean complement.
  [[nodiscard]] int q0_dim(int /*subdomain*/) const { return 1; }
  [[nodiscard]] int qi_dim(int subdomain) const {
    return static_cast<int>(per_subdomain[subdomain].pressure.size()) - 1;
  }
};

DofMap build_dofmap(const Mesh& mesh, const SubdomainPartition& partition,
                    const BcSpec& bc_spec);

}  // namespace biotdd
