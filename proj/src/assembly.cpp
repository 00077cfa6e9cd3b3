// Element kernels, manufactured data, one-step assembly, and error norms.

#include "biotdd/assembly.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace biotdd {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double signed_area(const TriangleVerts& tri) {
  return 0.5 * ((tri[1].x - tri[0].x) * (tri[2].y - tri[0].y) -
                (tri[2].x - tri[0].x) * (tri[1].y - tri[0].y));
}

// Gradients of the three P1 basis functions; column i is grad(phi_i).
Eigen::Matrix<double, 2, 3> p1_gradients(const TriangleVerts& tri,
                                         double area) {
  Eigen::Matrix<double, 2, 3> g;
  const double s = 1.0 / (2.0 * area);
  g(0, 0) = (tri[1].y - tri[2].y) * s;
  g(1, 0) = (tri[2].x - tri[1].x) * s;
  g(0, 1) = (tri[2].y - tri[0].y) * s;
  g(1, 1) = (tri[0].x - tri[2].x) * s;
  g(0, 2) = (tri[0].y - tri[1].y) * s;
  g(1, 2) = (tri[1].x - tri[0].x) * s;
  return g;
}

}  // namespace

ModelParams make_model_params(double E, double nu, double kappa, double alpha,
                              double c0, double delta_stab, double dt,
                              double t_end) {
  if (!(nu < 0.5)) throw std::invalid_argument("params: nu must be < 0.5");
  if (!(kappa > 0.0)) throw std::invalid_argument("params: kappa must be > 0");
  if (!(delta_stab >= 0.0)) {
    throw std::invalid_argument("params: delta_stab must be >= 0");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("params: dt must be > 0");
  ModelParams p;
  p.E = E;
  p.nu = nu;
  p.lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  p.mu = E / (2.0 * (1.0 + nu));
  p.kappa = kappa;
  p.alpha = alpha;
  p.c0 = c0;
  p.delta_stab = delta_stab;
  p.dt = dt;
  p.t_end = t_end;
  return p;
}

State initial_state(const Mesh& mesh) {
  State s;
  s.u = Vector::Zero(2 * mesh.n_nodes());
  s.z = Vector::Zero(2 * mesh.n_nodes());
  s.p = Vector::Zero(mesh.n_triangles());
  s.t = 0.0;
  return s;
}

ExactState exact_solution_eval(double x, double y, double t,
                               const ModelParams& params) {
  const double sx = std::sin(kTwoPi * x);
  const double cx = std::cos(kTwoPi * x);
  const double sy = std::sin(kTwoPi * y);
  const double cy = std::cos(kTwoPi * y);
  const double st = std::sin(kTwoPi * t);
  ExactState e;
  const double amp_u = -1.0 / (4.0 * std::numbers::pi *
                               (params.lambda + 2.0 * params.mu));
  e.u = {amp_u * cx * sy * st, amp_u * sx * cy * st};
  const double amp_z = -kTwoPi * params.kappa;
  e.z = {amp_z * cx * sy * st, amp_z * sx * cy * st};
  e.p = sx * sy * st;
  return e;
}

double manufactured_source_g1(double x, double y, double t,
                              const ModelParams& params) {
  const double lam2mu = params.lambda + 2.0 * params.mu;
  const double coeff = kTwoPi * std::cos(kTwoPi * t) / lam2mu +
                       2.0 * kTwoPi * kTwoPi * params.kappa *
                           std::sin(kTwoPi * t);
  return coeff * std::sin(kTwoPi * x) * std::sin(kTwoPi * y);
}

double boundary_normal_flux(double x, double y, double t, BoundarySide side,
                            const ModelParams& params) {
  const ExactState e = exact_solution_eval(x, y, t, params);
  switch (side) {
    case BoundarySide::left:
      return -e.z[0];
    case BoundarySide::right:
      return e.z[0];
    case BoundarySide::bottom:
      return -e.z[1];
    case BoundarySide::top:
      return e.z[1];
    case BoundarySide::none:
      break;
  }
  throw std::invalid_argument("boundary_normal_flux: not a boundary side");
}

ElementMatrix elasticity_element_matrix(const TriangleVerts& tri,
                                        double lambda, double mu) {
  const double area = signed_area(tri);
  if (!(area > 0.0)) {
    throw std::invalid_argument("elasticity_element_matrix: degenerate triangle");
  }
  const auto g = p1_gradients(tri, area);
  ElementMatrix k = ElementMatrix::Zero();
  // d pairs the interleaved local dofs with the divergence coefficients.
  Eigen::Matrix<double, 6, 1> d;
  for (int i = 0; i < 3; ++i) {
    d(2 * i) = g(0, i);
    d(2 * i + 1) = g(1, i);
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double s = area * g.col(i).dot(g.col(j));
      k(2 * i, 2 * j) += mu * s;
      k(2 * i + 1, 2 * j + 1) += mu * s;
    }
  }
  k += (lambda + mu) * area * d * d.transpose();
  return k;
}

ElementMatrix darcy_element_matrix(const TriangleVerts& tri, double kappa) {
  if (!(kappa > 0.0)) {
    throw std::invalid_argument("darcy_element_matrix: kappa must be > 0");
  }
  const double area = signed_area(tri);
  if (!(area > 0.0)) {
    throw std::invalid_argument("darcy_element_matrix: degenerate triangle");
  }
  ElementMatrix k = ElementMatrix::Zero();
  const double s = area / (12.0 * kappa);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      const double v = s * (i == j ? 2.0 : 1.0);
      k(2 * i, 2 * j) = v;
      k(2 * i + 1, 2 * j + 1) = v;
    }
  }
  return k;
}

ElementRow div_coupling_row(const TriangleVerts& tri) {
  const double area = signed_area(tri);
  if (!(area > 0.0)) {
    throw std::invalid_argument("div_coupling_row: degenerate triangle");
  }
  const auto g = p1_gradients(tri, area);
  ElementRow r;
  for (int i = 0; i < 3; ++i) {
    r(2 * i) = -area * g(0, i);
    r(2 * i + 1) = -area * g(1, i);
  }
  return r;
}

SparseMatrix stabilization_matrix(const Mesh& mesh,
                                  const SubdomainPartition& partition,
                                  double delta_stab) {
  if (!(delta_stab >= 0.0)) {
    throw std::invalid_argument("stabilization_matrix: delta_stab must be >= 0");
  }
  std::vector<Triplet> trips;
  for (int s = 0; s < partition.n_subdomains(); ++s) {
    for (const int e : interior_edges_of_subdomain(mesh, partition, s)) {
      const Edge& ed = mesh.edges[static_cast<size_t>(e)];
      const double dx = mesh.nodes[ed.node_a].x - mesh.nodes[ed.node_b].x;
      const double dy = mesh.nodes[ed.node_a].y - mesh.nodes[ed.node_b].y;
      const double w = 2.0 * delta_stab * (dx * dx + dy * dy);
      trips.push_back({ed.tri_left, ed.tri_left, w});
      trips.push_back({ed.tri_right, ed.tri_right, w});
      trips.push_back({ed.tri_left, ed.tri_right, -w});
      trips.push_back({ed.tri_right, ed.tri_left, -w});
    }
  }
  SparseMatrix j = csr_from_triplets(mesh.n_triangles(), mesh.n_triangles(),
                                     std::move(trips));
  verify_symmetric(j);
  return j;
}

namespace {

struct BoundaryData {
  std::vector<double> value;  // by global dof, 0 if free
  std::vector<char> fixed;
};

// Evaluates the essential boundary values at t_n and records them in the
// system's boundary list.
BoundaryData boundary_data(const Mesh& mesh, const DofMap& dofmap,
                           const ModelParams& params, double t_n,
                           BlockSystem& bs) {
  BoundaryData bd;
  bd.value.assign(static_cast<size_t>(dofmap.n_dofs), 0.0);
  bd.fixed.assign(static_cast<size_t>(dofmap.n_dofs), 0);
  bs.boundary_values.clear();
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    const int dofs[4] = {dofmap.ux(n), dofmap.uy(n), dofmap.zx(n),
                         dofmap.zy(n)};
    ExactState ex;
    bool have_ex = false;
    for (int k = 0; k < 4; ++k) {
      const int dof = dofs[k];
      if (dofmap.dof_class[dof] != DofClass::dirichlet) continue;
      if (!have_ex) {
        ex = exact_solution_eval(mesh.nodes[n].x, mesh.nodes[n].y, t_n, params);
        have_ex = true;
      }
      const double v = k == 0 ? ex.u[0]
                     : k == 1 ? ex.u[1]
                     : k == 2 ? ex.z[0]
                              : ex.z[1];
      bd.fixed[dof] = 1;
      bd.value[dof] = v;
      bs.boundary_values.emplace_back(dof, v);
    }
  }
  return bd;
}

// Shared element loop. With matrices set it fills the triplet lists and the
// local blocks; the right-hand sides are always rebuilt (all rhs vectors
// must enter zeroed).
void assemble_core(BlockSystem& bs, const Mesh& mesh,
                   const SubdomainPartition& partition, const DofMap& dofmap,
                   const ModelParams& params, double t_n,
                   const State& prev_state, const BoundaryData& bd,
                   bool matrices) {
  const int off_z = bs.n_u;
  const int off_p = bs.n_u + bs.n_z;

  std::vector<Triplet> t_au, t_az, t_ap, t_b1, t_b2, t_mono;

  // The two cell orientations are congruent across the mesh; the kernels
  // depend only on vertex differences, so two evaluations suffice.
  const auto verts_of = [&](int t) {
    const auto& tri = mesh.triangles[t];
    return TriangleVerts{mesh.nodes[tri[0]], mesh.nodes[tri[1]],
                         mesh.nodes[tri[2]]};
  };
  const ElementMatrix ke_u[2] = {
      elasticity_element_matrix(verts_of(0), params.lambda, params.mu),
      elasticity_element_matrix(verts_of(1), params.lambda, params.mu)};
  const ElementMatrix ke_z[2] = {darcy_element_matrix(verts_of(0), params.kappa),
                                 darcy_element_matrix(verts_of(1), params.kappa)};
  const ElementRow rdiv[2] = {div_coupling_row(verts_of(0)),
                              div_coupling_row(verts_of(1))};
  const double area = mesh.triangle_area();
  const double dt = params.dt;
  const double al = params.alpha;

  std::vector<int> local_of(static_cast<size_t>(dofmap.n_dofs), -1);

  for (int s = 0; s < partition.n_subdomains(); ++s) {
    const SubdomainDofs& sd = dofmap.per_subdomain[s];
    const int n_int = static_cast<int>(sd.interior.size());
    const int n_dual = static_cast<int>(sd.dual.size());
    const int n_prim = static_cast<int>(sd.primal.size());
    const int n_pres = static_cast<int>(sd.pressure.size());
    const int n_loc = n_int + n_dual + n_prim + n_pres;
    const auto set_locals = [&](const std::vector<int>& dofs, int base) {
      for (size_t i = 0; i < dofs.size(); ++i) {
        local_of[dofs[i]] = base + static_cast<int>(i);
      }
    };
    set_locals(sd.interior, 0);
    set_locals(sd.dual, n_int);
    set_locals(sd.primal, n_int + n_dual);
    set_locals(sd.pressure, n_int + n_dual + n_prim);

    std::vector<Triplet> t_loc;
    Vector& f_loc = bs.local_blocks[s].f;

    for (const int t : partition.subdomain_triangles[s]) {
      const auto& tri = mesh.triangles[t];
      const int o = t % 2;  // orientation: even = lower, odd = upper
      int gu[6], gz[6];
      for (int i = 0; i < 3; ++i) {
        gu[2 * i] = dofmap.ux(tri[i]);
        gu[2 * i + 1] = dofmap.uy(tri[i]);
        gz[2 * i] = dofmap.zx(tri[i]);
        gz[2 * i + 1] = dofmap.zy(tri[i]);
      }
      const int lp = local_of[dofmap.p(t)];

      for (int i = 0; i < 6; ++i) {
        const int gi_u = gu[i];
        const int gi_z = gz[i];
        const bool row_u_free = !bd.fixed[gi_u];
        const bool row_z_free = !bd.fixed[gi_z];
        for (int j = 0; j < 6; ++j) {
          const int gj_u = gu[j];
          const int gj_z = gz[j];
          const double vu = ke_u[o](i, j);
          const double vz = ke_z[o](i, j);
          if (row_u_free && vu != 0.0) {
            if (!bd.fixed[gj_u]) {
              if (matrices) {
                t_au.push_back({bs.u_index[gi_u], bs.u_index[gj_u], vu});
                t_mono.push_back({bs.u_index[gi_u], bs.u_index[gj_u], vu});
                t_loc.push_back({local_of[gi_u], local_of[gj_u], vu});
              }
            } else {
              const double lift = vu * bd.value[gj_u];
              bs.f1[bs.u_index[gi_u]] -= lift;
              f_loc[local_of[gi_u]] -= lift;
            }
          }
          if (row_z_free && vz != 0.0) {
            if (!bd.fixed[gj_z]) {
              if (matrices) {
                t_az.push_back({bs.z_index[gi_z], bs.z_index[gj_z], vz});
                t_mono.push_back({off_z + bs.z_index[gi_z],
                                  off_z + bs.z_index[gj_z], dt * vz});
                t_loc.push_back({local_of[gi_z], local_of[gj_z], dt * vz});
              }
            } else {
              const double lift = dt * vz * bd.value[gj_z];
              bs.f2[bs.z_index[gi_z]] -= lift;
              f_loc[local_of[gi_z]] -= lift;
            }
          }
        }
        // Divergence couplings, p row t.
        const double r = rdiv[o](i);
        if (r != 0.0) {
          if (!bd.fixed[gi_u]) {
            if (matrices) {
              t_b1.push_back({t, bs.u_index[gi_u], r});
              t_mono.push_back({off_p + t, bs.u_index[gi_u], al * r});
              t_mono.push_back({bs.u_index[gi_u], off_p + t, al * r});
              t_loc.push_back({lp, local_of[gi_u], al * r});
              t_loc.push_back({local_of[gi_u], lp, al * r});
            }
          } else {
            const double lift = al * r * bd.value[gi_u];
            bs.f3[t] -= lift;
            f_loc[lp] -= lift;
          }
          if (!bd.fixed[gi_z]) {
            if (matrices) {
              t_b2.push_back({t, bs.z_index[gi_z], r});
              t_mono.push_back({off_p + t, off_z + bs.z_index[gi_z], dt * r});
              t_mono.push_back({off_z + bs.z_index[gi_z], off_p + t, dt * r});
              t_loc.push_back({lp, local_of[gi_z], dt * r});
              t_loc.push_back({local_of[gi_z], lp, dt * r});
            }
          } else {
            const double lift = dt * r * bd.value[gi_z];
            bs.f3[t] -= lift;
            f_loc[lp] -= lift;
          }
          // Time-lag divergence of the previous displacement (full vector).
          const double lag = al * r * prev_state.u[gu[i]];
          bs.f3[t] += lag;
          f_loc[lp] += lag;
        }
      }

      // Specific-storage mass and its lag.
      if (params.c0 != 0.0) {
        if (matrices) {
          t_ap.push_back({t, t, params.c0 / al * area});
          t_mono.push_back({off_p + t, off_p + t, -params.c0 * area});
          t_loc.push_back({lp, lp, -params.c0 * area});
        }
        const double lag = params.c0 * area * prev_state.p[t];
        bs.f3[t] -= lag;
        f_loc[lp] -= lag;
      }

      // Source quadrature: edge midpoints, degree 2.
      double g_int = 0.0;
      for (int e = 0; e < 3; ++e) {
        const double qx =
            0.5 * (mesh.nodes[tri[e]].x + mesh.nodes[tri[(e + 1) % 3]].x);
        const double qy =
            0.5 * (mesh.nodes[tri[e]].y + mesh.nodes[tri[(e + 1) % 3]].y);
        g_int += manufactured_source_g1(qx, qy, t_n, params);
      }
      g_int *= area / 3.0;
      bs.f3[t] -= dt * g_int;
      f_loc[lp] -= dt * g_int;
    }

    // Pressure-jump stabilization, subdomain-interior edges only.
    for (const int e : interior_edges_of_subdomain(mesh, partition, s)) {
      const Edge& ed = mesh.edges[static_cast<size_t>(e)];
      const double dx = mesh.nodes[ed.node_a].x - mesh.nodes[ed.node_b].x;
      const double dy = mesh.nodes[ed.node_a].y - mesh.nodes[ed.node_b].y;
      const double w = 2.0 * params.delta_stab * (dx * dx + dy * dy);
      const int ta = ed.tri_left;
      const int tb = ed.tri_right;
      const int la = local_of[dofmap.p(ta)];
      const int lb = local_of[dofmap.p(tb)];
      if (matrices) {
        t_ap.push_back({ta, ta, w});
        t_ap.push_back({tb, tb, w});
        t_ap.push_back({ta, tb, -w});
        t_ap.push_back({tb, ta, -w});
        t_mono.push_back({off_p + ta, off_p + ta, -al * w});
        t_mono.push_back({off_p + tb, off_p + tb, -al * w});
        t_mono.push_back({off_p + ta, off_p + tb, al * w});
        t_mono.push_back({off_p + tb, off_p + ta, al * w});
        t_loc.push_back({la, la, -al * w});
        t_loc.push_back({lb, lb, -al * w});
        t_loc.push_back({la, lb, al * w});
        t_loc.push_back({lb, la, al * w});
      }
      const double jump = prev_state.p[ta] - prev_state.p[tb];
      bs.f3[ta] -= al * w * jump;
      bs.f3[tb] += al * w * jump;
      f_loc[la] -= al * w * jump;
      f_loc[lb] += al * w * jump;
    }

    if (matrices) {
      bs.local_blocks[s].k = csr_from_triplets(n_loc, n_loc, std::move(t_loc));
    }

    const auto clear_locals = [&](const std::vector<int>& dofs) {
      for (const int d : dofs) local_of[d] = -1;
    };
    clear_locals(sd.interior);
    clear_locals(sd.dual);
    clear_locals(sd.primal);
    clear_locals(sd.pressure);
  }

  if (matrices) {
    bs.a_u = csr_from_triplets(bs.n_u, bs.n_u, std::move(t_au));
    bs.a_z = csr_from_triplets(bs.n_z, bs.n_z, std::move(t_az));
    bs.a_p = csr_from_triplets(bs.n_p, bs.n_p, std::move(t_ap));
    bs.b1 = csr_from_triplets(bs.n_p, bs.n_u, std::move(t_b1));
    bs.b2 = csr_from_triplets(bs.n_p, bs.n_z, std::move(t_b2));
    bs.monolithic =
        csr_from_triplets(bs.n_total(), bs.n_total(), std::move(t_mono));
    verify_symmetric(bs.a_u);
    verify_symmetric(bs.a_z);
    verify_symmetric(bs.a_p);
    verify_symmetric(bs.monolithic);
  }

  if (bs.pressure_nullspace) {
    // Compatibility: remove the constant-pressure component of f3. The
    // bordered solves absorb this shift, so the fields are unchanged; it
    // keeps the reported rhs orthogonal to the nullspace.
    const double corr = bs.f3.sum() / bs.n_p;
    bs.f3.array() -= corr;
  }
}

}  // namespace

BlockSystem assemble_time_step_system(const Mesh& mesh,
                                      const SubdomainPartition& partition,
                                      const DofMap& dofmap,
                                      const ModelParams& params, double t_n,
                                      const State& prev_state) {
  if (prev_state.u.size() != 2 * mesh.n_nodes() ||
      prev_state.p.size() != mesh.n_triangles()) {
    throw std::invalid_argument("assemble_time_step_system: state size mismatch");
  }
  BlockSystem bs;
  bs.t = t_n;
  bs.dt = params.dt;
  bs.alpha = params.alpha;
  bs.c0 = params.c0;
  bs.pressure_nullspace = params.c0 == 0.0;
  bs.n_p = mesh.n_triangles();

  // Solve-space numbering.
  bs.u_index.assign(static_cast<size_t>(dofmap.n_dofs), -1);
  bs.z_index.assign(static_cast<size_t>(dofmap.n_dofs), -1);
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    const int dofs[4] = {dofmap.ux(n), dofmap.uy(n), dofmap.zx(n),
                         dofmap.zy(n)};
    for (int k = 0; k < 4; ++k) {
      const int dof = dofs[k];
      if (dofmap.dof_class[dof] == DofClass::dirichlet) continue;
      if (k < 2) {
        bs.u_index[dof] = bs.n_u;
        bs.free_u.push_back(dof);
        ++bs.n_u;
      } else {
        bs.z_index[dof] = bs.n_z;
        bs.free_z.push_back(dof);
        ++bs.n_z;
      }
    }
  }

  bs.f1 = Vector::Zero(bs.n_u);
  bs.f2 = Vector::Zero(bs.n_z);
  bs.f3 = Vector::Zero(bs.n_p);
  bs.local_blocks.resize(static_cast<size_t>(partition.n_subdomains()));
  for (int s = 0; s < partition.n_subdomains(); ++s) {
    const SubdomainDofs& sd = dofmap.per_subdomain[s];
    const int n_loc =
        static_cast<int>(sd.interior.size() + sd.dual.size() +
                         sd.primal.size() + sd.pressure.size());
    bs.local_blocks[s].f = Vector::Zero(n_loc);
  }
  bs.p_null = Vector::Constant(bs.n_p, mesh.triangle_area());

  const BoundaryData bd = boundary_data(mesh, dofmap, params, t_n, bs);
  assemble_core(bs, mesh, partition, dofmap, params, t_n, prev_state, bd,
                /*matrices=*/true);
  return bs;
}

void update_rhs(BlockSystem& bs, const Mesh& mesh,
                const SubdomainPartition& partition, const DofMap& dofmap,
                const ModelParams& params, double t_n,
                const State& prev_state) {
  if (prev_state.u.size() != 2 * mesh.n_nodes() ||
      prev_state.p.size() != mesh.n_triangles()) {
    throw std::invalid_argument("update_rhs: state size mismatch");
  }
  if (bs.n_p != mesh.n_triangles() ||
      static_cast<int>(bs.local_blocks.size()) != partition.n_subdomains()) {
    throw std::invalid_argument("update_rhs: system was built for another mesh");
  }
  bs.t = t_n;
  bs.f1.setZero();
  bs.f2.setZero();
  bs.f3.setZero();
  for (auto& lb : bs.local_blocks) lb.f.setZero();
  const BoundaryData bd = boundary_data(mesh, dofmap, params, t_n, bs);
  assemble_core(bs, mesh, partition, dofmap, params, t_n, prev_state, bd,
                /*matrices=*/false);
}

ErrorNorms error_norms(const State& solution, const Mesh& mesh,
                       const ModelParams& params, double t) {
  double eu = 0.0;
  double ez = 0.0;
  double ep = 0.0;
  const double w = mesh.triangle_area() / 3.0;
  for (int tr = 0; tr < mesh.n_triangles(); ++tr) {
    const auto& tri = mesh.triangles[tr];
    for (int e = 0; e < 3; ++e) {
      const int a = tri[e];
      const int b = tri[(e + 1) % 3];
      const double qx = 0.5 * (mesh.nodes[a].x + mesh.nodes[b].x);
      const double qy = 0.5 * (mesh.nodes[a].y + mesh.nodes[b].y);
      const ExactState ex = exact_solution_eval(qx, qy, t, params);
      for (int c = 0; c < 2; ++c) {
        const double uh = 0.5 * (solution.u[2 * a + c] + solution.u[2 * b + c]);
        const double zh = 0.5 * (solution.z[2 * a + c] + solution.z[2 * b + c]);
        eu += w * (uh - ex.u[c]) * (uh - ex.u[c]);
        ez += w * (zh - ex.z[c]) * (zh - ex.z[c]);
      }
      const double dp = solution.p[tr] - ex.p;
      ep += w * dp * dp;
    }
  }
  return {std::sqrt(eu), std::sqrt(ez), std::sqrt(ep)};
}

}  // namespace biotdd
