// FETI-DP solver internals: per-subdomain tearing of the local blocks into
// interior/dual/pressure/border variables, an optional change of basis that
// turns each subdomain-edge mean (and optionally first moment) of the u,z
// interface components into a shared coarse coordinate (fluctuations stay
// dual), two independent factorization splits (full and remainder), coarse
// assembly with the constant-pressure coordinates and optional global gauge
// row, operator applications, and field recovery. All cross-subdomain reductions run
// serially in a fixed canonical order (subdomains sorted by smallest owned
// triangle) so results are bit-identical for any thread count and under
// subdomain renumbering.

#include "biotdd/fetidp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace biotdd {

PrecondKind parse_precond(const std::string& name) {
  if (name == "dirichlet") return PrecondKind::dirichlet;
  if (name == "dirichlet-a-only") return PrecondKind::dirichlet_a_only;
  if (name == "none") return PrecondKind::none;
  throw std::invalid_argument("unknown preconditioner: " + name);
}

std::string precond_name(PrecondKind kind) {
  switch (kind) {
    case PrecondKind::dirichlet:
      return "dirichlet";
    case PrecondKind::dirichlet_a_only:
      return "dirichlet-a-only";
    case PrecondKind::none:
      return "none";
  }
  throw std::invalid_argument("unknown preconditioner kind");
}

CoarseSpace parse_coarse_space(const std::string& name) {
  if (name == "edge-moments") return CoarseSpace::edge_moments;
  if (name == "edge-averages") return CoarseSpace::edge_averages;
  if (name == "vertex") return CoarseSpace::vertex_only;
  throw std::invalid_argument("unknown coarse space: " + name);
}

std::string coarse_space_name(CoarseSpace coarse) {
  switch (coarse) {
    case CoarseSpace::edge_moments:
      return "edge-moments";
    case CoarseSpace::edge_averages:
      return "edge-averages";
    case CoarseSpace::vertex_only:
      return "vertex";
  }
  throw std::invalid_argument("unknown coarse space kind");
}

namespace {

// Runs fn over [0, n) with per-slot exception capture; the lowest-index
// exception is rethrown after the loop so failures are deterministic.
template <typename Fn>
void parallel_subs(int n, int n_threads, Fn&& fn) {
  std::vector<std::exception_ptr> errs(static_cast<size_t>(n));
  parallel_for(n, n_threads, [&](int i) {
    try {
      fn(i);
    } catch (...) {
      errs[static_cast<size_t>(i)] = std::current_exception();
    }
  });
  for (auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }
}

// Identifies one subdomain edge and one u,z scalar component: the two
// owning subdomains plus the component index (0 ux, 1 uy, 2 zx, 3 zy). In a
// box partition two subdomains share at most one edge, so the key is unique
// per geometric edge and component.
using EdgeKey = std::array<int, 3>;

// Dense symmetric factorization with symmetric diagonal equilibration; the
// raw coarse matrices mix entry scales of the elastic and pressure
// coordinates beyond what a relative pivot test tolerates when the material
// is nearly incompressible and the permeability is tiny.
struct ScaledLu {
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  Eigen::VectorXd scale;

  void compute(const Eigen::MatrixXd& s) {
    const int n = static_cast<int>(s.rows());
    scale.resize(n);
    for (int i = 0; i < n; ++i) {
      const double m = std::max(s.row(i).cwiseAbs().maxCoeff(),
                                s.col(i).cwiseAbs().maxCoeff());
      scale[i] = m > 0.0 ? 1.0 / std::sqrt(m) : 1.0;
    }
    lu.compute(scale.asDiagonal() * s * scale.asDiagonal());
  }

  [[nodiscard]] bool invertible() const { return lu.isInvertible(); }

  [[nodiscard]] Vector solve(const Vector& r) const {
    return scale.cwiseProduct(lu.solve(Vector(scale.cwiseProduct(r))));
  }
};

}  // namespace

struct FetidpSolver::Impl {
  // One edge group: the nodal dual positions (within the subdomain's
  // assembled dual segment, ascending global dof id) sharing a subdomain
  // edge and component. In the average basis the nodal values v are
  // rewritten as v[0] = m - sum(f), v[i] = m + f[i-1]: the mean m is the
  // shared coarse coordinate and the fluctuations f are dual. In the
  // average + moment basis (k = members >= 2), with integer weights
  // w[i] = 2i - (k-1),
  //   v[0] = m + w[0] q + sum_{j>=2} (j-1) f[j],
  //   v[1] = m + w[1] q - sum_{j>=2} j f[j],
  //   v[i] = m + w[i] q + f[i]           (i >= 2),
  // which keeps sum(v) = k m and sum(w v) = sum(w^2) q exactly, so the
  // moment coordinate q is the exact weighted first moment and the jump of
  // a continuous trace stays exactly zero.
  struct Group {
    int avg_col = 0;      // position among this subdomain's edge columns
    int mom_col = -1;     // moment column, -1 when the mean alone is coarse
    int elim = 1;         // leading members eliminated by the basis change
    int coarse_slot = 0;  // global coarse slot of the mean; the moment,
                          // when present, sits at coarse_slot + 1
    std::vector<int> members;  // nodal dual positions, ascending dof id
    std::vector<int> fluct;    // new dual positions of members[elim..]
    std::vector<double> wts;   // moment weights, one per member
  };

  // Local variable layouts. The assembled local block orders dofs
  // [interior | dual | primal | pressure]; the torn "full" variables are
  // [interior | dual | pressure | border] and the "remainder" variables
  // (dual trace eliminated) are [interior | pressure | border], where the
  // border scalar is the Lagrange multiplier of the zero area-weighted
  // pressure-mean constraint. "Dual" means the transformed coordinates
  // whenever edge averages are active.
  struct Sub {
    std::vector<int> interior;  // global dof ids
    std::vector<int> dual;      // nodal dual dof ids (pre-transform)
    std::vector<int> primal;
    std::vector<int> pressure;
    int n_int = 0;
    int n_dual_nodal = 0;
    int n_dual = 0;  // dual coordinates after the basis change
    int n_prim = 0;
    int n_pres = 0;
    int n_avg = 0;  // edge coarse columns (means plus moments)
    int na = 0;     // full torn size
    int nr = 0;  // remainder size
    int dual_offset = 0;
    std::vector<Group> groups;     // ascending first-member dof id
    std::vector<int> old2new;      // nodal dual position -> dual coordinate,
                                   // -1 for the eliminated first members
    std::vector<int> pos_group;    // nodal dual position -> group index or -1
    std::vector<int> pos_member;   // nodal dual position -> member index
    std::vector<int> coarse_slots; // local coarse column -> global slot;
                                   // primal slots, edge slots, then the
                                   // constant-pressure slot
    // Assembled-local index -> transformed coordinates with coefficients;
    // identity outside the averaged edges.
    std::vector<std::vector<std::pair<int, double>>> expand;
    double area = 0.0;

    Factorization full_factor;        // [interior|dual|pressure|border]
    Factorization remainder_factor;   // [interior|pressure|border]
    Factorization a_interior_factor;  // u,z interior block (SPD)
    SparseMatrix k_rd;                // remainder rows x dual cols
    SparseMatrix k_dd;                // dual block
    SparseMatrix a_id;                // u,z-only interior x dual
    SparseMatrix a_dd;                // u,z-only dual block
    Eigen::MatrixXd k_ac;             // full rows x coarse cols
    Eigen::MatrixXd k_rc;             // remainder rows x coarse cols
    Eigen::MatrixXd k_dc;             // dual rows x coarse cols
    Eigen::MatrixXd w_a;              // full_factor^{-1} k_ac
    Eigen::MatrixXd w_r;              // remainder_factor^{-1} k_rc
  };

  struct Mult {
    int dof = 0;  // global dof id of the associated node
    int sub_lo = 0;
    int loc_lo = 0;  // dual-coordinate index on the +1 side
    int sub_hi = 0;
    int loc_hi = 0;
  };

  // One shared nodal dual dof with its positions in both copies; drives the
  // recovery averaging and the interface mismatch check.
  struct NodalPair {
    int dof = 0;
    int sub_lo = 0;
    int pos_lo = 0;
    int sub_hi = 0;
    int pos_hi = 0;
  };

  int n_sub = 0;
  int n_threads = 1;
  int n_nodes = 0;
  int n_triangles = 0;
  int n_primal_global = 0;
  int n_mult = 0;
  int n_dual_total = 0;
  int n_edge_coarse = 0;  // global edge coarse slots (means plus moments)
  int coarse_dim = 0;
  bool gauge_row = false;  // pins the global pressure mean when c0 = 0
  CoarseSpace coarse_kind = CoarseSpace::edge_moments;
  std::vector<Sub> subs;
  std::vector<int> canonical;  // reduction order over subdomains
  std::vector<Mult> mults;
  std::vector<NodalPair> nodal_pairs;
  ScaledLu coarse_full;   // from the full split
  ScaledLu coarse_schur;  // from the remainder split

  [[nodiscard]] Eigen::VectorXd gather_coarse(const Sub& sb,
                                              const Vector& x_c) const {
    Eigen::VectorXd local(static_cast<int>(sb.coarse_slots.size()));
    for (size_t j = 0; j < sb.coarse_slots.size(); ++j) {
      local[static_cast<int>(j)] = x_c[sb.coarse_slots[j]];
    }
    return local;
  }

  // Solves the torn system over (full variables, coarse) by block
  // elimination through the full split.
  void torn_solve(const std::vector<Vector>& b_a, const Vector& f_c,
                  std::vector<Vector>& x_a, Vector& x_c) const {
    std::vector<Vector> v(static_cast<size_t>(n_sub));
    std::vector<Eigen::VectorXd> g_c(static_cast<size_t>(n_sub));
    parallel_for(n_sub, n_threads, [&](int s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      v[static_cast<size_t>(s)] =
          sb.full_factor.solve(b_a[static_cast<size_t>(s)]);
      g_c[static_cast<size_t>(s)] =
          sb.k_ac.transpose() * v[static_cast<size_t>(s)];
    });
    Vector r_c = f_c;
    for (const int s : canonical) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      for (size_t j = 0; j < sb.coarse_slots.size(); ++j) {
        r_c[sb.coarse_slots[j]] -= g_c[static_cast<size_t>(s)][static_cast<int>(j)];
      }
    }
    x_c = coarse_full.solve(r_c);
    x_a.assign(static_cast<size_t>(n_sub), Vector());
    parallel_for(n_sub, n_threads, [&](int s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      x_a[static_cast<size_t>(s)] =
          v[static_cast<size_t>(s)] - sb.w_a * gather_coarse(sb, x_c);
    });
  }

  [[nodiscard]] Vector jump(const Vector& torn) const {
    Vector out(n_mult);
    for (size_t l = 0; l < mults.size(); ++l) {
      const Mult& m = mults[l];
      out[static_cast<int>(l)] =
          torn[subs[static_cast<size_t>(m.sub_lo)].dual_offset + m.loc_lo] -
          torn[subs[static_cast<size_t>(m.sub_hi)].dual_offset + m.loc_hi];
    }
    return out;
  }

  [[nodiscard]] Vector jump_transpose(const Vector& lambda) const {
    Vector out = Vector::Zero(n_dual_total);
    for (size_t l = 0; l < mults.size(); ++l) {
      const Mult& m = mults[l];
      const double v = lambda[static_cast<int>(l)];
      out[subs[static_cast<size_t>(m.sub_lo)].dual_offset + m.loc_lo] += v;
      out[subs[static_cast<size_t>(m.sub_hi)].dual_offset + m.loc_hi] -= v;
    }
    return out;
  }

  // Torn solve with a dual-only right-hand side; returns the dual slice
  // (the inverse of the dual-trace Schur operator).
  [[nodiscard]] Vector schur_inverse(const Vector& torn) const {
    std::vector<Vector> b(static_cast<size_t>(n_sub));
    for (int s = 0; s < n_sub; ++s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      Vector bs = Vector::Zero(sb.na);
      bs.segment(sb.n_int, sb.n_dual) = torn.segment(sb.dual_offset, sb.n_dual);
      b[static_cast<size_t>(s)] = std::move(bs);
    }
    std::vector<Vector> x_a;
    Vector x_c;
    torn_solve(b, Vector::Zero(coarse_dim), x_a, x_c);
    Vector out(n_dual_total);
    for (int s = 0; s < n_sub; ++s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      out.segment(sb.dual_offset, sb.n_dual) =
          x_a[static_cast<size_t>(s)].segment(sb.n_int, sb.n_dual);
    }
    return out;
  }

  [[nodiscard]] Vector schur_apply(const Vector& torn) const {
    std::vector<Vector> v_r(static_cast<size_t>(n_sub));
    std::vector<Vector> s1(static_cast<size_t>(n_sub));
    std::vector<Eigen::VectorXd> h_c(static_cast<size_t>(n_sub));
    parallel_for(n_sub, n_threads, [&](int si) {
      const size_t s = static_cast<size_t>(si);
      const Sub& sb = subs[s];
      const Vector in = torn.segment(sb.dual_offset, sb.n_dual);
      v_r[s] = sb.remainder_factor.solve(sb.k_rd * in);
      s1[s] = sb.k_dd * in;
      sb.k_rd.multiply_transpose_add(v_r[s], -1.0, s1[s]);
      h_c[s] = sb.k_dc.transpose() * in - sb.k_rc.transpose() * v_r[s];
    });
    Vector g_c = Vector::Zero(coarse_dim);
    for (const int s : canonical) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      for (size_t j = 0; j < sb.coarse_slots.size(); ++j) {
        g_c[sb.coarse_slots[j]] +=
            h_c[static_cast<size_t>(s)][static_cast<int>(j)];
      }
    }
    const Vector x_c = coarse_schur.solve(g_c);
    Vector out(n_dual_total);
    parallel_for(n_sub, n_threads, [&](int si) {
      const size_t s = static_cast<size_t>(si);
      const Sub& sb = subs[s];
      const Eigen::VectorXd xc_local = gather_coarse(sb, x_c);
      Vector res = s1[s] - sb.k_dc * xc_local;
      const Vector corr = sb.w_r * xc_local;
      sb.k_rd.multiply_transpose_add(corr, 1.0, res);
      out.segment(sb.dual_offset, sb.n_dual) = res;
    });
    return out;
  }

  [[nodiscard]] Vector interface_apply(const Vector& lambda) const {
    std::vector<Vector> b(static_cast<size_t>(n_sub));
    for (int s = 0; s < n_sub; ++s) {
      b[static_cast<size_t>(s)] = Vector::Zero(subs[static_cast<size_t>(s)].na);
    }
    for (size_t l = 0; l < mults.size(); ++l) {
      const Mult& m = mults[l];
      const double v = lambda[static_cast<int>(l)];
      const Sub& lo = subs[static_cast<size_t>(m.sub_lo)];
      const Sub& hi = subs[static_cast<size_t>(m.sub_hi)];
      b[static_cast<size_t>(m.sub_lo)][lo.n_int + m.loc_lo] += v;
      b[static_cast<size_t>(m.sub_hi)][hi.n_int + m.loc_hi] -= v;
    }
    std::vector<Vector> x_a;
    Vector x_c;
    torn_solve(b, Vector::Zero(coarse_dim), x_a, x_c);
    Vector torn(n_dual_total);
    for (int s = 0; s < n_sub; ++s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      torn.segment(sb.dual_offset, sb.n_dual) =
          x_a[static_cast<size_t>(s)].segment(sb.n_int, sb.n_dual);
    }
    return jump(torn);
  }

  [[nodiscard]] Vector harmonic(const Vector& torn, PrecondKind kind) const {
    if (kind == PrecondKind::none) {
      throw std::invalid_argument("harmonic extension needs a dirichlet kind");
    }
    const bool saddle = kind == PrecondKind::dirichlet;
    Vector out(n_dual_total);
    parallel_for(n_sub, n_threads, [&](int si) {
      const Sub& sb = subs[static_cast<size_t>(si)];
      const Vector in = torn.segment(sb.dual_offset, sb.n_dual);
      Vector res;
      if (saddle) {
        const Vector y = sb.remainder_factor.solve(sb.k_rd * in);
        res = sb.k_dd * in;
        sb.k_rd.multiply_transpose_add(y, -1.0, res);
      } else {
        res = sb.a_dd * in;
        if (sb.n_int > 0) {
          const Vector y = sb.a_interior_factor.solve(sb.a_id * in);
          sb.a_id.multiply_transpose_add(y, -1.0, res);
        }
      }
      out.segment(sb.dual_offset, sb.n_dual) = res;
    });
    return out;
  }

  [[nodiscard]] Vector dual_diagonal(const Vector& torn,
                                     PrecondKind kind) const {
    if (kind == PrecondKind::none) {
      throw std::invalid_argument("dual block needs a dirichlet kind");
    }
    const bool saddle = kind == PrecondKind::dirichlet;
    Vector out(n_dual_total);
    for (int s = 0; s < n_sub; ++s) {
      const Sub& sb = subs[static_cast<size_t>(s)];
      const Vector in = torn.segment(sb.dual_offset, sb.n_dual);
      out.segment(sb.dual_offset, sb.n_dual) =
          saddle ? sb.k_dd * in : sb.a_dd * in;
    }
    return out;
  }

  [[nodiscard]] Vector precondition(const Vector& r, PrecondKind kind) const {
    if (kind == PrecondKind::none) return r;
    // Multiplicity is 2 on every dual coordinate, so the scaled jump
    // operator is half the plain one and the sandwich carries a factor 1/4.
    return 0.25 * jump(harmonic(jump_transpose(r), kind));
  }
};

FetidpSolver::FetidpSolver(const BlockSystem& system, const DofMap& dofmap,
                           const SubdomainPartition& partition, int n_threads,
                           CoarseSpace coarse)
    : impl_(std::make_unique<Impl>()) {
  Impl& im = *impl_;
  im.n_sub = dofmap.n_subdomains;
  im.n_threads = std::max(1, n_threads);
  im.n_nodes = dofmap.n_nodes;
  im.n_triangles = dofmap.n_triangles;
  im.gauge_row = system.pressure_nullspace;
  im.coarse_kind = coarse;
  im.n_primal_global = static_cast<int>(dofmap.primal_dofs.size());
  if (static_cast<int>(system.local_blocks.size()) != im.n_sub) {
    throw std::invalid_argument("fetidp: system/partition subdomain mismatch");
  }

  // Canonical reduction order: ascending smallest owned triangle, a
  // geometric key independent of subdomain numbering.
  im.canonical.resize(static_cast<size_t>(im.n_sub));
  std::iota(im.canonical.begin(), im.canonical.end(), 0);
  for (int s = 0; s < im.n_sub; ++s) {
    if (partition.subdomain_triangles[static_cast<size_t>(s)].empty()) {
      throw std::invalid_argument("fetidp: subdomain owns no triangles");
    }
  }
  std::sort(im.canonical.begin(), im.canonical.end(), [&](int a, int b) {
    return partition.subdomain_triangles[static_cast<size_t>(a)].front() <
           partition.subdomain_triangles[static_cast<size_t>(b)].front();
  });
  std::vector<int> canonical_rank(static_cast<size_t>(im.n_sub), 0);
  for (int r = 0; r < im.n_sub; ++r) {
    canonical_rank[static_cast<size_t>(im.canonical[static_cast<size_t>(r)])] =
        r;
  }

  const bool enriched = coarse != CoarseSpace::vertex_only;
  const bool moments = coarse == CoarseSpace::edge_moments;
  const auto edge_key = [&](int d) {
    const auto& owners = dofmap.dof_subdomains[static_cast<size_t>(d)];
    const int type = (d < 2 * im.n_nodes ? 0 : 2) + d % 2;
    return EdgeKey{owners[0], owners[1], type};
  };

  // Edge enumeration in ascending global dof id, so the slot layout is
  // independent of subdomain numbering. Each edge contributes one coarse
  // slot for the mean plus, when first moments are active and the edge has
  // at least two dual dofs, a second slot for the moment; the same count of
  // leading members is eliminated by the basis change.
  struct EdgeInfo {
    int count = 0;
    int slot = 0;  // first edge slot, offset from the primal block
    int elim = 1;  // eliminated leading members == coarse slots
  };
  std::map<EdgeKey, EdgeInfo> edges;
  std::vector<EdgeKey> edge_order;  // discovery (ascending first dof) order
  for (int d = 0; d < dofmap.n_dofs; ++d) {
    if (dofmap.dof_class[static_cast<size_t>(d)] != DofClass::dual) continue;
    const auto& owners = dofmap.dof_subdomains[static_cast<size_t>(d)];
    if (owners.size() != 2) {
      throw std::invalid_argument("fetidp: dual dof multiplicity is not 2");
    }
    if (enriched) {
      const auto [it, fresh] = edges.try_emplace(edge_key(d));
      if (fresh) edge_order.push_back(it->first);
      ++it->second.count;
    }
  }
  int n_edge_slots = 0;
  for (const EdgeKey& key : edge_order) {
    EdgeInfo& e = edges.at(key);
    e.slot = n_edge_slots;
    e.elim = moments && e.count >= 2 ? 2 : 1;
    n_edge_slots += e.elim;
  }
  im.n_edge_coarse = n_edge_slots;
  im.coarse_dim = im.n_primal_global + im.n_edge_coarse + im.n_sub +
                  (im.gauge_row ? 1 : 0);
  im.subs.resize(static_cast<size_t>(im.n_sub));

  // Per-subdomain layout: nodal lists, edge groups, the dual coordinate
  // renumbering, coarse slots, and the basis-change expansion tables.
  int dual_off = 0;
  for (int s = 0; s < im.n_sub; ++s) {
    Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
    const SubdomainDofs& sd = dofmap.per_subdomain[static_cast<size_t>(s)];
    sb.interior = sd.interior;
    sb.dual = sd.dual;
    sb.primal = sd.primal;
    sb.pressure = sd.pressure;
    sb.n_int = static_cast<int>(sd.interior.size());
    sb.n_dual_nodal = static_cast<int>(sd.dual.size());
    sb.n_prim = static_cast<int>(sd.primal.size());
    sb.n_pres = static_cast<int>(sd.pressure.size());
    if (sb.n_pres == 0) {
      throw std::invalid_argument("fetidp: subdomain owns no pressure dofs");
    }

    sb.pos_group.assign(static_cast<size_t>(sb.n_dual_nodal), -1);
    sb.pos_member.assign(static_cast<size_t>(sb.n_dual_nodal), 0);
    if (enriched) {
      std::map<EdgeKey, int> local_of;
      for (int q = 0; q < sb.n_dual_nodal; ++q) {
        const EdgeKey key = edge_key(sb.dual[static_cast<size_t>(q)]);
        const auto [it, fresh] =
            local_of.try_emplace(key, static_cast<int>(sb.groups.size()));
        if (fresh) {
          Impl::Group g;
          const EdgeInfo& e = edges.at(key);
          g.coarse_slot = im.n_primal_global + e.slot;
          g.elim = e.elim;
          sb.groups.push_back(std::move(g));
        }
        Impl::Group& g = sb.groups[static_cast<size_t>(it->second)];
        sb.pos_group[static_cast<size_t>(q)] = it->second;
        sb.pos_member[static_cast<size_t>(q)] =
            static_cast<int>(g.members.size());
        g.members.push_back(q);
      }
    }
    int extra = 0;
    for (Impl::Group& g : sb.groups) {
      g.avg_col = extra++;
      if (g.elim == 2) {
        g.mom_col = extra++;
        const int k = static_cast<int>(g.members.size());
        g.wts.resize(static_cast<size_t>(k));
        for (int i = 0; i < k; ++i) {
          g.wts[static_cast<size_t>(i)] = static_cast<double>(2 * i - (k - 1));
        }
      }
    }
    sb.n_avg = extra;

    sb.old2new.assign(static_cast<size_t>(sb.n_dual_nodal), -1);
    int next = 0;
    for (int q = 0; q < sb.n_dual_nodal; ++q) {
      const int g = sb.pos_group[static_cast<size_t>(q)];
      if (g >= 0 && sb.pos_member[static_cast<size_t>(q)] <
                        sb.groups[static_cast<size_t>(g)].elim) {
        continue;  // replaced by the edge mean / moment
      }
      sb.old2new[static_cast<size_t>(q)] = next++;
    }
    sb.n_dual = next;
    for (Impl::Group& g : sb.groups) {
      g.fluct.reserve(g.members.size() - static_cast<size_t>(g.elim));
      for (size_t mi = static_cast<size_t>(g.elim); mi < g.members.size();
           ++mi) {
        g.fluct.push_back(sb.old2new[static_cast<size_t>(g.members[mi])]);
      }
    }

    sb.na = sb.n_int + sb.n_dual + sb.n_pres + 1;
    sb.nr = sb.n_int + sb.n_pres + 1;
    sb.dual_offset = dual_off;
    dual_off += sb.n_dual;

    sb.coarse_slots.reserve(static_cast<size_t>(sb.n_prim + sb.n_avg) + 1);
    for (const int g : sd.primal) {
      const auto it = std::lower_bound(dofmap.primal_dofs.begin(),
                                       dofmap.primal_dofs.end(), g);
      sb.coarse_slots.push_back(
          static_cast<int>(it - dofmap.primal_dofs.begin()));
    }
    for (const Impl::Group& g : sb.groups) {
      sb.coarse_slots.push_back(g.coarse_slot);
      if (g.mom_col >= 0) sb.coarse_slots.push_back(g.coarse_slot + 1);
    }
    sb.coarse_slots.push_back(im.n_primal_global + im.n_edge_coarse +
                              canonical_rank[static_cast<size_t>(s)]);

    // Transformed coordinate layout per subdomain:
    // [interior | dual | primal | pressure | edge means and moments].
    const int b_dual = sb.n_int + sb.n_dual;
    const int b_prim = b_dual + sb.n_prim;
    const int b_pres = b_prim + sb.n_pres;
    sb.expand.assign(
        static_cast<size_t>(sb.n_int + sb.n_dual_nodal + sb.n_prim +
                            sb.n_pres),
        {});
    for (int l = 0; l < sb.n_int; ++l) {
      sb.expand[static_cast<size_t>(l)] = {{l, 1.0}};
    }
    for (int q = 0; q < sb.n_dual_nodal; ++q) {
      auto& e = sb.expand[static_cast<size_t>(sb.n_int + q)];
      const int g = sb.pos_group[static_cast<size_t>(q)];
      if (g < 0) {
        e = {{sb.n_int + sb.old2new[static_cast<size_t>(q)], 1.0}};
        continue;
      }
      const Impl::Group& gr = sb.groups[static_cast<size_t>(g)];
      const int mi = sb.pos_member[static_cast<size_t>(q)];
      e.push_back({b_pres + gr.avg_col, 1.0});
      if (gr.elim == 2) {
        e.push_back({b_pres + gr.mom_col, gr.wts[static_cast<size_t>(mi)]});
      }
      if (mi >= gr.elim) {
        e.push_back({sb.n_int + sb.old2new[static_cast<size_t>(q)], 1.0});
      } else if (gr.elim == 1) {
        for (const int f : gr.fluct) e.push_back({sb.n_int + f, -1.0});
      } else {
        // Dependent coefficients keeping the fluctuations mean- and
        // moment-free: member 0 gets (j-1), member 1 gets -j.
        for (size_t j = 2; j < gr.members.size(); ++j) {
          const double c = mi == 0 ? static_cast<double>(j - 1)
                                   : -static_cast<double>(j);
          e.push_back({sb.n_int + gr.fluct[j - 2], c});
        }
      }
    }
    for (int j = 0; j < sb.n_prim; ++j) {
      sb.expand[static_cast<size_t>(sb.n_int + sb.n_dual_nodal + j)] = {
          {b_dual + j, 1.0}};
    }
    for (int j = 0; j < sb.n_pres; ++j) {
      sb.expand[static_cast<size_t>(sb.n_int + sb.n_dual_nodal + sb.n_prim +
                                    j)] = {{b_prim + j, 1.0}};
    }

    double area = 0.0;
    for (const int g : sd.pressure) {
      area += system.p_null[g - 4 * im.n_nodes];
    }
    sb.area = area;
  }
  im.n_dual_total = dual_off;

  // Multipliers (one per shared dual coordinate) and the shared nodal
  // pairs, both signed + on the lower-numbered subdomain. The leading elim
  // members of every edge have no fluctuation coordinate and so no
  // multiplier; the scan order matches the member order on both sides.
  std::map<EdgeKey, int> edge_seen;
  for (int d = 0; d < dofmap.n_dofs; ++d) {
    if (dofmap.dof_class[static_cast<size_t>(d)] != DofClass::dual) continue;
    const auto& owners = dofmap.dof_subdomains[static_cast<size_t>(d)];
    const auto pos = [&](int s) {
      const auto& list = im.subs[static_cast<size_t>(s)].dual;
      return static_cast<int>(
          std::lower_bound(list.begin(), list.end(), d) - list.begin());
    };
    const int pos_lo = pos(owners[0]);
    const int pos_hi = pos(owners[1]);
    im.nodal_pairs.push_back({d, owners[0], pos_lo, owners[1], pos_hi});
    if (enriched &&
        edge_seen[edge_key(d)]++ < edges.at(edge_key(d)).elim) {
      continue;
    }
    Impl::Mult m;
    m.dof = d;
    m.sub_lo = owners[0];
    m.sub_hi = owners[1];
    m.loc_lo =
        im.subs[static_cast<size_t>(owners[0])].old2new[static_cast<size_t>(
            pos_lo)];
    m.loc_hi =
        im.subs[static_cast<size_t>(owners[1])].old2new[static_cast<size_t>(
            pos_hi)];
    im.mults.push_back(m);
  }
  im.n_mult = static_cast<int>(im.mults.size());

  // Per-subdomain basis change and dispatch of the local block into the
  // torn splits, then factorization and the coarse contributions.
  std::vector<Eigen::MatrixXd> c_local(static_cast<size_t>(im.n_sub));
  std::vector<Eigen::MatrixXd> s_full(static_cast<size_t>(im.n_sub));
  std::vector<Eigen::MatrixXd> s_rem(static_cast<size_t>(im.n_sub));
  parallel_subs(im.n_sub, im.n_threads, [&](int si) {
    const size_t s = static_cast<size_t>(si);
    Impl::Sub& sb = im.subs[s];
    const SparseMatrix& k = system.local_blocks[s].k;
    const int ni = sb.n_int;
    const int nd = sb.n_dual;
    const int np = sb.n_prim;
    const int nq = sb.n_pres;
    const int ne = sb.n_avg;
    const int ncl = np + ne + 1;
    const int p0c = np + ne;
    if (k.n_rows != ni + sb.n_dual_nodal + np + nq) {
      throw std::invalid_argument("fetidp: local block size mismatch");
    }
    // Category boundaries of the transformed coordinates
    // [int | dual | primal | pressure | mean].
    const int b_dual = ni + nd;
    const int b_prim = b_dual + np;
    const int b_pres = b_prim + nq;
    const auto cat = [&](int l) {
      if (l < ni) return 0;
      if (l < b_dual) return 1;
      if (l < b_prim) return 2;
      if (l < b_pres) return 3;
      return 4;
    };
    const auto a_of = [&](int l, int c) {
      return c == 3 ? l - np : l;  // pressure slides over the primal block
    };
    const auto r_of = [&](int l, int c) {
      return c == 3 ? l - nd - np : l;  // interior or pressure
    };
    const auto coarse_col = [&](int l, int c) {
      return c == 2 ? l - b_dual : np + (l - b_pres);
    };

    // Transformed local entries K' = T^T K T through the expansion tables.
    std::vector<Triplet> tt;
    tt.reserve(k.values.size());
    for (int r = 0; r < k.n_rows; ++r) {
      const auto& er = sb.expand[static_cast<size_t>(r)];
      for (int idx = k.row_offsets[static_cast<size_t>(r)];
           idx < k.row_offsets[static_cast<size_t>(r) + 1]; ++idx) {
        const auto& ec =
            sb.expand[static_cast<size_t>(k.col_indices[static_cast<size_t>(
                idx)])];
        const double v = k.values[static_cast<size_t>(idx)];
        for (const auto& [ri, rw] : er) {
          for (const auto& [ci, cw] : ec) {
            tt.push_back({ri, ci, rw * cw * v});
          }
        }
      }
    }

    std::vector<Triplet> t_aa, t_rr, t_rd, t_dd, t_aii, t_aid, t_add;
    sb.k_ac = Eigen::MatrixXd::Zero(sb.na, ncl);
    sb.k_rc = Eigen::MatrixXd::Zero(sb.nr, ncl);
    sb.k_dc = Eigen::MatrixXd::Zero(nd, ncl);
    c_local[s] = Eigen::MatrixXd::Zero(ncl, ncl);

    for (const Triplet& t : tt) {
      const int rc = cat(t.row);
      const int cc = cat(t.col);
      const double v = t.value;
      const bool r_coarse = rc == 2 || rc == 4;
      const bool c_coarse = cc == 2 || cc == 4;
      if (!r_coarse && !c_coarse) {
        t_aa.push_back({a_of(t.row, rc), a_of(t.col, cc), v});
        const bool r_dual = rc == 1;
        const bool c_dual = cc == 1;
        if (!r_dual && !c_dual) {
          t_rr.push_back({r_of(t.row, rc), r_of(t.col, cc), v});
        } else if (!r_dual && c_dual) {
          t_rd.push_back({r_of(t.row, rc), t.col - ni, v});
        } else if (r_dual && c_dual) {
          t_dd.push_back({t.row - ni, t.col - ni, v});
        }
        if (cc == 3) {
          // Column sum into the constant-pressure coarse coordinate.
          sb.k_ac(a_of(t.row, rc), p0c) += v;
          if (!r_dual) {
            sb.k_rc(r_of(t.row, rc), p0c) += v;
          } else {
            sb.k_dc(t.row - ni, p0c) += v;
          }
          if (rc == 3) c_local[s](p0c, p0c) += v;
        }
        if (rc != 3 && cc != 3) {
          // Pure u,z coupling for the A-only harmonic extension.
          if (!r_dual && !c_dual) {
            t_aii.push_back({t.row, t.col, v});
          } else if (!r_dual && c_dual) {
            t_aid.push_back({t.row, t.col - ni, v});
          } else if (r_dual && c_dual) {
            t_add.push_back({t.row - ni, t.col - ni, v});
          }
        }
      } else if (r_coarse && c_coarse) {
        c_local[s](coarse_col(t.row, rc), coarse_col(t.col, cc)) += v;
      } else if (r_coarse) {
        if (cc == 3) c_local[s](coarse_col(t.row, rc), p0c) += v;
        // couplings to interior/dual enter through the transpose below
      } else {
        const int col = coarse_col(t.col, cc);
        sb.k_ac(a_of(t.row, rc), col) += v;
        if (rc == 1) {
          sb.k_dc(t.row - ni, col) += v;
        } else {
          sb.k_rc(r_of(t.row, rc), col) += v;
        }
        if (rc == 3) c_local[s](p0c, col) += v;
      }
    }

    // Border row/column: normalized area weights against the pressure dofs.
    double norm = 0.0;
    for (const int g : sb.pressure) {
      const double w = system.p_null[g - 4 * im.n_nodes];
      norm += w * w;
    }
    norm = std::sqrt(norm);
    for (int j = 0; j < nq; ++j) {
      const double w =
          system.p_null[sb.pressure[static_cast<size_t>(j)] - 4 * im.n_nodes] /
          norm;
      t_aa.push_back({ni + nd + j, sb.na - 1, w});
      t_aa.push_back({sb.na - 1, ni + nd + j, w});
      t_rr.push_back({ni + j, sb.nr - 1, w});
      t_rr.push_back({sb.nr - 1, ni + j, w});
    }

    const SparseMatrix k_aa =
        csr_from_triplets(sb.na, sb.na, std::move(t_aa));
    const SparseMatrix k_rr =
        csr_from_triplets(sb.nr, sb.nr, std::move(t_rr));
    const SparseMatrix a_ii = csr_from_triplets(ni, ni, std::move(t_aii));
    sb.k_rd = csr_from_triplets(sb.nr, nd, std::move(t_rd));
    sb.k_dd = csr_from_triplets(nd, nd, std::move(t_dd));
    sb.a_id = csr_from_triplets(ni, nd, std::move(t_aid));
    sb.a_dd = csr_from_triplets(nd, nd, std::move(t_add));
    try {
      sb.full_factor =
          factorize_symmetric_indefinite(k_aa, Factorization::Method::lu);
      sb.remainder_factor =
          factorize_symmetric_indefinite(k_rr, Factorization::Method::lu);
      if (ni > 0) {
        sb.a_interior_factor = factorize_symmetric_indefinite(a_ii);
      }
    } catch (const SingularMatrixError& e) {
      throw std::runtime_error("fetidp: singular local block in subdomain " +
                               std::to_string(si) + ": " + e.what());
    }

    sb.w_a.resize(sb.na, ncl);
    sb.w_r.resize(sb.nr, ncl);
    for (int j = 0; j < ncl; ++j) {
      sb.w_a.col(j) = sb.full_factor.solve(Vector(sb.k_ac.col(j)));
      sb.w_r.col(j) = sb.remainder_factor.solve(Vector(sb.k_rc.col(j)));
    }
    s_full[s] = sb.k_ac.transpose() * sb.w_a;
    s_rem[s] = sb.k_rc.transpose() * sb.w_r;
  });

  // Coarse matrices for the two splits, accumulated in canonical order.
  Eigen::MatrixXd coarse_a =
      Eigen::MatrixXd::Zero(im.coarse_dim, im.coarse_dim);
  Eigen::MatrixXd coarse_r =
      Eigen::MatrixXd::Zero(im.coarse_dim, im.coarse_dim);
  for (const int s : im.canonical) {
    const Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
    const int ncl = static_cast<int>(sb.coarse_slots.size());
    for (int i = 0; i < ncl; ++i) {
      for (int j = 0; j < ncl; ++j) {
        const int gi = sb.coarse_slots[static_cast<size_t>(i)];
        const int gj = sb.coarse_slots[static_cast<size_t>(j)];
        const double base = c_local[static_cast<size_t>(s)](i, j);
        coarse_a(gi, gj) += base - s_full[static_cast<size_t>(s)](i, j);
        coarse_r(gi, gj) += base - s_rem[static_cast<size_t>(s)](i, j);
      }
    }
  }
  if (im.gauge_row) {
    double norm = 0.0;
    for (const int s : im.canonical) {
      norm += im.subs[static_cast<size_t>(s)].area *
              im.subs[static_cast<size_t>(s)].area;
    }
    norm = std::sqrt(norm);
    const int g = im.coarse_dim - 1;
    for (int s = 0; s < im.n_sub; ++s) {
      const Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
      const int slot = sb.coarse_slots.back();
      const double w = sb.area / norm;
      coarse_a(slot, g) = w;
      coarse_a(g, slot) = w;
      coarse_r(slot, g) = w;
      coarse_r(g, slot) = w;
    }
  }
  im.coarse_full.compute(coarse_a);
  im.coarse_schur.compute(coarse_r);
  if (!im.coarse_full.invertible() || !im.coarse_schur.invertible()) {
    throw std::runtime_error("fetidp: coarse matrix is singular");
  }
}

FetidpSolver::~FetidpSolver() = default;
FetidpSolver::FetidpSolver(FetidpSolver&&) noexcept = default;
FetidpSolver& FetidpSolver::operator=(FetidpSolver&&) noexcept = default;

int FetidpSolver::n_multipliers() const { return impl_->n_mult; }
int FetidpSolver::n_dual_total() const { return impl_->n_dual_total; }
int FetidpSolver::coarse_dim() const { return impl_->coarse_dim; }
int FetidpSolver::n_subdomains() const { return impl_->n_sub; }
CoarseSpace FetidpSolver::coarse_space() const { return impl_->coarse_kind; }
int FetidpSolver::n_edge_coarse() const { return impl_->n_edge_coarse; }

Vector FetidpSolver::torn_dual_coordinates(const Vector& uz) const {
  const Impl& im = *impl_;
  if (uz.size() != 4 * im.n_nodes) {
    throw std::invalid_argument("torn_dual_coordinates: size mismatch");
  }
  Vector out(im.n_dual_total);
  for (const Impl::Sub& sb : im.subs) {
    for (int q = 0; q < sb.n_dual_nodal; ++q) {
      if (sb.pos_group[static_cast<size_t>(q)] >= 0) continue;
      out[sb.dual_offset + sb.old2new[static_cast<size_t>(q)]] =
          uz[sb.dual[static_cast<size_t>(q)]];
    }
    for (const Impl::Group& g : sb.groups) {
      double mean = 0.0;
      for (const int q : g.members) {
        mean += uz[sb.dual[static_cast<size_t>(q)]];
      }
      mean /= static_cast<double>(g.members.size());
      if (g.elim == 1) {
        for (size_t mi = 1; mi < g.members.size(); ++mi) {
          out[sb.dual_offset + g.fluct[mi - 1]] =
              uz[sb.dual[static_cast<size_t>(g.members[mi])]] - mean;
        }
        continue;
      }
      double mom = 0.0;
      double wsq = 0.0;
      for (size_t mi = 0; mi < g.members.size(); ++mi) {
        mom += g.wts[mi] * uz[sb.dual[static_cast<size_t>(g.members[mi])]];
        wsq += g.wts[mi] * g.wts[mi];
      }
      mom /= wsq;
      for (size_t mi = 2; mi < g.members.size(); ++mi) {
        out[sb.dual_offset + g.fluct[mi - 2]] =
            uz[sb.dual[static_cast<size_t>(g.members[mi])]] - mean -
            g.wts[mi] * mom;
      }
    }
  }
  return out;
}

Vector FetidpSolver::apply_jump(const Vector& torn) const {
  if (torn.size() != impl_->n_dual_total) {
    throw std::invalid_argument("apply_jump: size mismatch");
  }
  return impl_->jump(torn);
}

Vector FetidpSolver::apply_jump_transpose(const Vector& lambda) const {
  if (lambda.size() != impl_->n_mult) {
    throw std::invalid_argument("apply_jump_transpose: size mismatch");
  }
  return impl_->jump_transpose(lambda);
}

Vector FetidpSolver::apply_schur(const Vector& torn) const {
  if (torn.size() != impl_->n_dual_total) {
    throw std::invalid_argument("apply_schur: size mismatch");
  }
  return impl_->schur_apply(torn);
}

Vector FetidpSolver::apply_schur_inverse(const Vector& torn) const {
  if (torn.size() != impl_->n_dual_total) {
    throw std::invalid_argument("apply_schur_inverse: size mismatch");
  }
  return impl_->schur_inverse(torn);
}

Vector FetidpSolver::apply_interface_operator(const Vector& lambda) const {
  if (lambda.size() != impl_->n_mult) {
    throw std::invalid_argument("apply_interface_operator: size mismatch");
  }
  return impl_->interface_apply(lambda);
}

Vector FetidpSolver::apply_harmonic(const Vector& torn,
                                    PrecondKind kind) const {
  if (torn.size() != impl_->n_dual_total) {
    throw std::invalid_argument("apply_harmonic: size mismatch");
  }
  return impl_->harmonic(torn, kind);
}

Vector FetidpSolver::apply_dual_diagonal(const Vector& torn,
                                         PrecondKind kind) const {
  if (torn.size() != impl_->n_dual_total) {
    throw std::invalid_argument("apply_dual_diagonal: size mismatch");
  }
  return impl_->dual_diagonal(torn, kind);
}

Vector FetidpSolver::apply_dirichlet_preconditioner(const Vector& r) const {
  return apply_preconditioner(r, PrecondKind::dirichlet);
}

Vector FetidpSolver::apply_preconditioner(const Vector& r,
                                          PrecondKind kind) const {
  if (r.size() != impl_->n_mult) {
    throw std::invalid_argument("apply_preconditioner: size mismatch");
  }
  return impl_->precondition(r, kind);
}

PreparedRhs FetidpSolver::prepare_rhs(const BlockSystem& system) const {
  const Impl& im = *impl_;
  if (static_cast<int>(system.local_blocks.size()) != im.n_sub) {
    throw std::invalid_argument("prepare_rhs: subdomain count mismatch");
  }
  PreparedRhs out;
  out.f_a.assign(static_cast<size_t>(im.n_sub), Vector());
  out.f_c = Vector::Zero(im.coarse_dim);
  out.f_delta_star = Vector(im.n_dual_total);

  // Transformed load per subdomain, f' = T^T f, split as
  // [interior | dual | primal | pressure | edge means and moments].
  std::vector<Vector> f_new(static_cast<size_t>(im.n_sub));
  std::vector<Vector> v_r(static_cast<size_t>(im.n_sub));
  std::vector<Eigen::VectorXd> h_c(static_cast<size_t>(im.n_sub));
  parallel_for(im.n_sub, im.n_threads, [&](int si) {
    const size_t s = static_cast<size_t>(si);
    const Impl::Sub& sb = im.subs[s];
    const Vector& fl = system.local_blocks[s].f;
    Vector fn = Vector::Zero(sb.n_int + sb.n_dual + sb.n_prim + sb.n_pres +
                             sb.n_avg);
    for (size_t l = 0; l < sb.expand.size(); ++l) {
      for (const auto& [idx, w] : sb.expand[l]) {
        fn[idx] += w * fl[static_cast<int>(l)];
      }
    }
    Vector fa = Vector::Zero(sb.na);
    fa.segment(0, sb.n_int + sb.n_dual) = fn.segment(0, sb.n_int + sb.n_dual);
    fa.segment(sb.n_int + sb.n_dual, sb.n_pres) =
        fn.segment(sb.n_int + sb.n_dual + sb.n_prim, sb.n_pres);
    out.f_a[s] = std::move(fa);
    Vector fr = Vector::Zero(sb.nr);
    fr.segment(0, sb.n_int) = out.f_a[s].segment(0, sb.n_int);
    fr.segment(sb.n_int, sb.n_pres) =
        out.f_a[s].segment(sb.n_int + sb.n_dual, sb.n_pres);
    v_r[s] = sb.remainder_factor.solve(fr);
    h_c[s] = sb.k_rc.transpose() * v_r[s];
    f_new[s] = std::move(fn);
  });

  for (const int s : im.canonical) {
    const Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
    const Vector& fn = f_new[static_cast<size_t>(s)];
    const int b_dual = sb.n_int + sb.n_dual;
    for (int j = 0; j < sb.n_prim; ++j) {
      out.f_c[sb.coarse_slots[static_cast<size_t>(j)]] += fn[b_dual + j];
    }
    for (int j = 0; j < sb.n_avg; ++j) {
      out.f_c[sb.coarse_slots[static_cast<size_t>(sb.n_prim + j)]] +=
          fn[b_dual + sb.n_prim + sb.n_pres + j];
    }
    out.f_c[sb.coarse_slots.back()] +=
        fn.segment(b_dual + sb.n_prim, sb.n_pres).sum();
  }
  Vector r_c = out.f_c;
  for (const int s : im.canonical) {
    const Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
    for (size_t j = 0; j < sb.coarse_slots.size(); ++j) {
      r_c[sb.coarse_slots[j]] -=
          h_c[static_cast<size_t>(s)][static_cast<int>(j)];
    }
  }
  const Vector x_c0 = im.coarse_schur.solve(r_c);

  parallel_for(im.n_sub, im.n_threads, [&](int si) {
    const size_t s = static_cast<size_t>(si);
    const Impl::Sub& sb = im.subs[s];
    const Eigen::VectorXd xc_local = im.gather_coarse(sb, x_c0);
    Vector fd =
        f_new[s].segment(sb.n_int, sb.n_dual) - sb.k_dc * xc_local;
    const Vector term = v_r[s] - sb.w_r * xc_local;
    sb.k_rd.multiply_transpose_add(term, -1.0, fd);
    out.f_delta_star.segment(sb.dual_offset, sb.n_dual) = fd;
  });
  return out;
}

std::pair<Vector, PcgReport> FetidpSolver::solve_interface(
    const Vector& f_delta_star, PrecondKind precond, double tol,
    int max_it) const {
  const Impl& im = *impl_;
  if (f_delta_star.size() != im.n_dual_total) {
    throw std::invalid_argument("solve_interface: size mismatch");
  }
  if (im.n_mult == 0) {
    PcgReport report;
    report.converged = true;
    return {Vector(0), report};
  }
  const Vector d = im.jump(im.schur_inverse(f_delta_star));
  PcgResult res =
      pcg([&](const Vector& l) { return im.interface_apply(l); },
          [&](const Vector& r) { return im.precondition(r, precond); }, d, tol,
          max_it);
  return {std::move(res.x), std::move(res.report)};
}

FetidpSolution FetidpSolver::recover_solution(const PreparedRhs& prep,
                                              const Vector& lambda,
                                              const BlockSystem& system) const {
  const Impl& im = *impl_;
  if (lambda.size() != im.n_mult ||
      static_cast<int>(prep.f_a.size()) != im.n_sub) {
    throw std::invalid_argument("recover_solution: size mismatch");
  }
  std::vector<Vector> b = prep.f_a;
  for (size_t l = 0; l < im.mults.size(); ++l) {
    const Impl::Mult& m = im.mults[l];
    const double v = lambda[static_cast<int>(l)];
    b[static_cast<size_t>(m.sub_lo)]
     [im.subs[static_cast<size_t>(m.sub_lo)].n_int + m.loc_lo] -= v;
    b[static_cast<size_t>(m.sub_hi)]
     [im.subs[static_cast<size_t>(m.sub_hi)].n_int + m.loc_hi] += v;
  }
  std::vector<Vector> x_a;
  Vector x_c;
  im.torn_solve(b, prep.f_c, x_a, x_c);

  FetidpSolution sol;
  sol.state.t = system.t;
  sol.state.u = Vector::Zero(2 * im.n_nodes);
  sol.state.z = Vector::Zero(2 * im.n_nodes);
  sol.state.p = Vector::Zero(im.n_triangles);
  const auto place = [&](int dof, double v) {
    if (dof < 2 * im.n_nodes) {
      sol.state.u[dof] = v;
    } else {
      sol.state.z[dof - 2 * im.n_nodes] = v;
    }
  };
  for (const auto& [dof, value] : system.boundary_values) place(dof, value);

  // Nodal dual values per subdomain, reconstructed from the fluctuations
  // and the shared edge means.
  std::vector<std::vector<double>> vals(static_cast<size_t>(im.n_sub));
  sol.beta = Vector(im.n_sub);
  for (int s = 0; s < im.n_sub; ++s) {
    const Impl::Sub& sb = im.subs[static_cast<size_t>(s)];
    const Vector& xs = x_a[static_cast<size_t>(s)];
    for (int j = 0; j < sb.n_int; ++j) {
      place(sb.interior[static_cast<size_t>(j)], xs[j]);
    }
    const double p0 = x_c[sb.coarse_slots.back()];
    for (int j = 0; j < sb.n_pres; ++j) {
      sol.state.p[sb.pressure[static_cast<size_t>(j)] - 4 * im.n_nodes] =
          xs[sb.n_int + sb.n_dual + j] + p0;
    }
    for (int j = 0; j < sb.n_prim; ++j) {
      place(sb.primal[static_cast<size_t>(j)],
            x_c[sb.coarse_slots[static_cast<size_t>(j)]]);
    }
    auto& vs = vals[static_cast<size_t>(s)];
    vs.resize(static_cast<size_t>(sb.n_dual_nodal));
    for (int q = 0; q < sb.n_dual_nodal; ++q) {
      if (sb.pos_group[static_cast<size_t>(q)] < 0) {
        vs[static_cast<size_t>(q)] =
            xs[sb.n_int + sb.old2new[static_cast<size_t>(q)]];
      }
    }
    for (const Impl::Group& g : sb.groups) {
      const double mean = x_c[g.coarse_slot];
      if (g.elim == 1) {
        double fluct_sum = 0.0;
        for (const int f : g.fluct) fluct_sum += xs[sb.n_int + f];
        vs[static_cast<size_t>(g.members[0])] = mean - fluct_sum;
        for (size_t mi = 1; mi < g.members.size(); ++mi) {
          vs[static_cast<size_t>(g.members[mi])] =
              mean + xs[sb.n_int + g.fluct[mi - 1]];
        }
        continue;
      }
      const double mom = x_c[g.coarse_slot + 1];
      double lead0 = 0.0;  // sum (j-1) f_j
      double lead1 = 0.0;  // sum j f_j
      for (size_t j = 2; j < g.members.size(); ++j) {
        const double f = xs[sb.n_int + g.fluct[j - 2]];
        lead0 += static_cast<double>(j - 1) * f;
        lead1 += static_cast<double>(j) * f;
      }
      vs[static_cast<size_t>(g.members[0])] = mean + g.wts[0] * mom + lead0;
      vs[static_cast<size_t>(g.members[1])] = mean + g.wts[1] * mom - lead1;
      for (size_t mi = 2; mi < g.members.size(); ++mi) {
        vs[static_cast<size_t>(g.members[mi])] =
            mean + g.wts[mi] * mom + xs[sb.n_int + g.fluct[mi - 2]];
      }
    }
    sol.beta[s] = xs[sb.na - 1];
  }
  double max_jump = 0.0;
  for (const Impl::NodalPair& np : im.nodal_pairs) {
    const double v_lo =
        vals[static_cast<size_t>(np.sub_lo)][static_cast<size_t>(np.pos_lo)];
    const double v_hi =
        vals[static_cast<size_t>(np.sub_hi)][static_cast<size_t>(np.pos_hi)];
    place(np.dof, 0.5 * (v_lo + v_hi));
    max_jump = std::max(max_jump, std::abs(v_lo - v_hi));
  }
  sol.gamma = im.gauge_row ? x_c[im.coarse_dim - 1] : 0.0;
  const double scale = std::max(sol.state.u.lpNorm<Eigen::Infinity>(),
                                sol.state.z.lpNorm<Eigen::Infinity>());
  sol.max_relative_jump = scale > 0.0 ? max_jump / scale : max_jump;
  if (sol.max_relative_jump > 1e-6) {
    throw std::runtime_error(
        "recover_solution: interface jump " +
        std::to_string(sol.max_relative_jump) +
        " exceeds tolerance; multipliers under-converged");
  }
  return sol;
}

}  // namespace biotdd
