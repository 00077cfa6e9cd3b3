// Mesh construction, box partitioning, and dof classification.

#include "biotdd/mesh.hpp"
#include "biotdd/dofmap.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <utility>

namespace biotdd {

bool Mesh::node_on_boundary(int node) const {
  const int i = node % (m + 1);
  const int j = node / (m + 1);
  return i == 0 || i == m || j == 0 || j == m;
}

bool Mesh::node_on_side(int node, BoundarySide side) const {
  const int i = node % (m + 1);
  const int j = node / (m + 1);
  switch (side) {
    case BoundarySide::left:
      return i == 0;
    case BoundarySide::right:
      return i == m;
    case BoundarySide::bottom:
      return j == 0;
    case BoundarySide::top:
      return j == m;
    case BoundarySide::none:
      return false;
  }
  return false;
}

Mesh build_structured_mesh(int m) {
  if (m < 1) throw std::invalid_argument("build_structured_mesh: m must be >= 1");
  Mesh mesh;
  mesh.m = m;
  mesh.nodes.reserve(static_cast<size_t>(m + 1) * (m + 1));
  for (int j = 0; j <= m; ++j) {
    for (int i = 0; i <= m; ++i) {
      mesh.nodes.push_back({static_cast<double>(i) / m,
                            static_cast<double>(j) / m});
    }
  }
  mesh.triangles.reserve(static_cast<size_t>(2) * m * m);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < m; ++i) {
      const int ll = mesh.node_id(i, j);
      const int lr = mesh.node_id(i + 1, j);
      const int ul = mesh.node_id(i, j + 1);
      const int ur = mesh.node_id(i + 1, j + 1);
      mesh.triangles.push_back({ll, lr, ur});  // lower triangle, CCW
      mesh.triangles.push_back({ll, ur, ul});  // upper triangle, CCW
    }
  }
  // Edge table keyed by the sorted endpoint pair; first adjacency becomes
  // tri_left so construction is deterministic.
  std::map<std::pair<int, int>, int> edge_of;
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    for (int k = 0; k < 3; ++k) {
      const int a = std::min(tri[k], tri[(k + 1) % 3]);
      const int b = std::max(tri[k], tri[(k + 1) % 3]);
      const auto it = edge_of.find({a, b});
      if (it == edge_of.end()) {
        edge_of.emplace(std::make_pair(a, b),
                        static_cast<int>(mesh.edges.size()));
        mesh.edges.push_back({a, b, t, -1});
      } else {
        mesh.edges[it->second].tri_right = t;
      }
    }
  }
  mesh.boundary_edge_tags.assign(mesh.edges.size(), BoundarySide::none);
  for (size_t e = 0; e < mesh.edges.size(); ++e) {
    if (mesh.edges[e].tri_right != -1) continue;
    const int a = mesh.edges[e].node_a;
    const int b = mesh.edges[e].node_b;
    for (const BoundarySide s : {BoundarySide::left, BoundarySide::right,
                                 BoundarySide::bottom, BoundarySide::top}) {
      if (mesh.node_on_side(a, s) && mesh.node_on_side(b, s)) {
        mesh.boundary_edge_tags[e] = s;
        break;
      }
    }
  }
  return mesh;
}

SubdomainPartition build_partition(const Mesh& mesh, int nd) {
  if (nd < 1) throw std::invalid_argument("build_partition: nd must be >= 1");
  if (mesh.m % nd != 0) {
    throw std::invalid_argument("build_partition: nd must divide m");
  }
  SubdomainPartition part;
  part.nd = nd;
  part.cells_per_side = mesh.m / nd;
  part.subdomain_of_triangle.resize(mesh.n_triangles());
  part.subdomain_triangles.resize(static_cast<size_t>(nd) * nd);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const int cell = t / 2;
    const int ci = cell % mesh.m;
    const int cj = cell / mesh.m;
    const int sub = (cj / part.cells_per_side) * nd + ci / part.cells_per_side;
    part.subdomain_of_triangle[t] = sub;
    part.subdomain_triangles[sub].push_back(t);
  }

  part.subdomains_of_node.resize(mesh.n_nodes());
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const int sub = part.subdomain_of_triangle[t];
    for (const int n : mesh.triangles[t]) {
      auto& subs = part.subdomains_of_node[n];
      if (std::find(subs.begin(), subs.end(), sub) == subs.end()) {
        subs.push_back(sub);
      }
    }
  }
  part.subdomain_nodes.resize(static_cast<size_t>(nd) * nd);
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    auto& subs = part.subdomains_of_node[n];
    std::sort(subs.begin(), subs.end());
    for (const int s : subs) part.subdomain_nodes[s].push_back(n);
  }

  part.node_on_interface.assign(mesh.n_nodes(), 0);
  part.node_is_corner.assign(mesh.n_nodes(), 0);
  for (int n = 0; n < mesh.n_nodes(); ++n) {
    const size_t k = part.subdomains_of_node[n].size();
    const bool on_boundary = mesh.node_on_boundary(n);
    if (k >= 2 && !on_boundary) part.node_on_interface[n] = 1;
    if (k >= 3 || (on_boundary && k >= 2)) part.node_is_corner[n] = 1;
  }
  return part;
}

std::vector<int> interior_edges_of_subdomain(const Mesh& mesh,
                                             const SubdomainPartition& partition,
                                             int i) {
  if (i < 0 || i >= partition.n_subdomains()) {
    throw std::invalid_argument("interior_edges_of_subdomain: bad index");
  }
  std::vector<int> out;
  for (size_t e = 0; e < mesh.edges.size(); ++e) {
    const Edge& ed = mesh.edges[e];
    if (ed.tri_right == -1) continue;
    if (partition.subdomain_of_triangle[ed.tri_left] == i &&
        partition.subdomain_of_triangle[ed.tri_right] == i) {
      out.push_back(static_cast<int>(e));
    }
  }
  return out;
}

namespace {

// A free z component at a boundary node survives when the node sits only on
// sides whose normal is the other component (or unmarked sides).
struct NodeBc {
  bool u_fixed = false;
  bool zx_fixed = false;
  bool zy_fixed = false;
};

NodeBc classify_node_bc(const Mesh& mesh, int node, const BcSpec& bc) {
  NodeBc r;
  const BoundarySide sides[4] = {BoundarySide::left, BoundarySide::right,
                                 BoundarySide::bottom, BoundarySide::top};
  for (int s = 0; s < 4; ++s) {
    if (!mesh.node_on_side(node, sides[s])) continue;
    if (bc.u_sides[static_cast<size_t>(s)]) r.u_fixed = true;
    if (bc.z_sides[static_cast<size_t>(s)]) {
      const bool vertical = s < 2;  // left/right carry normal e_x
      (vertical ? r.zx_fixed : r.zy_fixed) = true;
    }
  }
  return r;
}

}  // namespace

DofMap build_dofmap(const Mesh& mesh, const SubdomainPartition& partition,
                    const BcSpec& bc_spec) {
  DofMap dm;
  dm.n_nodes = mesh.n_nodes();
  dm.n_triangles = mesh.n_triangles();
  dm.n_subdomains = partition.n_subdomains();
  dm.n_dofs = 4 * dm.n_nodes + dm.n_triangles;
  dm.dof_class.assign(static_cast<size_t>(dm.n_dofs), DofClass::interior);
  dm.dof_subdomains.resize(static_cast<size_t>(dm.n_dofs));
  dm.per_subdomain.resize(static_cast<size_t>(dm.n_subdomains));

  for (int n = 0; n < dm.n_nodes; ++n) {
    const auto& subs = partition.subdomains_of_node[n];
    const NodeBc bc = classify_node_bc(mesh, n, bc_spec);
    const bool corner = partition.node_is_corner[n] != 0;
    const bool iface = partition.node_on_interface[n] != 0;

    const auto classify = [&](int dof, bool fixed) {
      if (fixed) {
        dm.dof_class[dof] = DofClass::dirichlet;
        return;
      }
      if (corner) {
        dm.dof_class[dof] = DofClass::primal;
      } else if (iface) {
        dm.dof_class[dof] = DofClass::dual;
      } else {
        dm.dof_class[dof] = DofClass::interior;
      }
      dm.dof_subdomains[dof] = subs;
    };
    classify(dm.ux(n), bc.u_fixed);
    classify(dm.uy(n), bc.u_fixed);
    classify(dm.zx(n), bc.zx_fixed);
    classify(dm.zy(n), bc.zy_fixed);
  }
  for (int t = 0; t < dm.n_triangles; ++t) {
    const int dof = dm.p(t);
    dm.dof_class[dof] = DofClass::pressure_interior;
    dm.dof_subdomains[dof] = {partition.subdomain_of_triangle[t]};
  }

  // Per-subdomain views in ascending global order; dof ids ascend with the
  // node id inside each field block, so one pass per field suffices.
  for (int dof = 0; dof < dm.n_dofs; ++dof) {
    switch (dm.dof_class[dof]) {
      case DofClass::interior:
        dm.per_subdomain[dm.dof_subdomains[dof][0]].interior.push_back(dof);
        break;
      case DofClass::dual:
        for (const int s : dm.dof_subdomains[dof]) {
          dm.per_subdomain[s].dual.push_back(dof);
        }
        break;
      case DofClass::primal:
        dm.primal_dofs.push_back(dof);
        for (const int s : dm.dof_subdomains[dof]) {
          dm.per_subdomain[s].primal.push_back(dof);
        }
        break;
      case DofClass::pressure_interior:
        dm.per_subdomain[dm.dof_subdomains[dof][0]].pressure.push_back(dof);
        break;
      case DofClass::dirichlet:
        break;
    }
  }
  return dm;
}

}  // namespace biotdd
