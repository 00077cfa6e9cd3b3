// Structured triangulation of the unit square and its box decomposition
// into subdomains. Cell (i, j) covers [i/m,(i+1)/m] x [j/m,(j+1)/m] and is
// split by the diagonal from its lower-left to its upper-right corner; both
// triangles are counter-clockwise.

#pragma once

#include <array>
#include <vector>

namespace biotdd {

struct Node {
  double x = 0.0;
  double y = 0.0;
};

enum class BoundarySide : unsigned char { none, left, right, bottom, top };

struct Edge {
  int node_a = -1;  // node_a < node_b
  int node_b = -1;
  int tri_left = -1;   // first adjacent triangle in construction order
  int tri_right = -1;  // second adjacent triangle, -1 on the boundary
};

struct Mesh {
  int m = 0;  // cells per side
  std::vector<Node> nodes;                     // id = j*(m+1) + i
  std::vector<std::array<int, 3>> triangles;   // CCW vertex ids
  std::vector<Edge> edges;
  std::vector<BoundarySide> boundary_edge_tags;  // parallel to edges

  [[nodiscard]] int n_nodes() const { return static_cast<int>(nodes.size()); }
  [[nodiscard]] int n_triangles() const {
    return static_cast<int>(triangles.size());
  }
  [[nodiscard]] double h() const { return 1.0 / m; }
  [[nodiscard]] double triangle_area() const { return 0.5 / (m * m); }
  [[nodiscard]] int node_id(int i, int j) const { return j * (m + 1) + i; }
  [[nodiscard]] bool node_on_boundary(int node) const;
  [[nodiscard]] bool node_on_side(int node, BoundarySide side) const;
};

// m >= 1; throws std::invalid_argument otherwise. Deterministic: equal m
// gives bit-identical meshes.
Mesh build_structured_mesh(int m);

// nd x nd box partition. Subdomain (si, sj) owns the cells with
// si*(m/nd) <= i < (si+1)*(m/nd) and likewise in j; id = sj*nd + si.
struct SubdomainPartition {
  int nd = 0;
  int cells_per_side = 0;  // m / nd
  std::vector<int> subdomain_of_triangle;
  std::vector<std::vector<int>> subdomain_triangles;  // ascending
  std::vector<std::vector<int>> subdomain_nodes;      // ascending
  std::vector<std::vector<int>> subdomains_of_node;   // ascending
  std::vector<char> node_on_interface;  // touches >= 2 subdomains, not on boundary
  std::vector<char> node_is_corner;     // cross point (see build_partition)

  [[nodiscard]] int n_subdomains() const { return nd * nd; }
};

// Requires nd >= 1 and nd | m. Corner nodes are the interior cross points
// (>= 3 touching subdomains) plus the boundary points where an interface
// meets the outer boundary (>= 2 touching subdomains on the boundary).
SubdomainPartition build_partition(const Mesh& mesh, int nd);

// Ids (into mesh.edges) of the edges whose two adjacent triangles both lie
// in subdomain i; boundary and interface edges never qualify.
std::vector<int> interior_edges_of_subdomain(const Mesh& mesh,
                                             const SubdomainPartition& partition,
                                             int i);

}  // namespace biotdd
