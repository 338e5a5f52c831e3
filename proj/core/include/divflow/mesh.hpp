#pragma once

#include "divflow/types.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <set>
#include <vector>

namespace divflow {

/// Boundary tags assigned by the mesh builders.
enum BoundaryTag : int {
  kInteriorEdge = 0,
  kBottom = 1,
  kTop = 2,
  kLeft = 3,
  kRight = 4,
  kReentrant = 5,
};

struct MeshTriangle {
  std::array<int, 3> v;  // vertex indices, counter-clockwise
  int peak = 0;          // newest vertex slot; refinement edge is opposite
  int parent = -1;       // triangle index in the mesh this one was refined from
  int tag = 0;
  double diameter = 0.0; // h_K, longest edge
};

struct MeshEdge {
  std::array<int, 2> v;    // endpoint vertex ids, v[0] < v[1]
  std::array<int, 2> tri;  // adjacent triangles, tri[0] < tri[1]; tri[1] = -1 on boundary
  int boundary_tag = kInteriorEdge;
  double length = 0.0;     // h_e

  bool on_boundary() const { return tri[1] < 0; }
};

struct MarkSet {
  std::set<int> marked;
};

struct PointLocation {
  int tri = -1;
  std::array<double, 3> bary{};
};

/// Conforming 2D triangulation. Immutable after construction; refinement
/// returns a new mesh that records its provenance through `mesh_id`/`parent_mesh_id`
/// and per-triangle `parent` indices.
class Mesh {
public:
  std::vector<Vec2> vertices;
  std::vector<MeshTriangle> triangles;
  std::vector<MeshEdge> edges;
  // edge index opposite local vertex i (local edge i joins v[(i+1)%3], v[(i+2)%3])
  std::vector<std::array<int, 3>> tri_edges;

  std::uint64_t mesh_id = 0;
  std::uint64_t parent_mesh_id = 0;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_triangles() const { return static_cast<int>(triangles.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  Vec2 vertex_of(int t, int local) const { return vertices[triangles[t].v[local]]; }

  /// Affine map column matrix B = [v1-v0, v2-v0]; det(B) = 2*area > 0.
  Mat2 jacobian(int t) const;
  double area(int t) const;
  double total_area() const;

  Vec2 map_to_physical(int t, const Vec2& ref) const;
  /// Barycentric coordinates of physical point x w.r.t. triangle t.
  std::array<double, 3> barycentric(int t, const Vec2& x) const;

  /// Local edge index (0..2) of global edge e within triangle t.
  int local_edge_index(int t, int e) const;
  /// True if local edge traversal (v[(i+1)%3] -> v[(i+2)%3]) runs from the
  /// lower to the higher global vertex id.
  bool local_edge_matches_global(int t, int i) const;
  /// Unit normal of edge e following the global convention: outward from
  /// tri[0] (the lower-indexed neighbor); outward from the domain on boundary.
  Vec2 edge_normal(int e) const;
  Vec2 edge_midpoint(int e) const {
    return 0.5 * (vertices[edges[e].v[0]] + vertices[edges[e].v[1]]);
  }

  double min_angle() const;

  /// Containing triangle and barycentric coordinates; ties (points on shared
  /// edges/vertices) resolve to the lowest triangle index. Throws if the point
  /// lies outside the domain beyond the barycentric tolerance.
  PointLocation locate_point(const Vec2& x, double tol = 1e-12) const;

  void finalize(); // builds edges, adjacency, diameters, search grid

private:
  // uniform background grid for point location
  struct LocateGrid {
    int nx = 0, ny = 0;
    Vec2 lo{0, 0}, hi{0, 0};
    std::vector<std::vector<int>> bins;
  };
  LocateGrid grid_;
  void build_grid();
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Structured triangulation of (0,x_extent) x (0,y_extent) with nx-by-ny cells,
/// each split along a diagonal (alternating orientation). Boundary edges are
/// tagged by side.
MeshPtr build_rectangle_mesh(double x_extent, double y_extent, int nx, int ny);

/// L-shaped domain (-1,1)^2 minus the closed quadrant [0,1]^2, built from
/// three unit squares each subdivided into n-by-n diagonal-split cells. The
/// reentrant corner (0,0) is a vertex at every level; the two edges of the
/// removed quadrant are tagged kReentrant.
MeshPtr build_lshape_mesh(int n);

/// Red refinement: every triangle split into 4 similar children.
MeshPtr refine_uniform(const Mesh& m);

/// Newest-vertex bisection of all marked triangles plus the recursive
/// conforming closure.
MeshPtr refine_marked(const Mesh& m, const MarkSet& marks);

/// Plain-text dump: "ndim=2 nv=<n> nt=<m>" header, "x y" vertex lines,
/// "i j k tag" triangle lines.
void dump_mesh(const Mesh& m, std::ostream& os);
MeshPtr load_mesh(std::istream& is);

} // namespace divflow
