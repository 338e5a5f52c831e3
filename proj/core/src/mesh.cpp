#include "divflow/mesh.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace divflow {
namespace {

std::atomic<std::uint64_t> g_mesh_id_counter{1};

std::uint64_t pair_key(int a, int b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

using TagMap = std::unordered_map<std::uint64_t, int>;

double signed_area(const Vec2& a, const Vec2& b, const Vec2& c) {
  return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x()));
}

void finalize_with_tags(Mesh& m, const TagMap& tags) {
  // orient positively; peak follows the vertex swap
  for (auto& t : m.triangles) {
    const double sa =
        signed_area(m.vertices[t.v[0]], m.vertices[t.v[1]], m.vertices[t.v[2]]);
    require(std::abs(sa) > 0.0, "mesh: degenerate triangle");
    if (sa < 0.0) {
      std::swap(t.v[1], t.v[2]);
      if (t.peak == 1)
        t.peak = 2;
      else if (t.peak == 2)
        t.peak = 1;
    }
  }

  m.edges.clear();
  m.tri_edges.assign(m.triangles.size(), {-1, -1, -1});
  std::unordered_map<std::uint64_t, int> edge_of;
  edge_of.reserve(3 * m.triangles.size());
  for (int t = 0; t < m.num_triangles(); ++t) {
    for (int i = 0; i < 3; ++i) {
      int a = m.triangles[t].v[(i + 1) % 3];
      int b = m.triangles[t].v[(i + 2) % 3];
      const std::uint64_t key = pair_key(a, b);
      auto it = edge_of.find(key);
      if (it == edge_of.end()) {
        MeshEdge e;
        e.v = {std::min(a, b), std::max(a, b)};
        e.tri = {t, -1};
        e.length = (m.vertices[a] - m.vertices[b]).norm();
        edge_of.emplace(key, m.num_edges());
        m.tri_edges[t][i] = m.num_edges();
        m.edges.push_back(e);
      } else {
        MeshEdge& e = m.edges[it->second];
        require(e.tri[1] < 0, "mesh: edge with more than two neighbors");
        e.tri[1] = t;
        if (e.tri[0] > e.tri[1]) std::swap(e.tri[0], e.tri[1]);
        m.tri_edges[t][i] = it->second;
      }
    }
  }
  for (auto& e : m.edges) {
    if (e.on_boundary()) {
      auto it = tags.find(pair_key(e.v[0], e.v[1]));
      e.boundary_tag = it == tags.end() ? kInteriorEdge : it->second;
    } else {
      e.boundary_tag = kInteriorEdge;
    }
  }
  for (auto& t : m.triangles) {
    double d = 0.0;
    for (int i = 0; i < 3; ++i)
      d = std::max(d, (m.vertices[t.v[(i + 1) % 3]] - m.vertices[t.v[(i + 2) % 3]]).norm());
    t.diameter = d;
  }
}

MeshPtr seal(std::shared_ptr<Mesh> m, const TagMap& tags, std::uint64_t parent_id) {
  finalize_with_tags(*m, tags);
  m->mesh_id = g_mesh_id_counter.fetch_add(1);
  m->parent_mesh_id = parent_id;
  m->finalize();
  return m;
}

// refinement edge = longest edge; peak = opposite vertex slot
void assign_longest_edge_peaks(Mesh& m) {
  for (auto& t : m.triangles) {
    double best = -1.0;
    int peak = 0;
    for (int i = 0; i < 3; ++i) {
      const double len =
          (m.vertices[t.v[(i + 1) % 3]] - m.vertices[t.v[(i + 2) % 3]]).norm();
      if (len > best + 1e-14 * (1.0 + best)) {
        best = len;
        peak = i;
      }
    }
    t.peak = peak;
  }
}

} // namespace

Mat2 Mesh::jacobian(int t) const {
  const Vec2 v0 = vertex_of(t, 0), v1 = vertex_of(t, 1), v2 = vertex_of(t, 2);
  Mat2 B;
  B.col(0) = v1 - v0;
  B.col(1) = v2 - v0;
  return B;
}

double Mesh::area(int t) const {
  return signed_area(vertex_of(t, 0), vertex_of(t, 1), vertex_of(t, 2));
}

double Mesh::total_area() const {
  double a = 0.0;
  for (int t = 0; t < num_triangles(); ++t) a += area(t);
  return a;
}

Vec2 Mesh::map_to_physical(int t, const Vec2& ref) const {
  return vertex_of(t, 0) + jacobian(t) * ref;
}

std::array<double, 3> Mesh::barycentric(int t, const Vec2& x) const {
  const Vec2 rel = x - vertex_of(t, 0);
  const Vec2 ref = jacobian(t).inverse() * rel;
  return {1.0 - ref.x() - ref.y(), ref.x(), ref.y()};
}

int Mesh::local_edge_index(int t, int e) const {
  for (int i = 0; i < 3; ++i)
    if (tri_edges[t][i] == e) return i;
  throw Error("mesh: edge not adjacent to triangle");
}

bool Mesh::local_edge_matches_global(int t, int i) const {
  const int a = triangles[t].v[(i + 1) % 3];
  const int b = triangles[t].v[(i + 2) % 3];
  return a < b;
}

Vec2 Mesh::edge_normal(int e) const {
  const MeshEdge& ed = edges[e];
  const int t = ed.tri[0];
  const int i = local_edge_index(t, e);
  const Vec2 a = vertices[triangles[t].v[(i + 1) % 3]];
  const Vec2 b = vertices[triangles[t].v[(i + 2) % 3]];
  Vec2 tang = b - a;
  Vec2 n(tang.y(), -tang.x()); // outward for a CCW triangle
  return n.normalized();
}

double Mesh::min_angle() const {
  double best = std::numeric_limits<double>::max();
  for (const auto& t : triangles) {
    for (int i = 0; i < 3; ++i) {
      const Vec2 a = vertices[t.v[i]];
      const Vec2 b = vertices[t.v[(i + 1) % 3]];
      const Vec2 c = vertices[t.v[(i + 2) % 3]];
      const Vec2 u = (b - a).normalized(), w = (c - a).normalized();
      best = std::min(best, std::acos(std::clamp(u.dot(w), -1.0, 1.0)));
    }
  }
  return best;
}

void Mesh::finalize() { build_grid(); }

void Mesh::build_grid() {
  grid_ = LocateGrid{};
  if (triangles.empty()) return;
  Vec2 lo = vertices[0], hi = vertices[0];
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double pad = 1e-12 * (1.0 + (hi - lo).norm());
  grid_.lo = lo - Vec2(pad, pad);
  grid_.hi = hi + Vec2(pad, pad);
  const int n = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(num_triangles()))));
  grid_.nx = n;
  grid_.ny = n;
  grid_.bins.assign(static_cast<size_t>(n) * n, {});
  const Vec2 span = grid_.hi - grid_.lo;
  for (int t = 0; t < num_triangles(); ++t) {
    Vec2 tlo = vertex_of(t, 0), thi = tlo;
    for (int i = 1; i < 3; ++i) {
      tlo = tlo.cwiseMin(vertex_of(t, i));
      thi = thi.cwiseMax(vertex_of(t, i));
    }
    tlo -= Vec2(pad, pad);
    thi += Vec2(pad, pad);
    const int i0 = std::clamp(static_cast<int>((tlo.x() - grid_.lo.x()) / span.x() * n), 0, n - 1);
    const int i1 = std::clamp(static_cast<int>((thi.x() - grid_.lo.x()) / span.x() * n), 0, n - 1);
    const int j0 = std::clamp(static_cast<int>((tlo.y() - grid_.lo.y()) / span.y() * n), 0, n - 1);
    const int j1 = std::clamp(static_cast<int>((thi.y() - grid_.lo.y()) / span.y() * n), 0, n - 1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i)
        grid_.bins[static_cast<size_t>(j) * n + i].push_back(t);
  }
  // bins hold ascending indices by construction
}

PointLocation Mesh::locate_point(const Vec2& x, double tol) const {
  auto try_tri = [&](int t, PointLocation& out) {
    const auto b = barycentric(t, x);
    if (b[0] >= -tol && b[1] >= -tol && b[2] >= -tol) {
      out.tri = t;
      out.bary = b;
      return true;
    }
    return false;
  };
  PointLocation loc;
  if (grid_.nx > 0) {
    const Vec2 span = grid_.hi - grid_.lo;
    const int i = std::clamp(
        static_cast<int>((x.x() - grid_.lo.x()) / span.x() * grid_.nx), 0, grid_.nx - 1);
    const int j = std::clamp(
        static_cast<int>((x.y() - grid_.lo.y()) / span.y() * grid_.ny), 0, grid_.ny - 1);
    for (int t : grid_.bins[static_cast<size_t>(j) * grid_.nx + i])
      if (try_tri(t, loc)) return loc;
  }
  // fallback: exhaustive ascending scan
  for (int t = 0; t < num_triangles(); ++t)
    if (try_tri(t, loc)) return loc;
  std::ostringstream os;
  os << "locate_point: (" << x.x() << ", " << x.y() << ") outside domain";
  throw Error(os.str());
}

MeshPtr build_rectangle_mesh(double x_extent, double y_extent, int nx, int ny) {
  require(x_extent > 0.0 && y_extent > 0.0, "build_rectangle_mesh: extents must be positive");
  require(nx >= 1 && ny >= 1, "build_rectangle_mesh: counts must be >= 1");
  auto m = std::make_shared<Mesh>();
  const auto idx = [nx](int i, int j) { return j * (nx + 1) + i; };
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      m->vertices.emplace_back(x_extent * i / nx, y_extent * j / ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int a = idx(i, j), b = idx(i + 1, j), c = idx(i + 1, j + 1), d = idx(i, j + 1);
      MeshTriangle t1, t2;
      if ((i + j) % 2 == 0) {
        t1.v = {a, b, c};
        t2.v = {a, c, d};
      } else {
        t1.v = {a, b, d};
        t2.v = {b, c, d};
      }
      m->triangles.push_back(t1);
      m->triangles.push_back(t2);
    }
  }
  TagMap tags;
  for (int i = 0; i < nx; ++i) {
    tags[pair_key(idx(i, 0), idx(i + 1, 0))] = kBottom;
    tags[pair_key(idx(i, ny), idx(i + 1, ny))] = kTop;
  }
  for (int j = 0; j < ny; ++j) {
    tags[pair_key(idx(0, j), idx(0, j + 1))] = kLeft;
    tags[pair_key(idx(nx, j), idx(nx, j + 1))] = kRight;
  }
  assign_longest_edge_peaks(*m);
  return seal(std::move(m), tags, 0);
}

MeshPtr build_lshape_mesh(int n) {
  require(n >= 1, "build_lshape_mesh: n must be >= 1");
  auto m = std::make_shared<Mesh>();
  const int g = 2 * n; // cells per side of the bounding square (-1,1)^2
  std::vector<int> vid(static_cast<size_t>(g + 1) * (g + 1), -1);
  const auto gidx = [g](int i, int j) { return static_cast<size_t>(j) * (g + 1) + i; };
  const auto coord = [n](int i) { return static_cast<double>(i - n) / n; };
  const auto removed = [n](int ci, int cj) { return ci >= n && cj >= n; };
  const auto vertex = [&](int i, int j) {
    int& id = vid[gidx(i, j)];
    if (id < 0) {
      id = m->num_vertices();
      m->vertices.emplace_back(coord(i), coord(j));
    }
    return id;
  };
  TagMap tags;
  for (int cj = 0; cj < g; ++cj) {
    for (int ci = 0; ci < g; ++ci) {
      if (removed(ci, cj)) continue;
      const int a = vertex(ci, cj), b = vertex(ci + 1, cj);
      const int c = vertex(ci + 1, cj + 1), d = vertex(ci, cj + 1);
      MeshTriangle t1, t2;
      if ((ci + cj) % 2 == 0) {
        t1.v = {a, b, c};
        t2.v = {a, c, d};
      } else {
        t1.v = {a, b, d};
        t2.v = {b, c, d};
      }
      m->triangles.push_back(t1);
      m->triangles.push_back(t2);
      if (cj == 0) tags[pair_key(a, b)] = kBottom;
      if (cj == g - 1) tags[pair_key(d, c)] = kTop;
      if (ci == 0) tags[pair_key(a, d)] = kLeft;
      if (ci == g - 1) tags[pair_key(b, c)] = kRight;
      if (ci == n - 1 && cj >= n) tags[pair_key(b, c)] = kReentrant;  // on x = 0
      if (cj == n - 1 && ci >= n) tags[pair_key(d, c)] = kReentrant;  // on y = 0
    }
  }
  assign_longest_edge_peaks(*m);
  return seal(std::move(m), tags, 0);
}

MeshPtr refine_uniform(const Mesh& m) {
  auto out = std::make_shared<Mesh>();
  out->vertices = m.vertices;
  const int nv = m.num_vertices();
  for (int e = 0; e < m.num_edges(); ++e)
    out->vertices.push_back(m.edge_midpoint(e));
  TagMap tags;
  for (int e = 0; e < m.num_edges(); ++e) {
    const MeshEdge& ed = m.edges[e];
    if (!ed.on_boundary()) continue;
    tags[pair_key(ed.v[0], nv + e)] = ed.boundary_tag;
    tags[pair_key(nv + e, ed.v[1])] = ed.boundary_tag;
  }
  for (int t = 0; t < m.num_triangles(); ++t) {
    const auto& tri = m.triangles[t];
    const int m0 = nv + m.tri_edges[t][0];
    const int m1 = nv + m.tri_edges[t][1];
    const int m2 = nv + m.tri_edges[t][2];
    const std::array<std::array<int, 3>, 4> children = {{
        {tri.v[0], m2, m1}, {m2, tri.v[1], m0}, {m1, m0, tri.v[2]}, {m0, m1, m2}}};
    for (const auto& cv : children) {
      MeshTriangle c;
      c.v = cv;
      c.parent = t;
      c.tag = tri.tag;
      out->triangles.push_back(c);
    }
  }
  assign_longest_edge_peaks(*out);
  return seal(std::move(out), tags, m.mesh_id);
}

namespace {

struct WorkTri {
  std::array<int, 3> v;
  int peak;
  int root;
  int tag;
  bool alive = true;
};

class Bisector {
public:
  explicit Bisector(const Mesh& m) : mesh_(m), verts_(m.vertices) {
    work_.reserve(2 * m.triangles.size());
    for (int t = 0; t < m.num_triangles(); ++t) {
      const auto& tri = m.triangles[t];
      work_.push_back(WorkTri{tri.v, tri.peak, t, tri.tag, true});
      for (int i = 0; i < 3; ++i)
        add_adj(tri.v[(i + 1) % 3], tri.v[(i + 2) % 3], t);
    }
    for (const auto& e : m.edges)
      if (e.on_boundary()) tags_[pair_key(e.v[0], e.v[1])] = e.boundary_tag;
  }

  void refine(int t) {
    std::vector<int> stack{t};
    std::size_t guard = 0;
    while (!stack.empty()) {
      require(++guard < 100u * work_.size() + 1000u, "refine_marked: closure did not terminate");
      const int cur = stack.back();
      if (!work_[cur].alive) {
        stack.pop_back();
        continue;
      }
      const auto [a, b] = ref_edge(cur);
      const int nb = neighbor_across(cur, a, b);
      if (nb >= 0) {
        const auto [na, nbv] = ref_edge(nb);
        if (pair_key(na, nbv) != pair_key(a, b)) {
          stack.push_back(nb); // make the neighbor compatible first
          continue;
        }
      }
      const int mid = midpoint(a, b);
      split(cur, mid);
      if (nb >= 0) split(nb, mid);
      stack.pop_back();
    }
  }

  MeshPtr build() {
    auto out = std::make_shared<Mesh>();
    out->vertices = std::move(verts_);
    for (const auto& w : work_) {
      if (!w.alive) continue;
      MeshTriangle t;
      t.v = w.v;
      t.peak = w.peak;
      t.parent = w.root;
      t.tag = w.tag;
      out->triangles.push_back(t);
    }
    return seal(std::move(out), tags_, mesh_.mesh_id);
  }

  bool alive(int t) const { return work_[t].alive; }

private:
  void add_adj(int a, int b, int t) { adj_[pair_key(a, b)].push_back(t); }
  void remove_adj(int a, int b, int t) {
    auto& lst = adj_[pair_key(a, b)];
    lst.erase(std::remove(lst.begin(), lst.end(), t), lst.end());
  }

  std::pair<int, int> ref_edge(int t) const {
    const auto& w = work_[t];
    return {w.v[(w.peak + 1) % 3], w.v[(w.peak + 2) % 3]};
  }

  int neighbor_across(int t, int a, int b) {
    for (int other : adj_[pair_key(a, b)])
      if (other != t && work_[other].alive) return other;
    return -1;
  }

  int midpoint(int a, int b) {
    const std::uint64_t key = pair_key(a, b);
    auto it = mids_.find(key);
    if (it != mids_.end()) return it->second;
    const int id = static_cast<int>(verts_.size());
    verts_.push_back(0.5 * (verts_[a] + verts_[b]));
    mids_.emplace(key, id);
    auto tag_it = tags_.find(key);
    if (tag_it != tags_.end()) {
      const int tag = tag_it->second;
      tags_.erase(tag_it);
      tags_[pair_key(a, id)] = tag;
      tags_[pair_key(id, b)] = tag;
    }
    return id;
  }

  void split(int t, int mid) {
    WorkTri& w = work_[t];
    const int p = w.v[w.peak];
    const int a = w.v[(w.peak + 1) % 3];
    const int b = w.v[(w.peak + 2) % 3];
    w.alive = false;
    remove_adj(p, a, t);
    remove_adj(a, b, t);
    remove_adj(b, p, t);
    // children keep CCW orientation; the new vertex is each child's peak
    const int c1 = static_cast<int>(work_.size());
    work_.push_back(WorkTri{{p, a, mid}, 2, w.root, w.tag, true});
    const int c2 = static_cast<int>(work_.size());
    work_.push_back(WorkTri{{p, mid, b}, 1, w.root, w.tag, true});
    add_adj(p, a, c1);
    add_adj(a, mid, c1);
    add_adj(mid, p, c1);
    add_adj(p, mid, c2);
    add_adj(mid, b, c2);
    add_adj(b, p, c2);
  }

  const Mesh& mesh_;
  std::vector<Vec2> verts_;
  std::vector<WorkTri> work_;
  std::unordered_map<std::uint64_t, std::vector<int>> adj_;
  std::unordered_map<std::uint64_t, int> mids_;
  TagMap tags_;
};

} // namespace

MeshPtr refine_marked(const Mesh& m, const MarkSet& marks) {
  for (int t : marks.marked)
    require(t >= 0 && t < m.num_triangles(), "refine_marked: mark index out of range");
  if (marks.marked.empty()) {
    auto out = std::make_shared<Mesh>(m);
    for (int t = 0; t < out->num_triangles(); ++t) out->triangles[t].parent = t;
    out->mesh_id = g_mesh_id_counter.fetch_add(1);
    out->parent_mesh_id = m.mesh_id;
    return out;
  }
  Bisector bis(m);
  for (int t : marks.marked)
    if (bis.alive(t)) bis.refine(t);
  return bis.build();
}

void dump_mesh(const Mesh& m, std::ostream& os) {
  os << "ndim=2 nv=" << m.num_vertices() << " nt=" << m.num_triangles() << "\n";
  os.precision(17);
  for (const auto& v : m.vertices) os << v.x() << " " << v.y() << "\n";
  for (const auto& t : m.triangles)
    os << t.v[0] << " " << t.v[1] << " " << t.v[2] << " " << t.tag << "\n";
}

MeshPtr load_mesh(std::istream& is) {
  std::string header;
  std::getline(is, header);
  int nv = -1, nt = -1;
  if (std::sscanf(header.c_str(), "ndim=2 nv=%d nt=%d", &nv, &nt) != 2)
    throw Error("load_mesh: bad header '" + header + "'");
  require(nv >= 3 && nt >= 1, "load_mesh: bad counts");
  auto m = std::make_shared<Mesh>();
  m->vertices.resize(nv);
  for (int i = 0; i < nv; ++i) {
    double x, y;
    if (!(is >> x >> y)) throw Error("load_mesh: truncated vertex list");
    m->vertices[i] = Vec2(x, y);
  }
  m->triangles.resize(nt);
  for (int t = 0; t < nt; ++t) {
    auto& tri = m->triangles[t];
    if (!(is >> tri.v[0] >> tri.v[1] >> tri.v[2] >> tri.tag))
      throw Error("load_mesh: truncated triangle list");
    for (int k = 0; k < 3; ++k)
      require(tri.v[k] >= 0 && tri.v[k] < nv, "load_mesh: vertex index out of range");
  }
  assign_longest_edge_peaks(*m);
  return seal(std::move(m), TagMap{}, 0);
}

} // namespace divflow
