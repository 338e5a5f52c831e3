#include "divflow/vtk.hpp"

#include "divflow/quadrature.hpp"

#include <fstream>

namespace divflow {

void write_vtk(const CoupledState& fields, const std::string& path,
               const ElementIndicators* indicators) {
  const Mesh& m = *fields.u.space->mesh;
  std::ofstream os(path);
  if (!os) throw Error("write_vtk: cannot open '" + path + "'");
  os.precision(12);

  os << "# vtk DataFile Version 3.0\n";
  os << "divflow snapshot\n";
  os << "ASCII\nDATASET UNSTRUCTURED_GRID\n";
  os << "POINTS " << m.num_vertices() << " double\n";
  for (const auto& v : m.vertices) os << v.x() << " " << v.y() << " 0\n";
  os << "CELLS " << m.num_triangles() << " " << 4 * m.num_triangles() << "\n";
  for (const auto& t : m.triangles)
    os << "3 " << t.v[0] << " " << t.v[1] << " " << t.v[2] << "\n";
  os << "CELL_TYPES " << m.num_triangles() << "\n";
  for (int t = 0; t < m.num_triangles(); ++t) os << "5\n";

  // vertex velocity: average the (tangentially discontinuous) field over the
  // cells meeting at the vertex
  std::vector<Vec2> uv(m.num_vertices(), Vec2::Zero());
  std::vector<int> count(m.num_vertices(), 0);
  const std::array<Vec2, 3> corners = {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};
  for (int t = 0; t < m.num_triangles(); ++t) {
    for (int i = 0; i < 3; ++i) {
      uv[m.triangles[t].v[i]] += eval_velocity(fields.u, t, corners[i]).value;
      count[m.triangles[t].v[i]] += 1;
    }
  }
  os << "POINT_DATA " << m.num_vertices() << "\n";
  os << "VECTORS u double\n";
  for (int v = 0; v < m.num_vertices(); ++v) {
    const Vec2 val = uv[v] / std::max(1, count[v]);
    os << val.x() << " " << val.y() << " 0\n";
  }
  auto write_vertex_scalar = [&](const DiscreteField& f, const char* name) {
    os << "SCALARS " << name << " double 1\nLOOKUP_TABLE default\n";
    for (int v = 0; v < m.num_vertices(); ++v) os << f.coeffs[v] << "\n";
  };
  write_vertex_scalar(fields.s, "s");
  write_vertex_scalar(fields.c, "c");

  os << "CELL_DATA " << m.num_triangles() << "\n";
  os << "SCALARS p double 1\nLOOKUP_TABLE default\n";
  const auto& rule = quadrature_rule(QuadEntity::Triangle, 4);
  for (int t = 0; t < m.num_triangles(); ++t) {
    double mean = 0.0, area = 0.0;
    const double J = m.jacobian(t).determinant();
    for (int q = 0; q < rule.size(); ++q) {
      mean += J * rule.weights[q] * eval_scalar(fields.p, t, rule.points[q]).value;
      area += J * rule.weights[q];
    }
    os << mean / area << "\n";
  }
  if (indicators) {
    os << "SCALARS indicator double 1\nLOOKUP_TABLE default\n";
    for (int t = 0; t < m.num_triangles(); ++t)
      os << std::sqrt(indicators->element_total2(t)) << "\n";
  }
  if (!os) throw Error("write_vtk: write failure on '" + path + "'");
}

} // namespace divflow
