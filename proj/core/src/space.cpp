#include "divflow/space.hpp"

#include "divflow/quadrature.hpp"

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <tuple>

namespace divflow {

double legendre(int m, double x) {
  switch (m) {
    case 0: return 1.0;
    case 1: return x;
    case 2: return 0.5 * (3.0 * x * x - 1.0);
    case 3: return 0.5 * (5.0 * x * x * x - 3.0 * x);
    case 4: return 0.125 * (35.0 * x * x * x * x - 30.0 * x * x + 3.0);
    default: throw Error("legendre: order not supported");
  }
}

namespace {

const std::array<Vec2, 3> kRefVerts = {Vec2(0, 0), Vec2(1, 0), Vec2(0, 1)};

struct Monomial { int ax; int ay; };

double mono_val(const Monomial& m, const Vec2& p) {
  return std::pow(p.x(), m.ax) * std::pow(p.y(), m.ay);
}
Vec2 mono_grad(const Monomial& m, const Vec2& p) {
  const double gx = m.ax == 0 ? 0.0 : m.ax * std::pow(p.x(), m.ax - 1) * std::pow(p.y(), m.ay);
  const double gy = m.ay == 0 ? 0.0 : m.ay * std::pow(p.x(), m.ax) * std::pow(p.y(), m.ay - 1);
  return {gx, gy};
}
Mat2 mono_hess(const Monomial& m, const Vec2& p) {
  Mat2 h = Mat2::Zero();
  if (m.ax >= 2) h(0, 0) = m.ax * (m.ax - 1) * std::pow(p.x(), m.ax - 2) * std::pow(p.y(), m.ay);
  if (m.ay >= 2) h(1, 1) = m.ay * (m.ay - 1) * std::pow(p.x(), m.ax) * std::pow(p.y(), m.ay - 2);
  if (m.ax >= 1 && m.ay >= 1)
    h(0, 1) = h(1, 0) = m.ax * m.ay * std::pow(p.x(), m.ax - 1) * std::pow(p.y(), m.ay - 1);
  return h;
}

std::vector<Monomial> scalar_monomials(int degree) {
  std::vector<Monomial> out;
  for (int d = 0; d <= degree; ++d)
    for (int ax = d; ax >= 0; --ax) out.push_back({ax, d - ax});
  return out;
}

/// Reference BDM_k element: dual basis of the edge normal moments (Legendre
/// weights, arc-length measure) plus, for k = 2, interior moments against
/// {(1,0),(0,1),(-y,x)}. Coefficients of the dual basis in the vector-monomial
/// basis are computed once per degree.
struct BdmReference {
  int k;
  int ndof;
  std::vector<Monomial> monos;     // shared by both components
  DenseMatrix coeff;               // ndof x (2*nmono): basis_i = sum_j coeff(i,j) modal_j

  explicit BdmReference(int degree) : k(degree) {
    require(k == 1 || k == 2, "BDM space supports k in {1,2}");
    monos = scalar_monomials(k);
    const int nm = static_cast<int>(monos.size());
    ndof = 2 * nm;
    DenseMatrix V = DenseMatrix::Zero(ndof, ndof);
    const auto& erule = quadrature_rule(QuadEntity::Edge, 2 * k + 2);
    int row = 0;
    for (int e = 0; e < 3; ++e) {
      const Vec2 a = kRefVerts[(e + 1) % 3], b = kRefVerts[(e + 2) % 3];
      const Vec2 n = refelem::edge_normal(e);
      const double len = (b - a).norm();
      for (int m = 0; m <= k; ++m, ++row) {
        for (int q = 0; q < erule.size(); ++q) {
          const double t = erule.points[q].x();
          const Vec2 x = a + t * (b - a);
          const double w = len * erule.weights[q] * legendre(m, 2.0 * t - 1.0);
          for (int j = 0; j < nm; ++j) {
            const double mv = mono_val(monos[j], x);
            V(row, j) += w * mv * n.x();        // component-0 monomial
            V(row, nm + j) += w * mv * n.y();   // component-1 monomial
          }
        }
      }
    }
    if (k == 2) {
      const auto& trule = quadrature_rule(QuadEntity::Triangle, 2 * k + 2);
      const std::array<std::function<Vec2(const Vec2&)>, 3> wfun = {
          [](const Vec2&) { return Vec2(1, 0); },
          [](const Vec2&) { return Vec2(0, 1); },
          [](const Vec2& p) { return Vec2(-p.y(), p.x()); }};
      for (int jW = 0; jW < 3; ++jW, ++row) {
        for (int q = 0; q < trule.size(); ++q) {
          const Vec2 x = trule.points[q];
          const Vec2 wv = trule.weights[q] * wfun[jW](x);
          for (int j = 0; j < nm; ++j) {
            const double mv = mono_val(monos[j], x);
            V(row, j) += mv * wv.x();
            V(row, nm + j) += mv * wv.y();
          }
        }
      }
    }
    require(row == ndof, "BDM reference: functional count mismatch");
    coeff = V.transpose().fullPivLu().inverse();
  }

  // value: 2 x ndof; grad per dof (rows: component, cols: d/dref)
  void eval(const Vec2& p, DenseMatrix& value, std::vector<Mat2>* grad,
            std::vector<std::array<Mat2, 2>>* hess) const {
    const int nm = static_cast<int>(monos.size());
    Vector mv(nm);
    DenseMatrix mg(2, nm);
    std::vector<Mat2> mh;
    if (hess) mh.resize(nm);
    for (int j = 0; j < nm; ++j) {
      mv(j) = mono_val(monos[j], p);
      mg.col(j) = mono_grad(monos[j], p);
      if (hess) mh[j] = mono_hess(monos[j], p);
    }
    value.setZero(2, ndof);
    if (grad) grad->assign(ndof, Mat2::Zero());
    if (hess) hess->assign(ndof, {Mat2::Zero(), Mat2::Zero()});
    for (int i = 0; i < ndof; ++i) {
      for (int j = 0; j < nm; ++j) {
        const double c0 = coeff(i, j), c1 = coeff(i, nm + j);
        value(0, i) += c0 * mv(j);
        value(1, i) += c1 * mv(j);
        if (grad) {
          (*grad)[i].row(0) += c0 * mg.col(j).transpose();
          (*grad)[i].row(1) += c1 * mg.col(j).transpose();
        }
        if (hess) {
          (*hess)[i][0] += c0 * mh[j];
          (*hess)[i][1] += c1 * mh[j];
        }
      }
    }
  }
};

const BdmReference& bdm_reference(int k) {
  static const BdmReference r1(1);
  static const BdmReference r2(2);
  return k == 1 ? r1 : r2;
}

// Lagrange P1/P2 on the reference triangle; barycentric lambda = (1-x-y, x, y).
void lagrange_ref_eval(int k, const Vec2& p, Vector& value, DenseMatrix& grad,
                       std::vector<Mat2>* hess) {
  const double l0 = 1.0 - p.x() - p.y(), l1 = p.x(), l2 = p.y();
  const std::array<double, 3> l = {l0, l1, l2};
  const std::array<Vec2, 3> dl = {Vec2(-1, -1), Vec2(1, 0), Vec2(0, 1)};
  if (k == 1) {
    value.resize(3);
    grad.resize(2, 3);
    if (hess) hess->assign(3, Mat2::Zero());
    for (int i = 0; i < 3; ++i) {
      value(i) = l[i];
      grad.col(i) = dl[i];
    }
    return;
  }
  require(k == 2, "Lagrange space supports k in {1,2}");
  value.resize(6);
  grad.resize(2, 6);
  if (hess) hess->assign(6, Mat2::Zero());
  for (int i = 0; i < 3; ++i) {
    value(i) = l[i] * (2.0 * l[i] - 1.0);
    grad.col(i) = (4.0 * l[i] - 1.0) * dl[i];
    if (hess) (*hess)[i] = 4.0 * dl[i] * dl[i].transpose();
  }
  for (int i = 0; i < 3; ++i) {
    const int a = (i + 1) % 3, b = (i + 2) % 3;
    value(3 + i) = 4.0 * l[a] * l[b];
    grad.col(3 + i) = 4.0 * (l[a] * dl[b] + l[b] * dl[a]);
    if (hess)
      (*hess)[3 + i] = 4.0 * (dl[a] * dl[b].transpose() + dl[b] * dl[a].transpose());
  }
}

void dg_ref_eval(int degree, const Vec2& p, Vector& value, DenseMatrix& grad,
                 std::vector<Mat2>* hess) {
  const auto monos = scalar_monomials(degree);
  const int n = static_cast<int>(monos.size());
  value.resize(n);
  grad.resize(2, n);
  if (hess) hess->resize(n);
  for (int j = 0; j < n; ++j) {
    value(j) = mono_val(monos[j], p);
    grad.col(j) = mono_grad(monos[j], p);
    if (hess) (*hess)[j] = mono_hess(monos[j], p);
  }
}

} // namespace

namespace refelem {
int bdm_ndofs(int k) { return bdm_reference(k).ndof; }
void bdm_eval(int k, const Vec2& ref_pt, DenseMatrix& value, Vector& div) {
  const BdmReference& ref = bdm_reference(k);
  std::vector<Mat2> grad;
  ref.eval(ref_pt, value, &grad, nullptr);
  div.resize(ref.ndof);
  for (int i = 0; i < ref.ndof; ++i) div(i) = grad[i](0, 0) + grad[i](1, 1);
}
Vec2 edge_start(int i) { return kRefVerts[(i + 1) % 3]; }
Vec2 edge_end(int i) { return kRefVerts[(i + 2) % 3]; }
Vec2 edge_normal(int i) {
  const Vec2 t = edge_end(i) - edge_start(i);
  return Vec2(t.y(), -t.x()).normalized();
}
double edge_length(int i) { return (edge_end(i) - edge_start(i)).norm(); }
} // namespace refelem

struct SpaceBuilder {
  static std::shared_ptr<SpaceDescriptor> make(SpaceKind kind, MeshPtr mesh, int k) {
    require(k == 1 || k == 2, "space: degree k must be 1 or 2");
    auto s = std::make_shared<SpaceDescriptor>();
    s->kind = kind;
    s->mesh = std::move(mesh);
    const Mesh& m = *s->mesh;
    const int nt = m.num_triangles(), ne = m.num_edges(), nv = m.num_vertices();
    switch (kind) {
      case SpaceKind::BDM: {
        s->degree = k;
        const int per_edge = k + 1;
        const int per_cell_interior = (k + 1) * (k - 1);
        s->dofs_per_cell = 3 * per_edge + per_cell_interior;
        s->ndofs = ne * per_edge + nt * per_cell_interior;
        s->cell_dofs_.resize(static_cast<size_t>(nt) * s->dofs_per_cell);
        s->cell_signs_.assign(s->cell_dofs_.size(), 1.0);
        for (int t = 0; t < nt; ++t) {
          int j = 0;
          for (int i = 0; i < 3; ++i) {
            const int e = m.tri_edges[t][i];
            const double sig_n = (m.edges[e].tri[0] == t || m.edges[e].on_boundary()) ? 1.0 : -1.0;
            const bool fl = !m.local_edge_matches_global(t, i);
            for (int mm = 0; mm <= k; ++mm, ++j) {
              s->cell_dofs_[static_cast<size_t>(t) * s->dofs_per_cell + j] = e * per_edge + mm;
              double sg = sig_n;
              if (fl && (mm % 2 == 1)) sg = -sg;
              s->cell_signs_[static_cast<size_t>(t) * s->dofs_per_cell + j] = sg;
            }
          }
          for (int ii = 0; ii < per_cell_interior; ++ii, ++j)
            s->cell_dofs_[static_cast<size_t>(t) * s->dofs_per_cell + j] =
                ne * per_edge + t * per_cell_interior + ii;
        }
        break;
      }
      case SpaceKind::DgPressure: {
        s->degree = k - 1;
        s->dofs_per_cell = k * (k + 1) / 2;
        s->ndofs = nt * s->dofs_per_cell;
        s->cell_dofs_.resize(static_cast<size_t>(nt) * s->dofs_per_cell);
        s->cell_signs_.assign(s->cell_dofs_.size(), 1.0);
        for (int t = 0; t < nt; ++t)
          for (int j = 0; j < s->dofs_per_cell; ++j)
            s->cell_dofs_[static_cast<size_t>(t) * s->dofs_per_cell + j] =
                t * s->dofs_per_cell + j;
        break;
      }
      case SpaceKind::Lagrange: {
        s->degree = k;
        s->dofs_per_cell = k == 1 ? 3 : 6;
        s->ndofs = k == 1 ? nv : nv + ne;
        s->cell_dofs_.resize(static_cast<size_t>(nt) * s->dofs_per_cell);
        s->cell_signs_.assign(s->cell_dofs_.size(), 1.0);
        for (int t = 0; t < nt; ++t) {
          for (int i = 0; i < 3; ++i)
            s->cell_dofs_[static_cast<size_t>(t) * s->dofs_per_cell + i] = m.triangles[t].v[i];
          if (k == 2)
            for (int i = 0; i < 3; ++i)
              s->cell_dofs_[static_cast<size_t>(t) * s->dofs_per_cell + 3 + i] =
                  nv + m.tri_edges[t][i];
        }
        break;
      }
    }
    return s;
  }
};

std::shared_ptr<const SpaceDescriptor> SpaceDescriptor::bdm(MeshPtr mesh, int k) {
  return SpaceBuilder::make(SpaceKind::BDM, std::move(mesh), k);
}
std::shared_ptr<const SpaceDescriptor> SpaceDescriptor::pressure(MeshPtr mesh, int k) {
  return SpaceBuilder::make(SpaceKind::DgPressure, std::move(mesh), k);
}
std::shared_ptr<const SpaceDescriptor> SpaceDescriptor::lagrange(MeshPtr mesh, int k) {
  return SpaceBuilder::make(SpaceKind::Lagrange, std::move(mesh), k);
}

std::vector<int> SpaceDescriptor::edge_dofs(int e) const {
  std::vector<int> out;
  if (kind == SpaceKind::BDM) {
    const int per_edge = degree + 1;
    for (int m = 0; m < per_edge; ++m) out.push_back(e * per_edge + m);
  } else if (kind == SpaceKind::Lagrange) {
    out.push_back(mesh->edges[e].v[0]);
    out.push_back(mesh->edges[e].v[1]);
    if (degree == 2) out.push_back(mesh->num_vertices() + e);
  }
  return out;
}

Vec2 SpaceDescriptor::lagrange_node(int dof) const {
  require(kind == SpaceKind::Lagrange, "lagrange_node: not a Lagrange space");
  const int nv = mesh->num_vertices();
  if (dof < nv) return mesh->vertices[dof];
  return mesh->edge_midpoint(dof - nv);
}

namespace {

// Reference-basis tables at fixed point sets (volume rule points or edge-rule
// trace points per local edge and orientation), built once per configuration.
struct RefPointEval {
  DenseMatrix vval;                       // BDM: 2 x n
  std::vector<Mat2> vgrad;
  std::vector<std::array<Mat2, 2>> vhess;
  Vector sval;                            // scalar spaces
  DenseMatrix sgrad;
  std::vector<Mat2> shess;
};

struct RefTable {
  std::vector<RefPointEval> pts;
};

std::vector<Vec2> table_points(const QuadratureRule& rule, int local_edge, bool flip) {
  std::vector<Vec2> out;
  if (local_edge < 0) {
    out = rule.points;
  } else {
    const Vec2 a = refelem::edge_start(local_edge), b = refelem::edge_end(local_edge);
    out.reserve(rule.points.size());
    for (const auto& p : rule.points) {
      const double t = flip ? 1.0 - p.x() : p.x();
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

const RefTable& ref_table(SpaceKind kind, int degree, const QuadratureRule& rule,
                          int local_edge, bool flip) {
  using Key = std::tuple<int, int, int, int, int, int>;
  static std::map<Key, std::unique_ptr<RefTable>> cache;
  static std::mutex mtx;
  const Key key{static_cast<int>(kind), degree, static_cast<int>(rule.entity), rule.degree,
                local_edge, flip ? 1 : 0};
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;
  auto table = std::make_unique<RefTable>();
  const auto pts = table_points(rule, local_edge, flip);
  table->pts.resize(pts.size());
  for (size_t q = 0; q < pts.size(); ++q) {
    RefPointEval& pe = table->pts[q];
    if (kind == SpaceKind::BDM) {
      bdm_reference(degree).eval(pts[q], pe.vval, &pe.vgrad, &pe.vhess);
    } else if (kind == SpaceKind::Lagrange) {
      lagrange_ref_eval(degree, pts[q], pe.sval, pe.sgrad, &pe.shess);
    } else {
      dg_ref_eval(degree, pts[q], pe.sval, pe.sgrad, &pe.shess);
    }
  }
  const RefTable& ref = *table;
  cache.emplace(key, std::move(table));
  return ref;
}

} // namespace

void SpaceDescriptor::eval_vector(int t, const std::vector<Vec2>& ref_pts,
                                  std::vector<VectorBasisPoint>& out,
                                  bool want_hessian) const {
  require(kind == SpaceKind::BDM, "eval_vector: not a BDM space");
  const BdmReference& ref = bdm_reference(degree);
  out.resize(ref_pts.size());
  DenseMatrix rv;
  std::vector<Mat2> rg;
  std::vector<std::array<Mat2, 2>> rh;
  for (size_t q = 0; q < ref_pts.size(); ++q) {
    ref.eval(ref_pts[q], rv, &rg, want_hessian ? &rh : nullptr);
    map_vector_point(t, rv, rg, want_hessian ? &rh : nullptr, out[q]);
  }
}

void SpaceDescriptor::eval_scalar(int t, const std::vector<Vec2>& ref_pts,
                                  std::vector<ScalarBasisPoint>& out,
                                  bool want_hessian) const {
  require(kind != SpaceKind::BDM, "eval_scalar: BDM is a vector space");
  out.resize(ref_pts.size());
  Vector rv;
  DenseMatrix rg;
  std::vector<Mat2> rh;
  for (size_t q = 0; q < ref_pts.size(); ++q) {
    if (kind == SpaceKind::Lagrange)
      lagrange_ref_eval(degree, ref_pts[q], rv, rg, want_hessian ? &rh : nullptr);
    else
      dg_ref_eval(degree, ref_pts[q], rv, rg, want_hessian ? &rh : nullptr);
    map_scalar_point(t, rv, rg, want_hessian ? &rh : nullptr, out[q]);
  }
}

void SpaceDescriptor::map_vector_point(int t, const DenseMatrix& rv, const std::vector<Mat2>& rg,
                                       const std::vector<std::array<Mat2, 2>>* rh,
                                       VectorBasisPoint& bp) const {
  const Mat2 B = mesh->jacobian(t);
  const double J = B.determinant();
  const Mat2 Binv = B.inverse();
  const Mat2 PJ = B / J;
  bp.value.resize(2, dofs_per_cell);
  bp.grad.resize(dofs_per_cell);
  bp.div.resize(dofs_per_cell);
  if (rh) bp.hess.resize(dofs_per_cell);
  for (int i = 0; i < dofs_per_cell; ++i) {
    const double sg = cell_sign(t, i);
    bp.value.col(i).noalias() = sg * (PJ * rv.col(i));
    bp.grad[i].noalias() = sg * (PJ * rg[i] * Binv);
    bp.div[i] = sg * (rg[i](0, 0) + rg[i](1, 1)) / J;
    if (rh) {
      for (int c = 0; c < 2; ++c) {
        Mat2 acc = Mat2::Zero();
        for (int cp = 0; cp < 2; ++cp)
          acc += PJ(c, cp) * (Binv.transpose() * (*rh)[i][cp] * Binv);
        bp.hess[i][c] = sg * acc;
      }
    }
  }
}

void SpaceDescriptor::map_scalar_point(int t, const Vector& rv, const DenseMatrix& rg,
                                       const std::vector<Mat2>* rh, ScalarBasisPoint& bp) const {
  const Mat2 Binv = mesh->jacobian(t).inverse();
  bp.value = rv;
  bp.grad.noalias() = Binv.transpose() * rg;
  if (rh) {
    bp.hess.resize(dofs_per_cell);
    for (int i = 0; i < dofs_per_cell; ++i)
      bp.hess[i].noalias() = Binv.transpose() * (*rh)[i] * Binv;
  }
}

void SpaceDescriptor::eval_vector_rule(int t, const QuadratureRule& rule,
                                       std::vector<VectorBasisPoint>& out,
                                       bool want_hessian) const {
  require(kind == SpaceKind::BDM, "eval_vector_rule: not a BDM space");
  const RefTable& tab = ref_table(kind, degree, rule, -1, false);
  out.resize(tab.pts.size());
  for (size_t q = 0; q < tab.pts.size(); ++q)
    map_vector_point(t, tab.pts[q].vval, tab.pts[q].vgrad,
                     want_hessian ? &tab.pts[q].vhess : nullptr, out[q]);
}

void SpaceDescriptor::eval_scalar_rule(int t, const QuadratureRule& rule,
                                       std::vector<ScalarBasisPoint>& out,
                                       bool want_hessian) const {
  require(kind != SpaceKind::BDM, "eval_scalar_rule: BDM is a vector space");
  const RefTable& tab = ref_table(kind, degree, rule, -1, false);
  out.resize(tab.pts.size());
  for (size_t q = 0; q < tab.pts.size(); ++q)
    map_scalar_point(t, tab.pts[q].sval, tab.pts[q].sgrad,
                     want_hessian ? &tab.pts[q].shess : nullptr, out[q]);
}

void SpaceDescriptor::eval_vector_edge(int t, int local_edge, bool flip,
                                       const QuadratureRule& edge_rule,
                                       std::vector<VectorBasisPoint>& out,
                                       bool want_hessian) const {
  require(kind == SpaceKind::BDM, "eval_vector_edge: not a BDM space");
  const RefTable& tab = ref_table(kind, degree, edge_rule, local_edge, flip);
  out.resize(tab.pts.size());
  for (size_t q = 0; q < tab.pts.size(); ++q)
    map_vector_point(t, tab.pts[q].vval, tab.pts[q].vgrad,
                     want_hessian ? &tab.pts[q].vhess : nullptr, out[q]);
}

void SpaceDescriptor::eval_scalar_edge(int t, int local_edge, bool flip,
                                       const QuadratureRule& edge_rule,
                                       std::vector<ScalarBasisPoint>& out,
                                       bool want_hessian) const {
  require(kind != SpaceKind::BDM, "eval_scalar_edge: BDM is a vector space");
  const RefTable& tab = ref_table(kind, degree, edge_rule, local_edge, flip);
  out.resize(tab.pts.size());
  for (size_t q = 0; q < tab.pts.size(); ++q)
    map_scalar_point(t, tab.pts[q].sval, tab.pts[q].sgrad,
                     want_hessian ? &tab.pts[q].shess : nullptr, out[q]);
}

} // namespace divflow
