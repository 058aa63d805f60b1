#include "ghd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ghd/kdtree.hpp"
#include "ghd/log.hpp"
#include "ghd/random.hpp"

namespace ghd {

// ---------------------------------------------------------------------------
// Overlap

namespace {

void check_lengths(const Eigen::VectorXd& occ, const std::vector<std::uint8_t>& labels, const char* what) {
  if (static_cast<std::size_t>(occ.size()) != labels.size()) {
    throw ValidationError(std::string(what) + ": " + std::to_string(occ.size()) + " occupancies but " +
                          std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

double soft_dice(const Eigen::VectorXd& occ, const std::vector<std::uint8_t>& labels, bool* empty) {
  check_lengths(occ, labels, "soft_dice");
  double inter = 0.0, so = 0.0, sy = 0.0;
  for (Eigen::Index i = 0; i < occ.size(); ++i) {
    const double y = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    inter += occ(i) * y;
    so += occ(i);
    sy += y;
  }
  const bool none = so + sy == 0.0;
  if (empty) *empty = none;
  return none ? 1.0 : 2.0 * inter / (so + sy);
}

Eigen::VectorXd soft_dice_gradient(const Eigen::VectorXd& occ, const std::vector<std::uint8_t>& labels) {
  check_lengths(occ, labels, "soft_dice_gradient");
  double inter = 0.0, so = 0.0, sy = 0.0;
  for (Eigen::Index i = 0; i < occ.size(); ++i) {
    const double y = labels[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    inter += occ(i) * y;
    so += occ(i);
    sy += y;
  }
  const double s = so + sy;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(occ.size());
  if (s == 0.0) return g;
  const double dice = 2.0 * inter / s;
  for (Eigen::Index i = 0; i < occ.size(); ++i) g(i) = ((labels[static_cast<std::size_t>(i)] ? 2.0 : 0.0) - dice) / s;
  return g;
}

// ---------------------------------------------------------------------------
// Surface distances

Points sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed) {
  const auto& areas = mesh.face_areas();
  std::vector<double> cdf(static_cast<std::size_t>(areas.size()));
  std::partial_sum(areas.data(), areas.data() + areas.size(), cdf.begin());
  if (cdf.empty() || !(cdf.back() > 0)) throw ValidationError("sample_surface: mesh has zero area");
  Rng rng(seed);
  Points out(static_cast<Eigen::Index>(n), 3);
  const auto& faces = mesh.faces();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double r = rng.uniform() * cdf.back();
    auto f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
    f = std::min(f, faces.size() - 1);
    const double s = std::sqrt(rng.uniform()), t = rng.uniform();
    const Face& tri = faces[f];
    const Vec3 p = (1 - s) * mesh.vertex(tri[0]) + s * (1 - t) * mesh.vertex(tri[1]) + s * t * mesh.vertex(tri[2]);
    out.row(i) = p.transpose();
  }
  return out;
}

double chamfer_points(const Points& a, const Points& b) {
  const KdTree ta(a), tb(b);
  return tb.nearest_squared_distances(a).mean() + ta.nearest_squared_distances(b).mean();
}

double hausdorff_points(const Points& a, const Points& b) {
  const KdTree ta(a), tb(b);
  return std::sqrt(std::max(tb.nearest_squared_distances(a).maxCoeff(), ta.nearest_squared_distances(b).maxCoeff()));
}

SurfaceDistances surface_distances(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  const Points pa = sample_surface(a, n_samples, seed);
  const Points pb = sample_surface(b, n_samples, seed);
  const KdTree ta(pa), tb(pb);
  const Eigen::VectorXd ab = tb.nearest_squared_distances(pa), ba = ta.nearest_squared_distances(pb);
  return {ab.mean() + ba.mean(), std::sqrt(std::max(ab.maxCoeff(), ba.maxCoeff()))};
}

double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  return surface_distances(a, b, n_samples, seed).chamfer;
}

double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t n_samples, std::uint64_t seed) {
  return surface_distances(a, b, n_samples, seed).hausdorff;
}

// ---------------------------------------------------------------------------
// Wall thickness

Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return {1, 0, 0};
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return {0, 1, 0};
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) {
    const double v = d1 / (d1 - d3);
    return {1 - v, v, 0};
  }
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return {0, 0, 1};
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) {
    const double w = d2 / (d2 - d6);
    return {1 - w, 0, w};
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
    const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
    return {0, 1 - w, w};
  }
  const double denom = 1.0 / (va + vb + vc);
  const double v = vb * denom, w = vc * denom;
  return {1 - v - w, v, w};
}

namespace {

/// Bounding-volume hierarchy over faces.
class FaceBvh {
 public:
  explicit FaceBvh(const TriMesh& mesh) : mesh_(mesh) {
    const auto nf = static_cast<int>(mesh.num_faces());
    order_.resize(static_cast<std::size_t>(nf));
    std::iota(order_.begin(), order_.end(), 0);
    lo_.resize(static_cast<std::size_t>(nf));
    hi_.resize(static_cast<std::size_t>(nf));
    for (int f = 0; f < nf; ++f) {
      const Face& t = mesh.faces()[static_cast<std::size_t>(f)];
      const Vec3 a = mesh.vertex(t[0]), b = mesh.vertex(t[1]), c = mesh.vertex(t[2]);
      lo_[static_cast<std::size_t>(f)] = a.cwiseMin(b).cwiseMin(c);
      hi_[static_cast<std::size_t>(f)] = a.cwiseMax(b).cwiseMax(c);
    }
    if (nf > 0) build(0, nf);
  }

  /// Calls leaf(face) for faces in nodes whose box distance is below bound(); bound may shrink.
  template <class Leaf, class Bound>
  void visit(const Vec3& q, Leaf&& leaf, Bound&& bound) const {
    if (nodes_.empty()) return;
    int stack[128];
    int top = 0;
    stack[top++] = 0;
    while (top > 0) {
      const Node& n = nodes_[static_cast<std::size_t>(stack[--top])];
      if (box_distance(q, n.lo, n.hi) >= bound()) continue;
      if (n.left < 0) {
        for (int i = n.begin; i < n.end; ++i) leaf(order_[static_cast<std::size_t>(i)]);
        continue;
      }
      const Node& l = nodes_[static_cast<std::size_t>(n.left)];
      const Node& r = nodes_[static_cast<std::size_t>(n.right)];
      if (box_distance(q, l.lo, l.hi) < box_distance(q, r.lo, r.hi)) {
        stack[top++] = n.right;
        stack[top++] = n.left;
      } else {
        stack[top++] = n.left;
        stack[top++] = n.right;
      }
    }
  }

 private:
  struct Node {
    Vec3 lo, hi;
    int begin = 0, end = 0, left = -1, right = -1;
  };

  static double box_distance(const Vec3& q, const Vec3& lo, const Vec3& hi) {
    return (lo - q).cwiseMax(q - hi).cwiseMax(0.0).norm();
  }

  int build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    Vec3 lo = Vec3::Constant(INFINITY), hi = Vec3::Constant(-INFINITY);
    Vec3 clo = lo, chi = hi;
    for (int i = begin; i < end; ++i) {
      const auto f = static_cast<std::size_t>(order_[static_cast<std::size_t>(i)]);
      lo = lo.cwiseMin(lo_[f]);
      hi = hi.cwiseMax(hi_[f]);
      const Vec3 c = 0.5 * (lo_[f] + hi_[f]);
      clo = clo.cwiseMin(c);
      chi = chi.cwiseMax(c);
    }
    nodes_[static_cast<std::size_t>(id)].lo = lo;
    nodes_[static_cast<std::size_t>(id)].hi = hi;
    nodes_[static_cast<std::size_t>(id)].begin = begin;
    nodes_[static_cast<std::size_t>(id)].end = end;
    if (end - begin > 4) {
      int axis;
      (chi - clo).maxCoeff(&axis);
      const int mid = (begin + end) / 2;
      std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
        return lo_[static_cast<std::size_t>(a)](axis) + hi_[static_cast<std::size_t>(a)](axis) <
               lo_[static_cast<std::size_t>(b)](axis) + hi_[static_cast<std::size_t>(b)](axis);
      });
      const int l = build(begin, mid);
      const int r = build(mid, end);
      nodes_[static_cast<std::size_t>(id)].left = l;
      nodes_[static_cast<std::size_t>(id)].right = r;
    }
    return id;
  }

  const TriMesh& mesh_;
  std::vector<int> order_;
  std::vector<Vec3> lo_, hi_;
  std::vector<Node> nodes_;
};

}  // namespace

ThicknessResult thickness(const TriMesh& mesh, const std::vector<int>& query, double lambda_n) {
  if (!(lambda_n >= 0)) throw ValidationError("thickness: lambda_n must be non-negative");
  ThicknessResult out;
  if (query.empty()) {
    out.vertices.resize(mesh.num_vertices());
    std::iota(out.vertices.begin(), out.vertices.end(), 0);
  } else {
    out.vertices = query;
  }
  const auto nq = static_cast<Eigen::Index>(out.vertices.size());
  out.values.resize(nq);
  out.faces.assign(out.vertices.size(), -1);
  out.barycentric.setZero(nq, 3);

  const FaceBvh bvh(mesh);
  const auto& faces = mesh.faces();
  const Points& fn = mesh.face_normals();
  for (Eigen::Index k = 0; k < nq; ++k) {
    const int v = out.vertices[static_cast<std::size_t>(k)];
    if (v < 0 || static_cast<std::size_t>(v) >= mesh.num_vertices()) throw ValidationError("thickness: bad vertex id");
    const Vec3 q = mesh.vertex(static_cast<std::size_t>(v));
    const Vec3 nq_ = mesh.vertex_normals().row(v).transpose();
    double best = INFINITY, best_dist = INFINITY;
    int best_face = -1;
    Vec3 best_bary = Vec3::Zero();
    bvh.visit(
        q,
        [&](int f) {
          const Face& t = faces[static_cast<std::size_t>(f)];
          if (t[0] == v || t[1] == v || t[2] == v) return;
          const Vec3 np = fn.row(f).transpose();
          if (!(np.dot(nq_) < 0)) return;
          const Vec3 a = mesh.vertex(t[0]), b = mesh.vertex(t[1]), c = mesh.vertex(t[2]);
          const Vec3 bary = closest_point_barycentric(q, a, b, c);
          const double d = (q - (bary(0) * a + bary(1) * b + bary(2) * c)).norm();
          const double obj = d + lambda_n * (np + nq_).norm();
          if (obj < best) {
            best = obj;
            best_dist = d;
            best_face = f;
            best_bary = bary;
          }
        },
        [&] { return best; });
    out.values(k) = best_face < 0 ? kNoThickness : best_dist;
    out.faces[static_cast<std::size_t>(k)] = best_face;
    out.barycentric.row(k) = best_bary.transpose();
    out.num_flagged += best_face < 0;
  }
  return out;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

ThicknessLoss thickness_loss(const TriMesh& mesh, const ThicknessResult& t, double t_min, bool with_gradient) {
  if (!(t_min > 0)) throw ValidationError("thickness_loss: t_min must be positive");
  ThicknessLoss out;
  if (with_gradient) out.gradient = VertexGradient::Zero(static_cast<Eigen::Index>(mesh.num_vertices()), 3);
  const auto& faces = mesh.faces();
  for (Eigen::Index k = 0; k < t.values.size(); ++k) {
    const double tk = t.values(k);
    if (!(tk < t_min)) continue;
    out.value += silu(t_min - tk);
    if (!with_gradient || !(tk > 0)) continue;
    const int f = t.faces[static_cast<std::size_t>(k)];
    const Face& tri = faces[static_cast<std::size_t>(f)];
    const int v = t.vertices[static_cast<std::size_t>(k)];
    const Vec3 bary = t.barycentric.row(k).transpose();
    const Vec3 p = bary(0) * mesh.vertex(tri[0]) + bary(1) * mesh.vertex(tri[1]) + bary(2) * mesh.vertex(tri[2]);
    const Vec3 dir = (mesh.vertex(static_cast<std::size_t>(v)) - p) / tk;
    const double dl = -silu_derivative(t_min - tk);
    out.gradient.row(v) += (dl * dir).transpose();
    for (int c = 0; c < 3; ++c) out.gradient.row(tri[c]) -= (dl * bary(c) * dir).transpose();
  }
  return out;
}

ThicknessLoss thickness_loss(const TriMesh& mesh, double t_min, double lambda_n, bool with_gradient) {
  return thickness_loss(mesh, thickness(mesh, {}, lambda_n), t_min, with_gradient);
}

// ---------------------------------------------------------------------------
// Volume

double enclosed_volume(const TriMesh& mesh, bool* closed) {
  if (closed) *closed = mesh.is_closed();
  const Points& N = mesh.face_area_vectors();
  const Points& C = mesh.face_centroids();
  return (N.array() * C.array()).sum() / 3.0;
}

VertexGradient enclosed_volume_gradient(const TriMesh& mesh) {
  VertexGradient g = VertexGradient::Zero(static_cast<Eigen::Index>(mesh.num_vertices()), 3);
  for (const Face& t : mesh.faces()) {
    const Vec3 a = mesh.vertex(t[0]), b = mesh.vertex(t[1]), c = mesh.vertex(t[2]);
    g.row(t[0]) += (b.cross(c) / 6.0).transpose();
    g.row(t[1]) += (c.cross(a) / 6.0).transpose();
    g.row(t[2]) += (a.cross(b) / 6.0).transpose();
  }
  return g;
}

namespace {

void check_same_connectivity(const TriMesh& a, const TriMesh& b) {
  if (a.num_vertices() != b.num_vertices() || a.faces() != b.faces()) {
    throw ValidationError("volume_rate: meshes do not share connectivity");
  }
}

}  // namespace

double volume_rate(const TriMesh& mesh_t, const TriMesh& mesh_t1) {
  check_same_connectivity(mesh_t, mesh_t1);
  const Points dn = mesh_t1.face_normals() - mesh_t.face_normals();
  const Points dc = mesh_t1.face_centroids() - mesh_t.face_centroids();
  const Eigen::VectorXd first = (dn.array() * mesh_t.face_centroids().array()).rowwise().sum();
  const Eigen::VectorXd second = (mesh_t.face_normals().array() * dc.array()).rowwise().sum();
  return (first + second).dot(mesh_t.face_areas());
}

VertexGradient volume_rate_gradient(const TriMesh& mesh_t, const TriMesh& mesh_t1) {
  check_same_connectivity(mesh_t, mesh_t1);
  VertexGradient g = VertexGradient::Zero(static_cast<Eigen::Index>(mesh_t1.num_vertices()), 3);
  const auto& faces = mesh_t1.faces();
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto row = static_cast<Eigen::Index>(f);
    const Face& t = faces[f];
    const double area = mesh_t.face_areas()(row);
    const Vec3 nt = mesh_t.face_normals().row(row).transpose();
    for (int k = 0; k < 3; ++k) g.row(t[k]) += (area * nt / 3.0).transpose();
    const Vec3 N1 = mesh_t1.face_area_vectors().row(row).transpose();
    const double len = N1.norm();
    if (!(len > 0)) continue;
    const Vec3 n1 = N1 / len;
    const Vec3 ct = mesh_t.face_centroids().row(row).transpose();
    const Vec3 gN = area * (ct - n1 * n1.dot(ct)) / len;
    const Vec3 a = mesh_t1.vertex(t[0]), b = mesh_t1.vertex(t[1]), c = mesh_t1.vertex(t[2]);
    g.row(t[0]) += (0.5 * (b - c).cross(gN)).transpose();
    g.row(t[1]) += (0.5 * (c - a).cross(gN)).transpose();
    g.row(t[2]) += (0.5 * (a - b).cross(gN)).transpose();
  }
  return g;
}

// ---------------------------------------------------------------------------
// Combined fitting objective

LossEvaluation combined_loss(const TriMesh& mesh, const LabeledPoints& points, const LossOptions& opt) {
  const LossWeights& w = opt.weights;
  if (!(w.lambda_th >= 0 && w.lambda_vol >= 0 && w.lambda_inc >= 0)) {
    throw ValidationError("combined_loss: weights must be non-negative");
  }
  if (!(opt.beta > 0)) throw ValidationError("combined_loss: beta must be positive");
  LossEvaluation out;
  const auto nv = static_cast<Eigen::Index>(mesh.num_vertices());
  if (opt.with_gradient) out.gradient = VertexGradient::Zero(nv, 3);

  std::vector<std::uint8_t> flagged;
  const Eigen::VectorXd raw = winding_occupancy(quadrature_sources(mesh, opt.quadrature), points.positions, &flagged);
  out.num_flagged_points = static_cast<std::size_t>(std::count(flagged.begin(), flagged.end(), 1));
  const Eigen::VectorXd occ = smooth_occupancy(raw, opt.beta);
  out.terms.dice = soft_dice(occ, points.labels);
  out.terms.total = 1.0 - out.terms.dice;
  if (opt.with_gradient) {
    const Eigen::VectorXd dd = soft_dice_gradient(occ, points.labels);
    Eigen::VectorXd upstream(raw.size());
    for (Eigen::Index i = 0; i < raw.size(); ++i) upstream(i) = -dd(i) * smooth_occupancy_slope(raw(i), opt.beta);
    out.gradient += occupancy_gradient(mesh, points.positions, upstream, {opt.quadrature, opt.frozen_geometry});
  }

  if (w.lambda_th > 0) {
    const auto th = thickness_loss(mesh, thickness(mesh, {}, w.lambda_n), w.t_min, opt.with_gradient);
    out.terms.thickness = th.value;
    out.terms.total += w.lambda_th * th.value;
    if (opt.with_gradient) out.gradient += w.lambda_th * th.gradient;
  }

  out.terms.volume = enclosed_volume(mesh);
  if (w.lambda_vol > 0) {
    const double dv = out.terms.volume - w.volume_target;
    out.terms.total += w.lambda_vol * dv * dv;
    if (opt.with_gradient) out.gradient += 2.0 * w.lambda_vol * dv * enclosed_volume_gradient(mesh);
  }

  if (w.lambda_inc > 0) {
    if (!opt.rate_reference) throw ValidationError("combined_loss: lambda_inc > 0 needs a reference mesh");
    const double r = volume_rate(*opt.rate_reference, mesh);
    out.terms.rate = r;
    out.terms.total += w.lambda_inc * r * r;
    if (opt.with_gradient) out.gradient += 2.0 * w.lambda_inc * r * volume_rate_gradient(*opt.rate_reference, mesh);
  }

  if (!std::isfinite(out.terms.total)) throw NumericalError("combined_loss: non-finite loss");
  return out;
}

GhdCoefficients coefficient_gradient(const GhdBasis& basis, const VertexGradient& vertex_gradient) {
  if (vertex_gradient.rows() != basis.num_vertices()) {
    throw ValidationError("coefficient_gradient: gradient rows do not match the basis");
  }
  return basis.modes.transpose() * vertex_gradient;
}

}  // namespace ghd
