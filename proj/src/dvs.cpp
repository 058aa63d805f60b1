#include "ghd/dvs.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#ifdef __AVX512F__
#include <immintrin.h>
#endif

namespace ghd {

Quadrature parse_quadrature(const std::string& name) {
  if (name == "facet") return Quadrature::facet;
  if (name == "vertex") return Quadrature::vertex;
  throw ValidationError("unknown quadrature '" + name + "' (expected facet or vertex)");
}

const char* quadrature_name(Quadrature q) { return q == Quadrature::facet ? "facet" : "vertex"; }

QuadratureSources quadrature_sources(const TriMesh& mesh, Quadrature q) {
  QuadratureSources s;
  if (q == Quadrature::facet) {
    s.positions = mesh.face_centroids();
    s.weights = mesh.face_area_vectors();
  } else {
    s.positions = mesh.vertices();
    s.weights = mesh.vertex_normals().array().colwise() * mesh.vertex_dual_areas().array();
  }
  return s;
}

namespace {

constexpr double kInv4Pi = 0.25 / std::numbers::pi;
constexpr int kTile = 512;
/// Padding lanes sit far away so their contribution underflows to zero.
constexpr double kFar = 1e18;

/// Tile of query points copied into aligned, padded SoA buffers.
struct PointTile {
  alignas(64) double x[kTile];
  alignas(64) double y[kTile];
  alignas(64) double z[kTile];
  alignas(64) double u[kTile];
  int n = 0;
  int padded = 0;

  void load(const Points& pts, const double* up, Eigen::Index p0) {
    n = static_cast<int>(std::min<Eigen::Index>(kTile, pts.rows() - p0));
    padded = (n + 7) & ~7;
    for (int i = 0; i < n; ++i) {
      x[i] = pts(p0 + i, 0);
      y[i] = pts(p0 + i, 1);
      z[i] = pts(p0 + i, 2);
      u[i] = up ? up[p0 + i] : 0.0;
    }
    for (int i = n; i < padded; ++i) {
      x[i] = y[i] = z[i] = kFar;
      u[i] = 0.0;
    }
  }
};

#ifdef __AVX512F__
/// 1/sqrt(r2) from the 14-bit estimate and two Newton steps.
inline __m512d inv_sqrt(__m512d r2) {
  const __m512d half = _mm512_set1_pd(0.5), three_half = _mm512_set1_pd(1.5);
  __m512d y = _mm512_rsqrt14_pd(r2);
  const __m512d hr = _mm512_mul_pd(half, r2);
  for (int k = 0; k < 2; ++k) y = _mm512_mul_pd(y, _mm512_fnmadd_pd(hr, _mm512_mul_pd(y, y), three_half));
  return y;
}

inline __m512d inv_cube(__m512d r2) {
  const __m512d y = inv_sqrt(r2);
  return _mm512_mul_pd(_mm512_mul_pd(y, y), y);
}

inline double hsum(__m512d v) { return _mm512_reduce_add_pd(v); }
#endif

template <bool Flag>
void forward_kernel(const QuadratureSources& src, const Points& pts, double* out, std::uint8_t* flagged) {
  const Eigen::Index S = src.positions.rows(), P = pts.rows();
  const double* __restrict sx = src.positions.col(0).data();
  const double* __restrict sy = src.positions.col(1).data();
  const double* __restrict sz = src.positions.col(2).data();
  const double* __restrict wx = src.weights.col(0).data();
  const double* __restrict wy = src.weights.col(1).data();
  const double* __restrict wz = src.weights.col(2).data();
  const double eps2 = kOccupancyClamp * kOccupancyClamp;
  PointTile tile;
  alignas(64) double acc[kTile];
  alignas(64) double near[kTile];
  for (Eigen::Index p0 = 0; p0 < P; p0 += kTile) {
    tile.load(pts, nullptr, p0);
    const int n = tile.padded;
    std::fill(acc, acc + n, 0.0);
    std::fill(near, near + n, INFINITY);
    for (Eigen::Index s = 0; s < S; ++s) {
#ifdef __AVX512F__
      const __m512d cx = _mm512_set1_pd(sx[s]), cy = _mm512_set1_pd(sy[s]), cz = _mm512_set1_pd(sz[s]);
      const __m512d ax = _mm512_set1_pd(wx[s]), ay = _mm512_set1_pd(wy[s]), az = _mm512_set1_pd(wz[s]);
      const __m512d e2 = _mm512_set1_pd(eps2);
      for (int i = 0; i < n; i += 8) {
        const __m512d dx = _mm512_sub_pd(cx, _mm512_load_pd(tile.x + i));
        const __m512d dy = _mm512_sub_pd(cy, _mm512_load_pd(tile.y + i));
        const __m512d dz = _mm512_sub_pd(cz, _mm512_load_pd(tile.z + i));
        const __m512d r2raw = _mm512_fmadd_pd(dx, dx, _mm512_fmadd_pd(dy, dy, _mm512_mul_pd(dz, dz)));
        if constexpr (Flag) _mm512_store_pd(near + i, _mm512_min_pd(_mm512_load_pd(near + i), r2raw));
        const __m512d inv = inv_cube(_mm512_max_pd(r2raw, e2));
        const __m512d dot = _mm512_fmadd_pd(ax, dx, _mm512_fmadd_pd(ay, dy, _mm512_mul_pd(az, dz)));
        _mm512_store_pd(acc + i, _mm512_fmadd_pd(dot, inv, _mm512_load_pd(acc + i)));
      }
#else
      const double cx = sx[s], cy = sy[s], cz = sz[s];
      const double ax = wx[s], ay = wy[s], az = wz[s];
#pragma omp simd
      for (int i = 0; i < n; ++i) {
        const double dx = cx - tile.x[i], dy = cy - tile.y[i], dz = cz - tile.z[i];
        const double r2raw = dx * dx + dy * dy + dz * dz;
        if constexpr (Flag) near[i] = std::min(near[i], r2raw);
        const double r2 = std::max(r2raw, eps2);
        acc[i] += (ax * dx + ay * dy + az * dz) / (r2 * std::sqrt(r2));
      }
#endif
    }
    for (int i = 0; i < tile.n; ++i) out[p0 + i] = kInv4Pi * acc[i];
    if constexpr (Flag) {
      for (int i = 0; i < tile.n; ++i) flagged[p0 + i] = near[i] < eps2;
    }
  }
}

/// Per-source gradient of sum_p u_p K(q_p; x_s, w_s) where K = <w, r>/|r|^3, r = x - q.
void backward_kernel(const QuadratureSources& src, const Points& pts, const Eigen::VectorXd& u, Points& gw,
                     Points& gx) {
  const Eigen::Index S = src.positions.rows(), P = pts.rows();
  gw.setZero(S, 3);
  gx.setZero(S, 3);
  const double eps2 = kOccupancyClamp * kOccupancyClamp;
  PointTile tile;
  for (Eigen::Index p0 = 0; p0 < P; p0 += kTile) {
    tile.load(pts, u.data(), p0);
    const int n = tile.padded;
    for (Eigen::Index s = 0; s < S; ++s) {
#ifdef __AVX512F__
      const __m512d cx = _mm512_set1_pd(src.positions(s, 0)), cy = _mm512_set1_pd(src.positions(s, 1)),
                    cz = _mm512_set1_pd(src.positions(s, 2));
      const __m512d ax = _mm512_set1_pd(src.weights(s, 0)), ay = _mm512_set1_pd(src.weights(s, 1)),
                    az = _mm512_set1_pd(src.weights(s, 2));
      const __m512d e2 = _mm512_set1_pd(eps2), three = _mm512_set1_pd(3.0);
      __m512d gwx = _mm512_setzero_pd(), gwy = gwx, gwz = gwx, gxx = gwx, gxy = gwx, gxz = gwx;
      for (int i = 0; i < n; i += 8) {
        const __m512d dx = _mm512_sub_pd(cx, _mm512_load_pd(tile.x + i));
        const __m512d dy = _mm512_sub_pd(cy, _mm512_load_pd(tile.y + i));
        const __m512d dz = _mm512_sub_pd(cz, _mm512_load_pd(tile.z + i));
        const __m512d r2 = _mm512_max_pd(_mm512_fmadd_pd(dx, dx, _mm512_fmadd_pd(dy, dy, _mm512_mul_pd(dz, dz))), e2);
        const __m512d y = inv_sqrt(r2);
        const __m512d y2 = _mm512_mul_pd(y, y);
        const __m512d ui3 = _mm512_mul_pd(_mm512_load_pd(tile.u + i), _mm512_mul_pd(y2, y));
        const __m512d dot = _mm512_fmadd_pd(ax, dx, _mm512_fmadd_pd(ay, dy, _mm512_mul_pd(az, dz)));
        const __m512d c5 = _mm512_mul_pd(_mm512_mul_pd(three, _mm512_mul_pd(dot, ui3)), y2);
        gwx = _mm512_fmadd_pd(ui3, dx, gwx);
        gwy = _mm512_fmadd_pd(ui3, dy, gwy);
        gwz = _mm512_fmadd_pd(ui3, dz, gwz);
        gxx = _mm512_fnmadd_pd(c5, dx, _mm512_fmadd_pd(ui3, ax, gxx));
        gxy = _mm512_fnmadd_pd(c5, dy, _mm512_fmadd_pd(ui3, ay, gxy));
        gxz = _mm512_fnmadd_pd(c5, dz, _mm512_fmadd_pd(ui3, az, gxz));
      }
      gw(s, 0) += hsum(gwx);
      gw(s, 1) += hsum(gwy);
      gw(s, 2) += hsum(gwz);
      gx(s, 0) += hsum(gxx);
      gx(s, 1) += hsum(gxy);
      gx(s, 2) += hsum(gxz);
#else
      const double cx = src.positions(s, 0), cy = src.positions(s, 1), cz = src.positions(s, 2);
      const double ax = src.weights(s, 0), ay = src.weights(s, 1), az = src.weights(s, 2);
      double gwx = 0, gwy = 0, gwz = 0, gxx = 0, gxy = 0, gxz = 0;
#pragma omp simd reduction(+ : gwx, gwy, gwz, gxx, gxy, gxz)
      for (int i = 0; i < n; ++i) {
        const double dx = cx - tile.x[i], dy = cy - tile.y[i], dz = cz - tile.z[i];
        const double r2 = std::max(dx * dx + dy * dy + dz * dz, eps2);
        const double ui3 = tile.u[i] / (r2 * std::sqrt(r2));
        const double dot = ax * dx + ay * dy + az * dz;
        const double c5 = 3.0 * dot * ui3 / r2;
        gwx += ui3 * dx;
        gwy += ui3 * dy;
        gwz += ui3 * dz;
        gxx += ui3 * ax - c5 * dx;
        gxy += ui3 * ay - c5 * dy;
        gxz += ui3 * az - c5 * dz;
      }
      gw(s, 0) += gwx;
      gw(s, 1) += gwy;
      gw(s, 2) += gwz;
      gx(s, 0) += gxx;
      gx(s, 1) += gxy;
      gx(s, 2) += gxz;
#endif
    }
  }
}

void add_area_vector_grad(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& g, VertexGradient& out,
                          const Face& f) {
  out.row(f[0]) += (0.5 * (b - c).cross(g)).transpose();
  out.row(f[1]) += (0.5 * (c - a).cross(g)).transpose();
  out.row(f[2]) += (0.5 * (a - b).cross(g)).transpose();
}

}  // namespace

Eigen::VectorXd winding_occupancy(const QuadratureSources& sources, const Points& points,
                                  std::vector<std::uint8_t>* flagged) {
  Eigen::VectorXd out(points.rows());
  if (flagged) {
    flagged->assign(static_cast<std::size_t>(points.rows()), 0);
    forward_kernel<true>(sources, points, out.data(), flagged->data());
  } else {
    forward_kernel<false>(sources, points, out.data(), nullptr);
  }
  return out;
}

Eigen::VectorXd occupancy_facet(const TriMesh& mesh, const Points& points, std::vector<std::uint8_t>* flagged) {
  return winding_occupancy(quadrature_sources(mesh, Quadrature::facet), points, flagged);
}

Eigen::VectorXd occupancy_vertex(const TriMesh& mesh, const Points& points, std::vector<std::uint8_t>* flagged) {
  return winding_occupancy(quadrature_sources(mesh, Quadrature::vertex), points, flagged);
}

double smooth_occupancy(double raw, double beta) { return 0.5 * (1.0 + std::tanh(beta * (raw - 0.5))); }

Eigen::VectorXd smooth_occupancy(const Eigen::VectorXd& raw, double beta) {
  return raw.unaryExpr([beta](double x) { return smooth_occupancy(x, beta); });
}

double smooth_occupancy_slope(double raw, double beta) {
  const double t = std::tanh(beta * (raw - 0.5));
  return 0.5 * beta * (1.0 - t) * (1.0 + t);
}

OccupancyResult occupancy(const TriMesh& mesh, const Points& points, double beta, Quadrature q) {
  if (!(beta > 0)) throw ValidationError("occupancy: beta must be positive");
  OccupancyResult r;
  r.beta = beta;
  r.raw = winding_occupancy(quadrature_sources(mesh, q), points, &r.flagged);
  r.smooth = smooth_occupancy(r.raw, beta);
  r.num_flagged = static_cast<std::size_t>(std::count(r.flagged.begin(), r.flagged.end(), 1));
  return r;
}

VertexGradient chain_source_gradient(const TriMesh& mesh, Quadrature q, bool frozen_geometry,
                                     const Points& grad_weights, const Points& grad_positions) {
  const auto nv = static_cast<Eigen::Index>(mesh.num_vertices());
  VertexGradient out = VertexGradient::Zero(nv, 3);
  const auto& faces = mesh.faces();
  if (q == Quadrature::facet) {
    for (std::size_t f = 0; f < faces.size(); ++f) {
      const Face& t = faces[f];
      const auto row = static_cast<Eigen::Index>(f);
      const Eigen::RowVector3d gc = grad_positions.row(row) / 3.0;
      for (int k = 0; k < 3; ++k) out.row(t[k]) += gc;
      if (!frozen_geometry) {
        add_area_vector_grad(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]),
                             grad_weights.row(row).transpose(), out, t);
      }
    }
    return out;
  }

  out = grad_positions;
  if (frozen_geometry) return out;
  // w_V = (M_V / |M_V|) * A_V with M_V = sum of incident area vectors, A_V = sum |N_F| / 3.
  const Points& N = mesh.face_area_vectors();
  Points M = Points::Zero(nv, 3);
  for (std::size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k) M.row(faces[f][k]) += N.row(static_cast<Eigen::Index>(f));
  Points gM(nv, 3);
  Eigen::VectorXd gA(nv);
  const auto& dual = mesh.vertex_dual_areas();
  for (Eigen::Index v = 0; v < nv; ++v) {
    const Vec3 m = M.row(v).transpose();
    const double len = m.norm();
    const Vec3 g = grad_weights.row(v).transpose();
    if (len > 0) {
      const Vec3 nh = m / len;
      gM.row(v) = (dual(v) * (g - nh * nh.dot(g)) / len).transpose();
      gA(v) = nh.dot(g);
    } else {
      gM.row(v).setZero();
      gA(v) = 0.0;
    }
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& t = faces[f];
    const auto row = static_cast<Eigen::Index>(f);
    const Vec3 nf = N.row(row).transpose();
    const double len = nf.norm();
    Vec3 g = Vec3::Zero();
    for (int k = 0; k < 3; ++k) {
      g += gM.row(t[k]).transpose();
      if (len > 0) g += gA(t[k]) * nf / (3.0 * len);
    }
    add_area_vector_grad(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]), g, out, t);
  }
  return out;
}

VertexGradient occupancy_gradient(const TriMesh& mesh, const Points& points, const Eigen::VectorXd& upstream,
                                  const OccupancyGradientOptions& options) {
  if (upstream.size() != points.rows()) throw ValidationError("occupancy_gradient: upstream length mismatch");
  // Points with zero sensitivity contribute nothing; drop them before the O(P S) sweep.
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    if (upstream(i) != 0.0) keep.push_back(i);
  Points pts(static_cast<Eigen::Index>(keep.size()), 3);
  Eigen::VectorXd u(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    pts.row(static_cast<Eigen::Index>(k)) = points.row(keep[k]);
    u(static_cast<Eigen::Index>(k)) = kInv4Pi * upstream(keep[k]);
  }
  const auto src = quadrature_sources(mesh, options.quadrature);
  Points gw, gx;
  backward_kernel(src, pts, u, gw, gx);
  return chain_source_gradient(mesh, options.quadrature, options.frozen_geometry, gw, gx);
}

}  // namespace ghd
