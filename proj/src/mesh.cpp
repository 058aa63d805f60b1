#include "ghd/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace ghd {

FaceGeometry face_geometry(const Points& vertices, const std::vector<Face>& faces) {
  const auto nf = static_cast<Eigen::Index>(faces.size());
  FaceGeometry g;
  g.normals.setZero(nf, 3);
  g.areas.setZero(nf);
  g.centroids.setZero(nf, 3);
  g.area_vectors.setZero(nf, 3);
  g.degenerate.assign(faces.size(), 0);
  for (Eigen::Index f = 0; f < nf; ++f) {
    const Face& face = faces[static_cast<std::size_t>(f)];
    const Vec3 a = vertices.row(face[0]).transpose();
    const Vec3 b = vertices.row(face[1]).transpose();
    const Vec3 c = vertices.row(face[2]).transpose();
    const Vec3 cross = (b - a).cross(c - a);
    const double len = cross.norm();
    const double scale = std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
    g.centroids.row(f) = ((a + b + c) / 3.0).transpose();
    if (!(len > kDegenerateAreaRatio * scale)) {
      g.degenerate[static_cast<std::size_t>(f)] = 1;
      continue;
    }
    g.area_vectors.row(f) = (0.5 * cross).transpose();
    g.areas(f) = 0.5 * len;
    g.normals.row(f) = (cross / len).transpose();
  }
  return g;
}

TriMesh::TriMesh() : faces_(std::make_shared<const std::vector<Face>>()) { compute_caches(); }

TriMesh::TriMesh(Points vertices, std::vector<Face> faces) : vertices_(std::move(vertices)) {
  const auto n = static_cast<std::int64_t>(vertices_.rows());
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (auto idx : face) {
      if (idx < 0 || idx >= n) {
        std::ostringstream os;
        os << "face " << f << " references vertex " << idx << " outside [0, " << n << ")";
        throw ValidationError(os.str());
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      std::ostringstream os;
      os << "face " << f << " repeats a vertex";
      throw ValidationError(os.str());
    }
  }
  for (Eigen::Index i = 0; i < vertices_.rows(); ++i) {
    if (!vertices_.row(i).allFinite()) throw ValidationError("vertex " + std::to_string(i) + " is not finite");
  }
  faces_ = std::make_shared<const std::vector<Face>>(std::move(faces));
  compute_caches();
}

TriMesh TriMesh::with_vertices(Points vertices) const {
  if (vertices.rows() != vertices_.rows()) {
    throw ValidationError("with_vertices: vertex count changed from " + std::to_string(vertices_.rows()) +
                          " to " + std::to_string(vertices.rows()));
  }
  TriMesh out;
  out.vertices_ = std::move(vertices);
  out.faces_ = faces_;
  out.compute_caches();
  return out;
}

void TriMesh::compute_caches() {
  const auto& faces = *faces_;
  geometry_ = face_geometry(vertices_, faces);
  const auto n = vertices_.rows();
  dual_areas_.setZero(n);
  Points summed = Points::Zero(n, 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto fi = static_cast<Eigen::Index>(f);
    const double third = geometry_.areas(fi) / 3.0;
    for (auto v : faces[f]) {
      dual_areas_(v) += third;
      summed.row(v) += geometry_.area_vectors.row(fi);
    }
  }
  vertex_normals_.setZero(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double len = summed.row(i).norm();
    if (len > 0.0) vertex_normals_.row(i) = summed.row(i) / len;
  }
}

std::size_t TriMesh::num_degenerate_faces() const {
  return static_cast<std::size_t>(std::count(geometry_.degenerate.begin(), geometry_.degenerate.end(), 1));
}

bool TriMesh::is_closed() const {
  if (faces_->empty()) return false;
  std::map<std::pair<std::int32_t, std::int32_t>, int> directed;
  for (const Face& f : *faces_) {
    for (int k = 0; k < 3; ++k) {
      auto key = std::make_pair(f[k], f[(k + 1) % 3]);
      if (++directed[key] > 1) return false;
    }
  }
  for (const auto& [key, count] : directed) {
    if (directed.find({key.second, key.first}) == directed.end()) return false;
  }
  return true;
}

std::vector<Edge> TriMesh::edges() const {
  std::vector<Edge> out;
  out.reserve(faces_->size() * 3);
  for (const Face& f : *faces_) {
    for (int k = 0; k < 3; ++k) {
      auto a = f[k], b = f[(k + 1) % 3];
      out.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::pair<Vec3, Vec3> TriMesh::bounding_box() const {
  if (vertices_.rows() == 0) return {Vec3::Zero(), Vec3::Zero()};
  return {vertices_.colwise().minCoeff().transpose(), vertices_.colwise().maxCoeff().transpose()};
}

double TriMesh::bounding_box_diagonal() const {
  auto [lo, hi] = bounding_box();
  return (hi - lo).norm();
}

TriMesh TriMesh::flipped() const {
  std::vector<Face> faces = *faces_;
  for (Face& f : faces) std::swap(f[1], f[2]);
  return TriMesh(vertices_, std::move(faces));
}

TriMesh TriMesh::transformed(const Mat3& linear, const Vec3& translation) const {
  Points v = (vertices_ * linear.transpose()).rowwise() + translation.transpose();
  std::vector<Face> faces = *faces_;
  if (linear.determinant() < 0.0) {
    for (Face& f : faces) std::swap(f[1], f[2]);
  }
  return TriMesh(std::move(v), std::move(faces));
}

TriMesh concatenate(const TriMesh& a, const TriMesh& b) {
  Points v(a.vertices().rows() + b.vertices().rows(), 3);
  v << a.vertices(), b.vertices();
  std::vector<Face> faces = a.faces();
  const auto offset = static_cast<std::int32_t>(a.num_vertices());
  for (Face f : b.faces()) {
    for (auto& idx : f) idx += offset;
    faces.push_back(f);
  }
  return TriMesh(std::move(v), std::move(faces));
}

Eigen::VectorXd vertex_dual_areas(const TriMesh& mesh) { return mesh.vertex_dual_areas(); }

long euler_characteristic(const TriMesh& mesh) {
  return static_cast<long>(mesh.num_vertices()) - static_cast<long>(mesh.edges().size()) +
         static_cast<long>(mesh.num_faces());
}

double vertex_diameter(const TriMesh& mesh) {
  const Points& v = mesh.vertices();
  double best = 0.0;
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < v.rows(); ++j) best = std::max(best, (v.row(i) - v.row(j)).squaredNorm());
  }
  return std::sqrt(best);
}

std::array<double, 3> triangle_angles(const Vec3& a, const Vec3& b, const Vec3& c) {
  auto angle = [](const Vec3& p, const Vec3& q, const Vec3& r) {
    const Vec3 u = q - p;
    const Vec3 w = r - p;
    return std::atan2(u.cross(w).norm(), u.dot(w));
  };
  return {angle(a, b, c), angle(b, c, a), angle(c, a, b)};
}

MeshQualityReport mesh_quality(const TriMesh& mesh) {
  MeshQualityReport report;
  report.num_degenerate_faces = mesh.num_degenerate_faces();
  if (mesh.num_faces() == 0) return report;
  constexpr double lo = kGoodAngleMinDeg * std::numbers::pi / 180.0;
  constexpr double hi = kGoodAngleMaxDeg * std::numbers::pi / 180.0;
  // Slack absorbs atan2 round-off for angles sitting exactly on a threshold.
  constexpr double slack = 1e-12;
  std::size_t good = 0;
  double min_angle = std::numbers::pi, max_angle = 0.0;
  const auto& faces = mesh.faces();
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const auto angles = triangle_angles(mesh.vertex(faces[f][0]), mesh.vertex(faces[f][1]), mesh.vertex(faces[f][2]));
    bool ok = mesh.degenerate_faces()[f] == 0;
    for (double t : angles) {
      min_angle = std::min(min_angle, t);
      max_angle = std::max(max_angle, t);
      ok = ok && t >= lo - slack && t <= hi + slack;
    }
    good += ok ? 1 : 0;
  }
  report.good_angle_ratio = static_cast<double>(good) / static_cast<double>(faces.size());
  report.min_angle = min_angle * 180.0 / std::numbers::pi;
  report.max_angle = max_angle * 180.0 / std::numbers::pi;
  return report;
}

double good_angle_ratio(const TriMesh& mesh) { return mesh_quality(mesh).good_angle_ratio; }

}  // namespace ghd
