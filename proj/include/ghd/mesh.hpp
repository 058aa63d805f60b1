#pragma once

#include <cstddef>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ghd/types.hpp"

namespace ghd {

/// Per-face geometry. Normals are unit length, zero for degenerate faces.
struct FaceGeometry {
  Points normals;
  Eigen::VectorXd areas;
  Points centroids;
  /// Half the edge cross product: normal scaled by area.
  Points area_vectors;
  std::vector<std::uint8_t> degenerate;
};

/// Faces whose doubled area falls below this (relative to squared edge length) are degenerate.
inline constexpr double kDegenerateAreaRatio = 1e-14;

FaceGeometry face_geometry(const Points& vertices, const std::vector<Face>& faces);

/// Undirected edge with first < second.
using Edge = std::pair<std::int32_t, std::int32_t>;

/// Triangle mesh with eagerly computed geometry caches.
///
/// Immutable once built; deformation produces a new value through with_vertices(),
/// which shares the connectivity table.
class TriMesh {
 public:
  TriMesh();
  TriMesh(Points vertices, std::vector<Face> faces);

  /// Same connectivity, new positions. Row count must match.
  TriMesh with_vertices(Points vertices) const;

  std::size_t num_vertices() const { return static_cast<std::size_t>(vertices_.rows()); }
  std::size_t num_faces() const { return faces_->size(); }

  const Points& vertices() const { return vertices_; }
  Vec3 vertex(std::size_t i) const { return vertices_.row(static_cast<Eigen::Index>(i)).transpose(); }
  const std::vector<Face>& faces() const { return *faces_; }

  const FaceGeometry& geometry() const { return geometry_; }
  const Points& face_normals() const { return geometry_.normals; }
  const Eigen::VectorXd& face_areas() const { return geometry_.areas; }
  const Points& face_centroids() const { return geometry_.centroids; }
  const Points& face_area_vectors() const { return geometry_.area_vectors; }
  const std::vector<std::uint8_t>& degenerate_faces() const { return geometry_.degenerate; }
  std::size_t num_degenerate_faces() const;

  /// Barycentric dual area of each vertex.
  const Eigen::VectorXd& vertex_dual_areas() const { return dual_areas_; }
  /// Normalized sum of incident face area vectors; zero when that sum vanishes.
  const Points& vertex_normals() const { return vertex_normals_; }

  double total_area() const { return geometry_.areas.sum(); }

  /// Every undirected edge is used exactly once in each direction.
  bool is_closed() const;
  std::vector<Edge> edges() const;

  std::pair<Vec3, Vec3> bounding_box() const;
  double bounding_box_diagonal() const;

  /// All windings reversed.
  TriMesh flipped() const;
  /// x -> A x + t.
  TriMesh transformed(const Mat3& linear, const Vec3& translation) const;

 private:
  void compute_caches();

  Points vertices_;
  std::shared_ptr<const std::vector<Face>> faces_;
  FaceGeometry geometry_;
  Eigen::VectorXd dual_areas_;
  Points vertex_normals_;
};

/// Disjoint union; faces of b are re-indexed after a's vertices.
TriMesh concatenate(const TriMesh& a, const TriMesh& b);

/// Each vertex receives a third of the area of every incident face.
Eigen::VectorXd vertex_dual_areas(const TriMesh& mesh);

/// V - E + F.
long euler_characteristic(const TriMesh& mesh);

/// Largest distance between two vertices.
double vertex_diameter(const TriMesh& mesh);

struct MeshQualityReport {
  double good_angle_ratio = 0.0;
  double min_angle = 0.0;  ///< degrees
  double max_angle = 0.0;  ///< degrees
  std::size_t num_degenerate_faces = 0;
};

inline constexpr double kGoodAngleMinDeg = 30.0;
inline constexpr double kGoodAngleMaxDeg = 120.0;

/// Fraction of faces whose three interior angles lie in [30, 120] degrees inclusive.
double good_angle_ratio(const TriMesh& mesh);
MeshQualityReport mesh_quality(const TriMesh& mesh);

/// Interior angles (radians) of a triangle, in vertex order.
std::array<double, 3> triangle_angles(const Vec3& a, const Vec3& b, const Vec3& c);

}  // namespace ghd
