#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "ghd/dvs.hpp"
#include "ghd/mesh.hpp"
#include "ghd/spectral.hpp"
#include "ghd/volume.hpp"

namespace ghd {

// ---------------------------------------------------------------------------
// Overlap

/// 2 sum(o y) / (sum o + sum y). Both sums zero gives 1 and sets `empty`.
double soft_dice(const Eigen::VectorXd& occ, const std::vector<std::uint8_t>& labels, bool* empty = nullptr);
/// d Dice / d occ_i.
Eigen::VectorXd soft_dice_gradient(const Eigen::VectorXd& occ, const std::vector<std::uint8_t>& labels);

// ---------------------------------------------------------------------------
// Surface distances

inline constexpr std::size_t kDefaultSurfaceSamples = 10000;

/// Area-uniform random points on the surface.
Points sample_surface(const TriMesh& mesh, std::size_t n, std::uint64_t seed);

/// Mean squared nearest distance A->B plus B->A (mm^2).
double chamfer_points(const Points& a, const Points& b);
/// Largest nearest distance in either direction (mm).
double hausdorff_points(const Points& a, const Points& b);

struct SurfaceDistances {
  double chamfer = 0.0;
  double hausdorff = 0.0;
};

/// Both metrics from one pair of sample sets drawn with the same seed.
SurfaceDistances surface_distances(const TriMesh& a, const TriMesh& b, std::size_t n_samples = kDefaultSurfaceSamples,
                                   std::uint64_t seed = 0);
double chamfer(const TriMesh& a, const TriMesh& b, std::size_t n_samples = kDefaultSurfaceSamples,
               std::uint64_t seed = 0);
double hausdorff(const TriMesh& a, const TriMesh& b, std::size_t n_samples = kDefaultSurfaceSamples,
                 std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Wall thickness

inline constexpr double kNoThickness = std::numeric_limits<double>::infinity();

struct ThicknessResult {
  std::vector<int> vertices;    ///< queried vertex ids
  Eigen::VectorXd values;       ///< mm; kNoThickness when no opposite-facing face exists
  std::vector<int> faces;       ///< minimizing face, -1 when flagged
  Points barycentric;           ///< closest point on that face
  std::size_t num_flagged = 0;
};

/// Closest point on triangle abc to p, as barycentric weights of (a, b, c).
Vec3 closest_point_barycentric(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Per-vertex distance to the best opposite-facing face under |q - p| + lambda_n |N_p + N_q|.
/// An empty `query` means every vertex.
ThicknessResult thickness(const TriMesh& mesh, const std::vector<int>& query = {}, double lambda_n = 1.0);

double silu(double x);
double silu_derivative(double x);

struct ThicknessLoss {
  double value = 0.0;
  VertexGradient gradient;  ///< empty unless requested
};

/// sum_q SiLU(t_min - t_q) over vertices thinner than t_min; thicker or flagged vertices add nothing.
ThicknessLoss thickness_loss(const TriMesh& mesh, double t_min, double lambda_n = 1.0, bool with_gradient = false);
ThicknessLoss thickness_loss(const TriMesh& mesh, const ThicknessResult& t, double t_min, bool with_gradient);

// ---------------------------------------------------------------------------
// Volume

/// (1/3) sum_F <N_F, c_F>. `closed` receives whether the value is origin independent.
double enclosed_volume(const TriMesh& mesh, bool* closed = nullptr);
VertexGradient enclosed_volume_gradient(const TriMesh& mesh);

/// sum_F <n_{t+1} - n_t, c_t> A_t + sum_F <n_t, c_{t+1} - c_t> A_t.
double volume_rate(const TriMesh& mesh_t, const TriMesh& mesh_t1);
/// Gradient of volume_rate with respect to the vertices of mesh_t1.
VertexGradient volume_rate_gradient(const TriMesh& mesh_t, const TriMesh& mesh_t1);

// ---------------------------------------------------------------------------
// Combined fitting objective

struct LossWeights {
  double lambda_th = 0.01;
  double t_min = 4.0;
  double lambda_n = 1.0;
  double lambda_vol = 0.0;
  double volume_target = 0.0;
  double lambda_inc = 0.0;
};

struct LossTerms {
  double total = 0.0;
  double dice = 0.0;        ///< soft Dice (not 1 - Dice)
  double thickness = 0.0;   ///< unweighted thickness loss
  double volume = 0.0;      ///< enclosed volume, mm^3
  double rate = 0.0;        ///< volume_rate against the reference mesh
};

struct LossEvaluation {
  LossTerms terms;
  VertexGradient gradient;
  std::size_t num_flagged_points = 0;
};

struct LossOptions {
  double beta = 10.0;
  LossWeights weights;
  Quadrature quadrature = Quadrature::facet;
  bool frozen_geometry = false;
  bool with_gradient = true;
  /// Reference for the incompressibility term; required when lambda_inc > 0.
  const TriMesh* rate_reference = nullptr;
};

/// (1 - Dice) + lambda_th Loss_th + lambda_vol (V - V*)^2 + lambda_inc rate^2.
LossEvaluation combined_loss(const TriMesh& mesh, const LabeledPoints& points, const LossOptions& options);

/// U^T G per axis.
GhdCoefficients coefficient_gradient(const GhdBasis& basis, const VertexGradient& vertex_gradient);

}  // namespace ghd
