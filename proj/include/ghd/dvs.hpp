#pragma once

#include <vector>

#include "ghd/mesh.hpp"

namespace ghd {

/// Which surface samples carry the flux: face centroids or vertices.
enum class Quadrature { facet, vertex };

Quadrature parse_quadrature(const std::string& name);
const char* quadrature_name(Quadrature q);

/// Query points closer than this (mm) to a source have their distance clamped.
inline constexpr double kOccupancyClamp = 1e-9;

/// Source positions and their flux weights (normal times area), one row per source.
struct QuadratureSources {
  Points positions;
  Points weights;
};

QuadratureSources quadrature_sources(const TriMesh& mesh, Quadrature q);

/// Winding-number estimate (1/4pi) sum_s <w_s, (x_s - q)/|x_s - q|^3>.
/// When `flagged` is given it receives 1 for points within the clamp distance of a source.
Eigen::VectorXd winding_occupancy(const QuadratureSources& sources, const Points& points,
                                  std::vector<std::uint8_t>* flagged = nullptr);
Eigen::VectorXd occupancy_facet(const TriMesh& mesh, const Points& points, std::vector<std::uint8_t>* flagged = nullptr);
Eigen::VectorXd occupancy_vertex(const TriMesh& mesh, const Points& points,
                                 std::vector<std::uint8_t>* flagged = nullptr);

/// 0.5 (1 + tanh(beta (raw - 0.5))).
double smooth_occupancy(double raw, double beta);
Eigen::VectorXd smooth_occupancy(const Eigen::VectorXd& raw, double beta);
/// d smooth / d raw.
double smooth_occupancy_slope(double raw, double beta);

struct OccupancyResult {
  Eigen::VectorXd raw;
  Eigen::VectorXd smooth;
  double beta = 0.0;
  std::vector<std::uint8_t> flagged;
  std::size_t num_flagged = 0;
};

OccupancyResult occupancy(const TriMesh& mesh, const Points& points, double beta, Quadrature q = Quadrature::facet);

struct OccupancyGradientOptions {
  Quadrature quadrature = Quadrature::facet;
  /// Treat source weights (normals, areas) as constants; only source positions move.
  bool frozen_geometry = false;
};

/// sum_p upstream_p d raw(p) / d X.
VertexGradient occupancy_gradient(const TriMesh& mesh, const Points& points, const Eigen::VectorXd& upstream,
                                  const OccupancyGradientOptions& options = {});

/// Pull per-source gradients (w.r.t. weights and positions) back to the vertices.
VertexGradient chain_source_gradient(const TriMesh& mesh, Quadrature q, bool frozen_geometry,
                                     const Points& grad_weights, const Points& grad_positions);

}  // namespace ghd
