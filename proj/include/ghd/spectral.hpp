#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "ghd/mesh.hpp"

namespace ghd {

enum class LaplacianKind { unweighted, inv_distance, cotangent, mixed };

LaplacianKind parse_laplacian_kind(const std::string& name);
const char* laplacian_kind_name(LaplacianKind kind);

using SparseMatrix = Eigen::SparseMatrix<double>;

/// L = D - W over mesh edges. Symmetric, zero row sums.
struct GraphLaplacian {
  SparseMatrix matrix;
  LaplacianKind kind = LaplacianKind::unweighted;
  double lambda_norm = 0.0;
  double lambda_unw = 0.0;

  Eigen::Index size() const { return matrix.rows(); }
};

struct LaplacianOptions {
  LaplacianKind kind = LaplacianKind::mixed;
  double lambda_norm = 0.1;
  double lambda_unw = 0.05;
  /// Rescale the mesh to unit bounding-box diagonal before computing inverse-distance weights.
  bool normalize_scale = true;
};

GraphLaplacian build_laplacian(const TriMesh& mesh, const LaplacianOptions& options = {});

/// Laplacian of an arbitrary weighted graph. Edges must be distinct with i != j.
GraphLaplacian laplacian_from_edges(Eigen::Index n, const std::vector<Edge>& edges, const std::vector<double>& weights,
                                    LaplacianKind kind = LaplacianKind::unweighted);

/// Off-diagonal cotangent weights (cot a + cot b)/2 keyed by edge; boundary edges use one angle.
std::vector<std::pair<Edge, double>> cotangent_weights(const TriMesh& mesh);

/// Low-frequency eigenbasis: columns ascend by eigenvalue.
struct GhdBasis {
  Eigen::MatrixXd modes;  ///< n x m
  Eigen::VectorXd eigenvalues;
  LaplacianKind kind = LaplacianKind::mixed;
  double lambda_norm = 0.0;
  double lambda_unw = 0.0;

  Eigen::Index num_vertices() const { return modes.rows(); }
  Eigen::Index num_modes() const { return modes.cols(); }
};

/// Bases up to this size use a dense solve; larger ones use shift-invert subspace iteration.
inline constexpr Eigen::Index kDenseEigenLimit = 3000;

enum class EigenMethod { automatic, dense, iterative };

GhdBasis ghd_basis(const GraphLaplacian& laplacian, Eigen::Index m, EigenMethod method = EigenMethod::automatic);

/// Laplacian and basis together on a canonical mesh.
GhdBasis ghd_basis(const TriMesh& mesh, Eigen::Index m, const LaplacianOptions& options = {});

/// Max |U^T U - I|.
double orthonormality_error(const GhdBasis& basis);
/// Per-mode ||L u - lambda u|| / max(1, lambda).
Eigen::VectorXd eigen_residuals(const GraphLaplacian& laplacian, const GhdBasis& basis);

/// Coefficients U^T f. f is n x c, result m x c.
Eigen::MatrixXd gft_forward(const GhdBasis& basis, const Eigen::MatrixXd& f);
/// U phi.
Eigen::MatrixXd gft_inverse(const GhdBasis& basis, const Eigen::MatrixXd& coeffs);

/// Per-axis coefficients, m x 3.
using GhdCoefficients = Eigen::Matrix<double, Eigen::Dynamic, 3>;

/// X = X0 + U Phi on the canonical connectivity.
TriMesh apply_ghd(const TriMesh& canonical, const GhdBasis& basis, const GhdCoefficients& coeffs);

/// JSON header plus little-endian float64 column-major payload next to it (`<stem>.bin`).
void save_basis(const GhdBasis& basis, const std::filesystem::path& header_path);
GhdBasis load_basis(const std::filesystem::path& header_path);

}  // namespace ghd
