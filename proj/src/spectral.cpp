#include "ghd/spectral.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <Eigen/SparseCholesky>
#include <lapacke.h>

#include "json.hpp"

#include "ghd/log.hpp"

namespace ghd {

using json = nlohmann::json;

LaplacianKind parse_laplacian_kind(const std::string& name) {
  if (name == "unweighted") return LaplacianKind::unweighted;
  if (name == "inv_distance") return LaplacianKind::inv_distance;
  if (name == "cotangent") return LaplacianKind::cotangent;
  if (name == "mixed") return LaplacianKind::mixed;
  throw ValidationError("unknown Laplacian kind '" + name + "' (expected unweighted, inv_distance, cotangent or mixed)");
}

const char* laplacian_kind_name(LaplacianKind kind) {
  switch (kind) {
    case LaplacianKind::unweighted: return "unweighted";
    case LaplacianKind::inv_distance: return "inv_distance";
    case LaplacianKind::cotangent: return "cotangent";
    case LaplacianKind::mixed: return "mixed";
  }
  return "?";
}

namespace {

Edge make_edge(std::int32_t a, std::int32_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

SparseMatrix assemble(Eigen::Index n, const std::vector<Edge>& edges, const std::vector<double>& weights) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(edges.size() * 2 + static_cast<std::size_t>(n));
  std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto [i, j] = edges[e];
    const double w = weights[e];
    trip.emplace_back(i, j, -w);
    trip.emplace_back(j, i, -w);
    diag[static_cast<std::size_t>(i)] += w;
    diag[static_cast<std::size_t>(j)] += w;
  }
  for (Eigen::Index i = 0; i < n; ++i) trip.emplace_back(i, i, diag[static_cast<std::size_t>(i)]);
  SparseMatrix L(n, n);
  L.setFromTriplets(trip.begin(), trip.end());
  L.makeCompressed();
  return L;
}

std::vector<double> inv_distance_weights(const TriMesh& mesh, const std::vector<Edge>& edges, bool normalize) {
  const double diag = mesh.bounding_box_diagonal();
  const double scale = normalize && diag > 0 ? 1.0 / diag : 1.0;
  std::vector<double> w(edges.size());
  std::vector<Edge> coincident;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const double len = (mesh.vertex(edges[e].first) - mesh.vertex(edges[e].second)).norm() * scale;
    if (!(len > 1e-12)) coincident.push_back(edges[e]);
    w[e] = 1.0 / len;
  }
  if (!coincident.empty()) {
    std::ostringstream msg;
    msg << "inverse-distance Laplacian: " << coincident.size() << " edge(s) join coincident vertices:";
    for (std::size_t i = 0; i < std::min<std::size_t>(coincident.size(), 10); ++i)
      msg << " (" << coincident[i].first << "," << coincident[i].second << ")";
    throw ValidationError(msg.str());
  }
  return w;
}

}  // namespace

std::vector<std::pair<Edge, double>> cotangent_weights(const TriMesh& mesh) {
  std::map<Edge, std::pair<double, int>> acc;
  const auto& faces = mesh.faces();
  std::vector<std::size_t> degenerate;
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& t = faces[f];
    if (mesh.degenerate_faces()[f]) {
      degenerate.push_back(f);
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      const int i = t[(k + 1) % 3], j = t[(k + 2) % 3];
      const Vec3 e1 = mesh.vertex(i) - mesh.vertex(t[k]);
      const Vec3 e2 = mesh.vertex(j) - mesh.vertex(t[k]);
      const double cot = e1.dot(e2) / e1.cross(e2).norm();
      auto& slot = acc[make_edge(i, j)];
      slot.first += 0.5 * cot;
      slot.second += 1;
    }
  }
  if (!degenerate.empty()) {
    std::ostringstream msg;
    msg << "cotangent Laplacian: " << degenerate.size() << " degenerate face(s), first " << degenerate.front();
    throw ValidationError(msg.str());
  }
  std::vector<Edge> bad;
  std::vector<std::pair<Edge, double>> out;
  out.reserve(acc.size());
  for (const auto& [e, v] : acc) {
    if (v.second > 2) bad.push_back(e);
    out.emplace_back(e, v.first);
  }
  if (!bad.empty()) {
    std::ostringstream msg;
    msg << "cotangent Laplacian: " << bad.size() << " non-manifold edge(s):";
    for (std::size_t i = 0; i < std::min<std::size_t>(bad.size(), 20); ++i)
      msg << " (" << bad[i].first << "," << bad[i].second << ")";
    throw ValidationError(msg.str());
  }
  return out;
}

GraphLaplacian build_laplacian(const TriMesh& mesh, const LaplacianOptions& options) {
  const auto n = static_cast<Eigen::Index>(mesh.num_vertices());
  std::vector<Edge> edges;
  std::vector<double> w;
  if (options.kind == LaplacianKind::cotangent || options.kind == LaplacianKind::mixed) {
    for (const auto& [e, c] : cotangent_weights(mesh)) {
      edges.push_back(e);
      w.push_back(c);
    }
  } else {
    edges = mesh.edges();
    w.assign(edges.size(), 1.0);
  }
  if (options.kind == LaplacianKind::inv_distance) {
    w = inv_distance_weights(mesh, edges, options.normalize_scale);
  } else if (options.kind == LaplacianKind::mixed) {
    const auto wn = inv_distance_weights(mesh, edges, options.normalize_scale);
    for (std::size_t e = 0; e < w.size(); ++e) w[e] += options.lambda_norm * wn[e] + options.lambda_unw;
  }
  GraphLaplacian L;
  L.matrix = assemble(n, edges, w);
  L.kind = options.kind;
  if (options.kind == LaplacianKind::mixed) {
    L.lambda_norm = options.lambda_norm;
    L.lambda_unw = options.lambda_unw;
  }
  return L;
}

GraphLaplacian laplacian_from_edges(Eigen::Index n, const std::vector<Edge>& edges, const std::vector<double>& weights,
                                    LaplacianKind kind) {
  if (edges.size() != weights.size()) throw ValidationError("laplacian_from_edges: edge/weight count mismatch");
  std::vector<Edge> canon;
  canon.reserve(edges.size());
  for (const auto& [a, b] : edges) {
    if (a == b || a < 0 || b < 0 || a >= n || b >= n) throw ValidationError("laplacian_from_edges: invalid edge");
    canon.push_back(make_edge(a, b));
  }
  GraphLaplacian L;
  L.matrix = assemble(n, canon, weights);
  L.kind = kind;
  return L;
}

namespace {

void fix_signs(Eigen::MatrixXd& U) {
  for (Eigen::Index c = 0; c < U.cols(); ++c) {
    const double top = U.col(c).cwiseAbs().maxCoeff();
    Eigen::Index pick = 0;
    while (std::abs(U(pick, c)) < top * (1.0 - 1e-9)) ++pick;
    if (U(pick, c) < 0) U.col(c) *= -1.0;
  }
}

void dense_solve(const SparseMatrix& L, Eigen::Index m, Eigen::MatrixXd& U, Eigen::VectorXd& lambda) {
  const lapack_int n = static_cast<lapack_int>(L.rows());
  Eigen::MatrixXd A = Eigen::MatrixXd(L);
  Eigen::VectorXd w(n);
  U.resize(n, m);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(m));
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'U', n, A.data(), n, 0.0, 0.0, 1,
                                         static_cast<lapack_int>(m), LAPACKE_dlamch('S'), &found, w.data(), U.data(),
                                         n, support.data());
  if (info != 0 || found != m) {
    throw NumericalError("dense eigensolver failed (info " + std::to_string(info) + ", found " + std::to_string(found) +
                         " of " + std::to_string(m) + ")");
  }
  lambda = w.head(m);
}

void iterative_solve(const SparseMatrix& L, Eigen::Index m, Eigen::MatrixXd& U, Eigen::VectorXd& lambda) {
  const Eigen::Index n = L.rows();
  const Eigen::Index b = std::min(n, m + std::max<Eigen::Index>(8, m / 2));
  const double shift = 1e-6 * L.diagonal().cwiseAbs().maxCoeff();
  SparseMatrix S = L;
  for (Eigen::Index i = 0; i < n; ++i) S.coeffRef(i, i) += shift;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(S);
  if (ldlt.info() != Eigen::Success) throw NumericalError("iterative eigensolver: factorization failed");

  // Deterministic start: smooth coordinate-free vectors.
  Eigen::MatrixXd X(n, b);
  for (Eigen::Index c = 0; c < b; ++c)
    for (Eigen::Index i = 0; i < n; ++i) X(i, c) = std::cos(0.5 + 0.7548776662 * (c + 1) * (i + 1) + 0.1 * c);

  Eigen::VectorXd res(m);
  const int max_iter = 1000;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::MatrixXd Y = ldlt.solve(X);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Y);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, b);
    Eigen::MatrixXd LQ = L * Q;
    Eigen::MatrixXd H = Q.transpose() * LQ;
    H = 0.5 * (H + H.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    X = Q * es.eigenvectors();
    const Eigen::MatrixXd LX = LQ * es.eigenvectors();
    bool done = true;
    for (Eigen::Index c = 0; c < m; ++c) {
      const double th = es.eigenvalues()(c);
      res(c) = (LX.col(c) - th * X.col(c)).norm() / std::max(1.0, std::abs(th));
      done = done && res(c) <= 1e-10;
    }
    if (done) {
      U = X.leftCols(m);
      lambda = es.eigenvalues().head(m);
      log_debug("iterative eigensolver converged after ", it + 1, " iterations");
      return;
    }
  }
  std::ostringstream msg;
  msg << "iterative eigensolver did not converge in " << max_iter << " iterations; worst residual " << res.maxCoeff()
      << " at mode " << (std::max_element(res.data(), res.data() + m) - res.data()) + 1;
  throw NumericalError(msg.str());
}

}  // namespace

double orthonormality_error(const GhdBasis& basis) {
  const Eigen::MatrixXd G = basis.modes.transpose() * basis.modes;
  return (G - Eigen::MatrixXd::Identity(G.rows(), G.cols())).cwiseAbs().maxCoeff();
}

Eigen::VectorXd eigen_residuals(const GraphLaplacian& laplacian, const GhdBasis& basis) {
  const Eigen::MatrixXd LU = laplacian.matrix * basis.modes;
  Eigen::VectorXd r(basis.num_modes());
  for (Eigen::Index c = 0; c < r.size(); ++c) {
    const double lam = basis.eigenvalues(c);
    r(c) = (LU.col(c) - lam * basis.modes.col(c)).norm() / std::max(1.0, std::abs(lam));
  }
  return r;
}

GhdBasis ghd_basis(const GraphLaplacian& laplacian, Eigen::Index m, EigenMethod method) {
  const Eigen::Index n = laplacian.size();
  if (m < 1 || m > n) {
    throw ValidationError("ghd_basis: mode count " + std::to_string(m) + " outside [1, " + std::to_string(n) + "]");
  }
  GhdBasis basis;
  basis.kind = laplacian.kind;
  basis.lambda_norm = laplacian.lambda_norm;
  basis.lambda_unw = laplacian.lambda_unw;
  if (method == EigenMethod::automatic) method = n <= kDenseEigenLimit ? EigenMethod::dense : EigenMethod::iterative;
  if (method == EigenMethod::dense || m == n) {
    dense_solve(laplacian.matrix, m, basis.modes, basis.eigenvalues);
  } else {
    iterative_solve(laplacian.matrix, m, basis.modes, basis.eigenvalues);
  }
  const double scale = std::max(1.0, laplacian.matrix.diagonal().cwiseAbs().maxCoeff());
  for (Eigen::Index c = 0; c < m; ++c) {
    double& lam = basis.eigenvalues(c);
    if (lam < 0 && lam > -1e-12 * scale) lam = 0.0;
  }
  fix_signs(basis.modes);

  const double ortho = orthonormality_error(basis);
  const Eigen::VectorXd res = eigen_residuals(laplacian, basis);
  if (!(ortho <= 1e-8) || !(res.maxCoeff() <= 1e-6)) {
    std::ostringstream msg;
    msg << "ghd_basis: eigenpairs failed verification (orthonormality error " << ortho << ", worst residual "
        << res.maxCoeff() << ")";
    throw NumericalError(msg.str());
  }
  return basis;
}

GhdBasis ghd_basis(const TriMesh& mesh, Eigen::Index m, const LaplacianOptions& options) {
  return ghd_basis(build_laplacian(mesh, options), m);
}

Eigen::MatrixXd gft_forward(const GhdBasis& basis, const Eigen::MatrixXd& f) {
  if (f.rows() != basis.num_vertices()) {
    throw ValidationError("gft_forward: field has " + std::to_string(f.rows()) + " rows, basis has " +
                          std::to_string(basis.num_vertices()) + " vertices");
  }
  return basis.modes.transpose() * f;
}

Eigen::MatrixXd gft_inverse(const GhdBasis& basis, const Eigen::MatrixXd& coeffs) {
  if (coeffs.rows() != basis.num_modes()) {
    throw ValidationError("gft_inverse: " + std::to_string(coeffs.rows()) + " coefficient rows, basis has " +
                          std::to_string(basis.num_modes()) + " modes");
  }
  return basis.modes * coeffs;
}

TriMesh apply_ghd(const TriMesh& canonical, const GhdBasis& basis, const GhdCoefficients& coeffs) {
  if (static_cast<Eigen::Index>(canonical.num_vertices()) != basis.num_vertices()) {
    throw ValidationError("apply_ghd: mesh has " + std::to_string(canonical.num_vertices()) + " vertices, basis " +
                          std::to_string(basis.num_vertices()));
  }
  if (!coeffs.allFinite()) throw ValidationError("apply_ghd: non-finite coefficients");
  Points x = canonical.vertices() + gft_inverse(basis, coeffs);
  return canonical.with_vertices(std::move(x));
}

namespace {

std::filesystem::path basis_payload_path(const std::filesystem::path& header_path) {
  auto p = header_path;
  return p.replace_extension(".bin");
}

}  // namespace

void save_basis(const GhdBasis& basis, const std::filesystem::path& header_path) {
  static_assert(std::endian::native == std::endian::little, "basis payload assumes a little-endian host");
  const auto payload = basis_payload_path(header_path);
  json j;
  j["format"] = "ghd-basis";
  j["version"] = 1;
  j["n"] = basis.num_vertices();
  j["m"] = basis.num_modes();
  j["kind"] = laplacian_kind_name(basis.kind);
  j["lambda_norm"] = basis.lambda_norm;
  j["lambda_unw"] = basis.lambda_unw;
  j["eigenvalues"] = std::vector<double>(basis.eigenvalues.data(), basis.eigenvalues.data() + basis.num_modes());
  j["dtype"] = "f64";
  j["layout"] = "column-major";
  j["payload"] = payload.filename().string();
  std::ofstream h(header_path);
  if (!h) throw FormatError("cannot write " + header_path.string());
  h << j.dump(2) << "\n";
  std::ofstream out(payload, std::ios::binary);
  out.write(reinterpret_cast<const char*>(basis.modes.data()),
            static_cast<std::streamsize>(basis.modes.size() * sizeof(double)));
  if (!out) throw FormatError("cannot write " + payload.string());
}

GhdBasis load_basis(const std::filesystem::path& header_path) {
  std::ifstream h(header_path);
  if (!h) throw FormatError("cannot open " + header_path.string());
  GhdBasis basis;
  try {
    const json j = json::parse(h);
    if (j.at("format").get<std::string>() != "ghd-basis") throw FormatError("not a ghd-basis header");
    const auto n = j.at("n").get<Eigen::Index>();
    const auto m = j.at("m").get<Eigen::Index>();
    basis.kind = parse_laplacian_kind(j.at("kind").get<std::string>());
    basis.lambda_norm = j.at("lambda_norm").get<double>();
    basis.lambda_unw = j.at("lambda_unw").get<double>();
    const auto ev = j.at("eigenvalues").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(ev.size()) != m) throw FormatError("eigenvalue count does not match m");
    basis.eigenvalues = Eigen::Map<const Eigen::VectorXd>(ev.data(), m);
    const auto payload = header_path.parent_path() / j.at("payload").get<std::string>();
    std::ifstream in(payload, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open payload " + payload.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    const auto expected = static_cast<std::size_t>(n * m) * sizeof(double);
    if (bytes != expected) {
      throw FormatError("payload size mismatch: " + std::to_string(bytes) + " bytes, expected " +
                        std::to_string(expected));
    }
    in.seekg(0);
    basis.modes.resize(n, m);
    in.read(reinterpret_cast<char*>(basis.modes.data()), static_cast<std::streamsize>(expected));
  } catch (const json::exception& e) {
    throw FormatError(header_path.string() + ": " + e.what());
  }
  return basis;
}

}  // namespace ghd
