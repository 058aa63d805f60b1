#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "doctest.h"
#include "ghd/phantom.hpp"
#include "ghd/random.hpp"
#include "ghd/spectral.hpp"
#include "test_support.hpp"

using namespace ghd;

namespace {

/// Two triangles sharing edge (0,1); the apexes sit at +-h over its midpoint.
TriMesh kite(double h) {
  Points v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 0.5, h, 0, 0.5, -h, 0;
  return TriMesh(v, {{0, 1, 2}, {1, 0, 3}});
}

double angle_at(const Vec3& apex, const Vec3& p, const Vec3& q) {
  const Vec3 a = p - apex, b = q - apex;
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

double max_row_sum(const SparseMatrix& L) {
  Eigen::VectorXd s = L * Eigen::VectorXd::Ones(L.cols());
  return s.cwiseAbs().maxCoeff();
}

TriMesh small_shell(int resolution = 24) {
  ShellPhantomParams p;
  p.resolution = resolution;
  return make_shell_phantom(p);
}

}  // namespace

TEST_CASE("cotangent weights") {
  SUBCASE("two equilateral triangles") {
    auto m = kite(std::sqrt(3.0) / 2.0);
    auto L = build_laplacian(m, {LaplacianKind::cotangent, 0, 0, true});
    CHECK(-L.matrix.coeff(0, 1) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-12));
    // boundary edges see a single 60 degree angle
    CHECK(-L.matrix.coeff(0, 2) == doctest::Approx(0.5 / std::sqrt(3.0)).epsilon(1e-12));
  }

  SUBCASE("obtuse opposite angles give a negative weight") {
    auto m = kite(0.5 / std::tan(75.0 * std::numbers::pi / 180.0));
    const double a = angle_at(m.vertex(2), m.vertex(0), m.vertex(1));
    const double b = angle_at(m.vertex(3), m.vertex(0), m.vertex(1));
    CHECK(a * 180 / std::numbers::pi == doctest::Approx(150.0));
    const double hand = 0.5 * (std::cos(a) / std::sin(a) + std::cos(b) / std::sin(b));
    CHECK(hand == doctest::Approx(-std::sqrt(3.0)));
    auto L = build_laplacian(m, {LaplacianKind::cotangent, 0, 0, true});
    CHECK(-L.matrix.coeff(0, 1) == doctest::Approx(hand).epsilon(1e-10));
  }

  SUBCASE("non-manifold edge is listed") {
    Points v(5, 3);
    v << 0, 0, 0, 1, 0, 0, 0.5, 1, 0, 0.5, -1, 0, 0.5, 0, 1;
    TriMesh m(v, {{0, 1, 2}, {1, 0, 3}, {0, 1, 4}});
    CHECK_THROWS_WITH_AS(build_laplacian(m, {LaplacianKind::cotangent, 0, 0, true}), doctest::Contains("(0,1)"),
                         ValidationError);
    CHECK_NOTHROW(build_laplacian(m, {LaplacianKind::unweighted, 0, 0, true}));
  }
}

TEST_CASE("coincident vertices are rejected by the inverse-distance kind") {
  Points v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 0, 0;
  TriMesh m(v, {{0, 1, 2}, {1, 3, 2}});
  CHECK_THROWS_WITH_AS(build_laplacian(m, {LaplacianKind::inv_distance, 0, 0, true}), doctest::Contains("coincident"),
                       ValidationError);
}

TEST_CASE("Laplacian structure for every kind") {
  auto m = small_shell();
  for (auto kind : {LaplacianKind::unweighted, LaplacianKind::inv_distance, LaplacianKind::cotangent,
                    LaplacianKind::mixed}) {
    CAPTURE(laplacian_kind_name(kind));
    auto L = build_laplacian(m, {kind, 0.1, 0.05, true});
    const SparseMatrix& A = L.matrix;
    CHECK((SparseMatrix(A.transpose()) - A).norm() == 0.0);
    const double maxabs = Eigen::MatrixXd(A).cwiseAbs().maxCoeff();
    CHECK(max_row_sum(A) <= 1e-9 * maxabs);

    std::set<Edge> edges;
    for (auto e : m.edges()) edges.insert(e);
    int stray = 0;
    for (int k = 0; k < A.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(A, k); it; ++it)
        if (it.row() != it.col() && it.value() != 0.0)
          stray += !edges.count({std::min<int>(it.row(), it.col()), std::max<int>(it.row(), it.col())});
    CHECK(stray == 0);

    Rng rng(7);
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd x(A.rows());
      for (auto& xi : x) xi = rng.normal();
      CHECK(x.dot(A * x) >= -1e-9 * x.squaredNorm());
    }
  }
}

TEST_CASE("mixed Laplacian is the weighted sum of its parts") {
  auto m = small_shell();
  auto c = build_laplacian(m, {LaplacianKind::cotangent, 0, 0, true}).matrix;
  auto n = build_laplacian(m, {LaplacianKind::inv_distance, 0, 0, true}).matrix;
  auto u = build_laplacian(m, {LaplacianKind::unweighted, 0, 0, true}).matrix;
  auto mix = build_laplacian(m, {LaplacianKind::mixed, 0.1, 0.05, true}).matrix;
  CHECK((SparseMatrix(c + 0.1 * n + 0.05 * u) - mix).norm() <= 1e-12 * mix.norm());

  SUBCASE("scale normalization makes mixed weights scale-free") {
    auto big = m.transformed(10.0 * Mat3::Identity(), Vec3::Zero());
    auto mb = build_laplacian(big, {LaplacianKind::mixed, 0.1, 0.05, true}).matrix;
    CHECK((mb - mix).norm() <= 1e-9 * mix.norm());
    auto raw = build_laplacian(big, {LaplacianKind::inv_distance, 0, 0, false}).matrix;
    auto raw1 = build_laplacian(m, {LaplacianKind::inv_distance, 0, 0, false}).matrix;
    CHECK((10.0 * raw - raw1).norm() <= 1e-9 * raw1.norm());
  }
}

TEST_CASE("path graph eigenvalues") {
  auto L = laplacian_from_edges(3, {{0, 1}, {1, 2}}, {1.0, 1.0});
  auto b = ghd_basis(L, 3);
  CHECK(b.eigenvalues(0) == doctest::Approx(0.0));
  CHECK(b.eigenvalues(1) == doctest::Approx(1.0));
  CHECK(b.eigenvalues(2) == doctest::Approx(3.0));
  Eigen::Matrix3d dense;
  dense << 1, -1, 0, -1, 2, -1, 0, -1, 1;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(dense);
  CHECK((es.eigenvalues() - b.eigenvalues).norm() < 1e-12);
}

TEST_CASE("basis contracts") {
  auto m = small_shell();
  auto L = build_laplacian(m);
  const auto n = L.size();

  SUBCASE("single mode is the constant vector") {
    auto b = ghd_basis(L, 1);
    CHECK(std::abs(b.eigenvalues(0)) <= 1e-8);
    CHECK((b.modes.col(0).array() - 1.0 / std::sqrt(static_cast<double>(n))).abs().maxCoeff() <= 1e-8);
  }

  SUBCASE("orthonormal, ascending, small residual, signed") {
    auto b = ghd_basis(L, 36);
    CHECK(orthonormality_error(b) <= 1e-8);
    const auto r = eigen_residuals(L, b);
    CHECK(r.maxCoeff() <= 1e-6);
    for (Eigen::Index i = 0; i + 1 < 36; ++i) CHECK(b.eigenvalues(i) <= b.eigenvalues(i + 1) + 1e-12);
    CHECK(b.eigenvalues(0) >= 0.0);
    for (Eigen::Index c = 0; c < 36; ++c) {
      Eigen::Index at;
      b.modes.col(c).cwiseAbs().maxCoeff(&at);
      CHECK(b.modes(at, c) > 0);
    }
  }

  SUBCASE("mode count outside the valid range") {
    CHECK_THROWS_AS(ghd_basis(L, 0), ValidationError);
    CHECK_THROWS_AS(ghd_basis(L, n + 1), ValidationError);
  }
}

TEST_CASE("dense and iterative solvers span the same subspace") {
  auto m = make_icosphere(3, 5.0);
  auto L = build_laplacian(m, {LaplacianKind::unweighted, 0, 0, true});
  // 16 = 1 + 3 + 5 + 7 closes a degenerate eigenvalue cluster on the sphere
  auto d = ghd_basis(L, 16, EigenMethod::dense);
  auto it = ghd_basis(L, 16, EigenMethod::iterative);
  CHECK((d.eigenvalues - it.eigenvalues).cwiseAbs().maxCoeff() <= 1e-8);
  const Eigen::MatrixXd proj = d.modes * d.modes.transpose() - it.modes * it.modes.transpose();
  CHECK(proj.cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("large meshes use the iterative solver and pass verification") {
  auto m = make_icosphere(5, 10.0);
  REQUIRE(static_cast<Eigen::Index>(m.num_vertices()) > kDenseEigenLimit);
  auto L = build_laplacian(m);
  auto b = ghd_basis(L, 9);
  CHECK(orthonormality_error(b) <= 1e-8);
  CHECK(eigen_residuals(L, b).maxCoeff() <= 1e-6);
  CHECK(std::abs(b.eigenvalues(0)) <= 1e-8);
}

TEST_CASE("graph Fourier transform") {
  auto m = small_shell();
  auto b = ghd_basis(m, 16);
  const auto n = b.num_vertices();

  SUBCASE("basis column maps to a unit coefficient") {
    Eigen::MatrixXd f = b.modes.col(2);
    Eigen::MatrixXd c = gft_forward(b, f);
    Eigen::VectorXd e = Eigen::VectorXd::Zero(16);
    e(2) = 1.0;
    CHECK((c.col(0) - e).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((gft_inverse(b, c) - f).cwiseAbs().maxCoeff() <= 1e-9);
  }

  SUBCASE("constant field lives in mode 1") {
    Eigen::MatrixXd f = Eigen::MatrixXd::Constant(n, 1, 2.5);
    Eigen::MatrixXd c = gft_forward(b, f);
    CHECK(c.col(0).tail(15).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(c(0, 0) == doctest::Approx(2.5 * std::sqrt(static_cast<double>(n))));
  }

  SUBCASE("forward then inverse is a projection") {
    Rng rng(3);
    Eigen::MatrixXd f(n, 3);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    Eigen::MatrixXd p = gft_inverse(b, gft_forward(b, f));
    Eigen::MatrixXd pp = gft_inverse(b, gft_forward(b, p));
    CHECK((p - pp).cwiseAbs().maxCoeff() <= 1e-9);
  }

  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(gft_forward(b, Eigen::MatrixXd::Zero(n + 1, 1)), ValidationError);
    CHECK_THROWS_AS(gft_inverse(b, Eigen::MatrixXd::Zero(15, 1)), ValidationError);
  }
}

TEST_CASE("full basis reconstructs any field") {
  auto m = make_icosphere(1, 1.0);
  const auto n = static_cast<Eigen::Index>(m.num_vertices());
  auto b = ghd_basis(build_laplacian(m), n);
  Rng rng(9);
  Eigen::MatrixXd f(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) f(i) = rng.uniform(-1, 1);
  CHECK((gft_inverse(b, gft_forward(b, f)) - f).cwiseAbs().maxCoeff() <= 1e-6);
  // dense reconstruction from the explicit projector
  const Eigen::MatrixXd P = b.modes * b.modes.transpose();
  CHECK((P - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("apply_ghd") {
  auto m = make_icosphere(2, 4.0);
  auto b = ghd_basis(m, 16);
  const double rn = std::sqrt(static_cast<double>(m.num_vertices()));

  GhdCoefficients zero = GhdCoefficients::Zero(16, 3);
  CHECK((apply_ghd(m, b, zero).vertices() - m.vertices()).cwiseAbs().maxCoeff() <= 1e-12);

  GhdCoefficients shift = zero;
  shift(0, 0) = 1.75 * rn;
  auto moved = apply_ghd(m, b, shift);
  CHECK(((moved.vertices() - m.vertices()).rowwise() - Eigen::RowVector3d(1.75, 0, 0)).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(moved.faces() == m.faces());

  Rng rng(1);
  GhdCoefficients p1(16, 3), p2(16, 3);
  for (Eigen::Index i = 0; i < p1.size(); ++i) {
    p1.data()[i] = 0.1 * rng.normal();
    p2.data()[i] = 0.1 * rng.normal();
  }
  const Points lhs = apply_ghd(m, b, p1 + p2).vertices();
  const Points rhs = apply_ghd(m, b, p1).vertices() + apply_ghd(m, b, p2).vertices() - m.vertices();
  CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(apply_ghd(make_icosphere(1, 1.0), b, zero), ValidationError);
  CHECK_THROWS_AS(apply_ghd(m, b, GhdCoefficients::Zero(15, 3)), ValidationError);
}

TEST_CASE("low-mode perturbations keep the mesh quality") {
  auto m = make_shell_phantom({});
  auto b = ghd_basis(m, 16);
  const double diam = vertex_diameter(m);
  const double gar = good_angle_ratio(m);
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    GhdCoefficients phi(16, 3);
    for (Eigen::Index i = 0; i < phi.size(); ++i) phi.data()[i] = rng.normal();
    phi.row(0).setZero();
    Points disp = gft_inverse(b, phi);
    const double scale = 0.05 * diam / disp.rowwise().norm().maxCoeff();
    auto out = apply_ghd(m, b, phi * scale);
    CHECK(std::abs(good_angle_ratio(out) - gar) < 0.05);
  }
}

TEST_CASE("basis file round trip") {
  const auto dir = testing::scratch_dir("basis_io");
  auto b = ghd_basis(small_shell(), 9);
  save_basis(b, dir / "u.json");
  auto back = load_basis(dir / "u.json");
  CHECK(back.modes == b.modes);
  CHECK(back.eigenvalues == b.eigenvalues);
  CHECK(back.kind == b.kind);
  CHECK(back.lambda_norm == b.lambda_norm);
  std::filesystem::resize_file(dir / "u.bin", 16);
  CHECK_THROWS_AS(load_basis(dir / "u.json"), FormatError);
}
