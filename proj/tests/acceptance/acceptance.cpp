// Acceptance suite: one PASS/FAIL line per criterion.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "ghd/dvs.hpp"
#include "ghd/fit.hpp"
#include "ghd/log.hpp"
#include "ghd/losses.hpp"
#include "ghd/phantom.hpp"
#include "ghd/random.hpp"
#include "ghd/spectral.hpp"
#include "ghd/volume.hpp"

using namespace ghd;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

/// Exhaustive point-to-mesh distance, used to drop near-surface points.
double distance_to_mesh(const TriMesh& m, const Vec3& p) {
  double best = INFINITY;
  for (const Face& f : m.faces()) {
    const Vec3 a = m.vertex(f[0]), b = m.vertex(f[1]), c = m.vertex(f[2]);
    const Vec3 w = closest_point_barycentric(p, a, b, c);
    best = std::min(best, (p - (w(0) * a + w(1) * b + w(2) * c)).norm());
  }
  return best;
}

double mean_edge_length(const TriMesh& m) {
  double s = 0.0;
  for (const Face& f : m.faces())
    for (int k = 0; k < 3; ++k) s += (m.vertex(f[k]) - m.vertex(f[(k + 1) % 3])).norm();
  return s / (3.0 * static_cast<double>(m.num_faces()));
}

VertexGradient central_difference(const TriMesh& m, const std::function<double(const TriMesh&)>& f, double h) {
  VertexGradient g(static_cast<Eigen::Index>(m.num_vertices()), 3);
  for (Eigen::Index v = 0; v < g.rows(); ++v)
    for (int d = 0; d < 3; ++d) {
      Points xp = m.vertices(), xm = m.vertices();
      xp(v, d) += h;
      xm(v, d) -= h;
      g(v, d) = (f(m.with_vertices(xp)) - f(m.with_vertices(xm))) / (2 * h);
    }
  return g;
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / b.cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Shared synthetic fitting task

const ShellPhantomParams kShell{};
constexpr double kVoxel = 0.5;
constexpr std::uint64_t kSeed = 20240;

struct ShellTask {
  TriMesh canonical;
  TriMesh target;
  LabelVolume dense;
  SliceStack slices;
};

/// Canonical shell, and a target displaced along modes 2..16 to a peak of 10% of the diameter.
const ShellTask& shell_task() {
  static const ShellTask task = [] {
    ShellTask t;
    t.canonical = make_shell_phantom(kShell);
    const GhdBasis basis = ghd_basis(t.canonical, 16, LaplacianOptions{});
    Rng rng(kSeed);
    GhdCoefficients phi = GhdCoefficients::Zero(16, 3);
    for (Eigen::Index i = 1; i < 16; ++i)
      for (int d = 0; d < 3; ++d) phi(i, d) = rng.normal();
    const double peak = (basis.modes * phi).rowwise().norm().maxCoeff();
    phi *= 0.1 * vertex_diameter(t.canonical) / peak;
    t.target = apply_ghd(t.canonical, basis, phi);
    t.dense = voxelize_oracle(t.target, grid_covering(t.target, kVoxel, 4 * kVoxel));

    // five z planes evenly spread over 10%..90% of the labeled extent
    int kmin = t.dense.grid.dims[2], kmax = -1;
    for (int k = 0; k < t.dense.grid.dims[2]; ++k)
      for (int j = 0; j < t.dense.grid.dims[1]; ++j)
        for (int i = 0; i < t.dense.grid.dims[0]; ++i)
          if (t.dense.at(i, j, k)) {
            kmin = std::min(kmin, k);
            kmax = std::max(kmax, k);
          }
    std::vector<int> idx;
    for (int s = 0; s < 5; ++s)
      idx.push_back(static_cast<int>(std::lround(kmin + (kmax - kmin) * (0.1 + 0.2 * s))));
    t.slices = extract_slices(t.dense, Axis::z, idx);
    return t;
  }();
  return task;
}

/// Fitting settings shared by the phantom criteria.
FitConfig fit_config() {
  FitConfig c;
  c.seed = kSeed;
  c.beta_end = 100.0;
  c.weights.lambda_th = 0.0;
  return c;
}

struct FitRun {
  FitResult result;
  double seconds = 0.0;
};

FitRun run_dense(const FitConfig& c) {
  const auto t0 = Clock::now();
  FitRun r{fit_ghd(shell_task().canonical, shell_task().dense, c), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

FitRun run_sparse(const FitConfig& c) {
  const auto t0 = Clock::now();
  FitRun r{fit_ghd(shell_task().canonical, shell_task().slices, c), 0.0};
  r.seconds = seconds_since(t0);
  return r;
}

std::map<int, FitRun> g_runs;  // first runs of criteria 5 and 6, reused by 10

// ---------------------------------------------------------------------------
// Criteria

Outcome criterion_1() {
  Outcome o;
  const auto t0 = Clock::now();
  const std::vector<std::pair<std::string, TriMesh>> meshes = {{"icosphere-3", make_icosphere(3, 10.0)},
                                                               {"shell", make_shell_phantom(kShell)}};
  std::uint64_t seed = 1;
  for (const auto& [name, m] : meshes) {
    auto [lo, hi] = m.bounding_box();
    const Vec3 pad = 0.1 * (hi - lo);
    Rng rng(seed++);
    Points pts(10000, 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      for (int d = 0; d < 3; ++d) pts(i, d) = rng.uniform(lo(d) - pad(d), hi(d) + pad(d));
    const double h = mean_edge_length(m);
    const Eigen::VectorXd raw = occupancy_facet(m, pts);
    const auto oracle = inside_oracle(m, pts);
    std::size_t kept = 0, agree = 0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      if (distance_to_mesh(m, pts.row(i).transpose()) <= h) continue;
      ++kept;
      agree += (raw(i) > 0.5) == (oracle[static_cast<std::size_t>(i)] != 0);
    }
    const double rate = static_cast<double>(agree) / static_cast<double>(kept);
    o.require(rate >= 0.999, name + " agreement " + fmt(100 * rate, 6) + "% of " + std::to_string(kept));
  }
  const double s = seconds_since(t0);
  o.require(s <= 30.0, "runtime " + fmt(s, 3) + " s");
  return o;
}

Outcome criterion_2() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst_occ = 0.0, worst_loss = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    TriMesh m = make_icosphere(1, 3.0);
    Points v = m.vertices();
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] += 0.2 * rng.normal();
    m = m.with_vertices(v);
    Points pts(6, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rng.uniform(-5.0, 5.0);
    Eigen::VectorXd u(6);
    for (Eigen::Index i = 0; i < 6; ++i) u(i) = rng.normal();
    for (Quadrature q : {Quadrature::facet, Quadrature::vertex}) {
      const auto an = occupancy_gradient(m, pts, u, {q, false});
      const auto fd = central_difference(
          m, [&](const TriMesh& x) { return u.dot(winding_occupancy(quadrature_sources(x, q), pts)); }, 1e-4);
      worst_occ = std::max(worst_occ, relative_error(an, fd));
    }
  }
  o.require(worst_occ <= 1e-4, "occupancy max rel err " + fmt(worst_occ, 3));

  ShellPhantomParams sp;
  sp.resolution = 20;
  const TriMesh canonical = make_shell_phantom(sp);
  const GhdBasis basis = ghd_basis(canonical, 16);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(100 + seed);
    GhdCoefficients target_phi = GhdCoefficients::Zero(16, 3), phi = target_phi;
    for (Eigen::Index i = 1; i < 16; ++i)
      for (int d = 0; d < 3; ++d) {
        target_phi(i, d) = 4.0 * rng.normal();
        phi(i, d) = rng.normal();
      }
    const TriMesh target = apply_ghd(canonical, basis, target_phi);
    SamplingOptions so;
    so.n_fg = so.n_bg = 1500;
    so.seed = seed;
    const LabeledPoints pts = sample_points(voxelize_oracle(target, grid_covering(target, 1.0, 4.0)), so);
    LossOptions opt;
    opt.beta = 10.0;
    auto loss_at = [&](const GhdCoefficients& c) {
      LossOptions x = opt;
      x.with_gradient = false;
      return combined_loss(apply_ghd(canonical, basis, c), pts, x).terms.total;
    };
    const GhdCoefficients g =
        coefficient_gradient(basis, combined_loss(apply_ghd(canonical, basis, phi), pts, opt).gradient);
    GhdCoefficients fd(16, 3);
    for (Eigen::Index i = 0; i < 16; ++i)
      for (int d = 0; d < 3; ++d) {
        GhdCoefficients a = phi, b = phi;
        a(i, d) += 1e-4;
        b(i, d) -= 1e-4;
        fd(i, d) = (loss_at(a) - loss_at(b)) / 2e-4;
      }
    worst_loss = std::max(worst_loss, relative_error(g, fd));
  }
  o.require(worst_loss <= 1e-3, "coefficient max rel err " + fmt(worst_loss, 3));
  const double s = seconds_since(t0);
  o.require(s <= 60.0, "runtime " + fmt(s, 3) + " s");
  return o;
}

Outcome criterion_3() {
  Outcome o;
  Points v(8, 3);
  for (int i = 0; i < 8; ++i) v.row(i) = Vec3(i & 1, (i >> 1) & 1, (i >> 2) & 1).transpose();
  const TriMesh cube(v, {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                         {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}});
  o.require(std::abs(enclosed_volume(cube) - 1.0) <= 1e-12, "cube " + fmt(enclosed_volume(cube), 16));

  const TriMesh s = make_icosphere(3, 10.0);
  const double vs = enclosed_volume(s), exact = 4.0 / 3.0 * std::numbers::pi * 1000.0;
  o.require(std::abs(vs - exact) <= 0.02 * exact, "icosphere " + fmt(vs, 8) + " vs " + fmt(exact, 8));
  double tetra = 0.0;
  for (const Face& f : s.faces()) tetra += s.vertex(f[0]).dot(s.vertex(f[1]).cross(s.vertex(f[2]))) / 6.0;
  o.require(std::abs(vs - tetra) <= 1e-9 * std::abs(tetra), "tetra oracle rel " + fmt(std::abs(vs - tetra) / tetra, 3));
  const double vt = enclosed_volume(s.transformed(Mat3::Identity(), Vec3(123.0, -45.0, 67.0)));
  o.require(std::abs(vt - vs) <= 1e-9 * vs, "translated rel " + fmt(std::abs(vt - vs) / vs, 3));
  return o;
}

Outcome criterion_4() {
  Outcome o;
  const TriMesh shell = make_shell_phantom(kShell);
  LaplacianOptions lo;
  lo.kind = LaplacianKind::mixed;
  lo.lambda_norm = 0.1;
  lo.lambda_unw = 0.05;
  const GraphLaplacian L = build_laplacian(shell, lo);
  const GhdBasis b = ghd_basis(L, 36);
  const double ortho = orthonormality_error(b);
  const double resid = eigen_residuals(L, b).maxCoeff();
  const Eigen::VectorXd u1 = b.modes.col(0);
  const double spread = u1.maxCoeff() - u1.minCoeff();
  o.require(b.modes.cols() == 36, std::to_string(b.modes.cols()) + " modes");
  o.require(ortho <= 1e-8, "orthonormality " + fmt(ortho, 3));
  o.require(resid <= 1e-6, "max residual " + fmt(resid, 3));
  o.require(std::abs(b.eigenvalues(0)) <= 1e-8, "lambda1 " + fmt(b.eigenvalues(0), 3));
  o.require(spread <= 1e-8, "u1 spread " + fmt(spread, 3));
  return o;
}

Outcome criterion_5() {
  Outcome o;
  const FitRun r = run_dense(fit_config());
  g_runs[5] = r;
  const auto& rep = r.result.report;
  const double dice = *rep.metrics.dice_3d;
  o.require(dice >= 0.95, "dice_3d " + fmt(dice));
  o.require(rep.gar_before - rep.gar_after <= 0.05, "GAR " + fmt(rep.gar_before) + " -> " + fmt(rep.gar_after));
  o.require(r.seconds <= 600.0, "runtime " + fmt(r.seconds, 3) + " s");
  return o;
}

Outcome criterion_6() {
  Outcome o;
  const FitRun r = run_sparse(fit_config());
  g_runs[6] = r;
  const auto& rep = r.result.report;
  const double dice3 = *evaluate(r.result.mesh, shell_task().dense).dice_3d;
  o.require(dice3 >= 0.88, "held-out dice_3d " + fmt(dice3));
  const double worst = *std::min_element(rep.metrics.dice_per_slice.begin(), rep.metrics.dice_per_slice.end());
  o.require(worst >= 0.92, "min per-slice dice " + fmt(worst));
  o.require(r.seconds <= 600.0, "runtime " + fmt(r.seconds, 3) + " s");
  return o;
}

Outcome criterion_7() {
  Outcome o;
  if (!g_runs.count(6)) g_runs[6] = run_sparse(fit_config());
  const auto& ghd = g_runs[6].result.report;
  FitConfig c = fit_config();
  c.parameterization = Parameterization::vertex;
  const FitRun v = run_sparse(c);
  const auto& vr = v.result.report;
  const double drop_v = vr.gar_before - vr.gar_after, drop_g = ghd.gar_before - ghd.gar_after;
  o.require(drop_v >= 0.2, "per-vertex GAR drop " + fmt(drop_v));
  o.require(drop_g <= 0.05, "GHD GAR drop " + fmt(drop_g));
  o.require(vr.iterations_run == ghd.iterations_run, "budgets " + std::to_string(vr.iterations_run) + "/" +
                                                         std::to_string(ghd.iterations_run));
  return o;
}

Outcome criterion_8() {
  Outcome o;
  const double inner = 10.0, outer = 20.0;
  const TriMesh shell = concatenate(make_icosphere(4, outer), make_icosphere(4, inner).flipped());
  const ThicknessResult t = thickness(shell, {}, 1.0);
  const double gap = outer - inner;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < t.values.size(); ++k) worst = std::max(worst, std::abs(t.values(k) - gap) / gap);
  o.require(worst <= 0.05, "thickness max dev " + fmt(100 * worst, 3) + "%");
  const double loss = thickness_loss(shell, 4.0, 1.0).value;
  o.require(loss == 0.0, "loss with walls > t_min " + fmt(loss, 3));

  const TriMesh s = make_icosphere(3, 10.0);
  const double V = enclosed_volume(s);
  const double rigid = volume_rate(s, s.transformed(Mat3::Identity(), Vec3(0.7, -1.1, 0.4)));
  o.require(std::abs(rigid) <= 1e-6 * V, "rate under translation " + fmt(rigid, 3));
  const double eps = 1e-3;
  const double scaled = volume_rate(s, s.transformed((1 + eps) * Mat3::Identity(), Vec3::Zero()));
  o.require(std::abs(scaled - 3 * eps * V) <= 0.05 * 3 * eps * V,
            "rate under scaling " + fmt(scaled) + " vs 3eV " + fmt(3 * eps * V));
  return o;
}

Outcome criterion_9() {
  Outcome o;
  const auto t0 = Clock::now();
  const TriMesh canonical = make_cavity_phantom({{22, 22, 42}, 20.0, 48});
  const CavityPhantomParams ed{{25, 25, 46}, 22.0, 96}, es{{19, 19, 38}, 17.0, 96};
  const double v_ed = truncated_spheroid_volume(ed.radii, ed.cut_z);
  const double v_es = truncated_spheroid_volume(es.radii, es.cut_z);
  auto fitted_volume = [&](const CavityPhantomParams& p) {
    const TriMesh target = make_cavity_phantom(p);
    const LabelVolume vol = voxelize_oracle(target, grid_covering(target, kVoxel, 4 * kVoxel));
    return fit_ghd(canonical, vol, fit_config()).report.volume;
  };
  const double f_ed = fitted_volume(ed), f_es = fitted_volume(es);
  const double ef_true = ejection_fraction(v_ed, v_es), ef_fit = ejection_fraction(f_ed, f_es);
  o.require(std::abs(ef_fit - ef_true) <= 0.02, "EF " + fmt(ef_fit) + " vs analytic " + fmt(ef_true));
  o.detail << "; volumes ED " << fmt(f_ed, 6) << "/" << fmt(v_ed, 6) << " ES " << fmt(f_es, 6) << "/"
           << fmt(v_es, 6) << "; " << fmt(seconds_since(t0), 3) << " s";
  return o;
}

Outcome criterion_10() {
  Outcome o;
  auto strip = [](const FitRun& r) {
    nlohmann::json j = to_json(r.result.report, fit_config());
    j.erase("timing");
    return j.dump();
  };
  if (!g_runs.count(5)) g_runs[5] = run_dense(fit_config());
  if (!g_runs.count(6)) g_runs[6] = run_sparse(fit_config());
  o.require(strip(g_runs[5]) == strip(run_dense(fit_config())), "dense report identical");
  o.require(strip(g_runs[6]) == strip(run_sparse(fit_config())), "sparse report identical");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  app.add_option("--only", only, "Run a subset of criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  set_log_level(LogLevel::quiet);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"occupancy-oracle equivalence", criterion_1},
      {"gradient correctness", criterion_2},
      {"volume exactness", criterion_3},
      {"spectral contracts", criterion_4},
      {"dense fit", criterion_5},
      {"sparse fit", criterion_6},
      {"mesh-quality contrast", criterion_7},
      {"physiologic operators", criterion_8},
      {"ejection fraction pipeline", criterion_9},
      {"determinism", criterion_10}};
  const std::set<int> wanted(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
