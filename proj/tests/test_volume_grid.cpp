#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "ghd/phantom.hpp"
#include "ghd/random.hpp"
#include "ghd/volume.hpp"
#include "test_support.hpp"

using namespace ghd;

namespace {

GridSpec cube_grid(int n, double spacing, const Vec3& center = Vec3::Zero()) {
  GridSpec g;
  g.dims = {n, n, n};
  g.spacing = Vec3::Constant(spacing);
  g.origin = center - Vec3::Constant(0.5 * spacing * (n - 1));
  return g;
}

LabelVolume sphere_volume(double radius = 10.0) {
  return voxelize_oracle(make_icosphere(4, radius), cube_grid(64, 0.5));
}

}  // namespace

TEST_CASE("oracle voxelization of a sphere") {
  const auto vol = sphere_volume();
  const double counted = static_cast<double>(vol.count()) * 0.125;
  const double analytic = 4.0 / 3.0 * std::numbers::pi * 1000.0;
  CHECK(std::abs(counted - analytic) <= 0.02 * analytic);
}

TEST_CASE("oracle agrees with the analytic sphere away from the surface") {
  const auto vol = sphere_volume();
  const double tol = std::sqrt(3.0) * 0.5;
  int bad = 0;
  for (int k = 0; k < 64; ++k)
    for (int j = 0; j < 64; ++j)
      for (int i = 0; i < 64; ++i) {
        const double r = vol.center(i, j, k).norm();
        if (r < 10.0 - tol) bad += vol.at(i, j, k) != 1;
        if (r > 10.0 + tol) bad += vol.at(i, j, k) != 0;
      }
  CHECK(bad == 0);
}

TEST_CASE("mesh outside the grid gives an empty volume") {
  auto vol = voxelize_oracle(make_icosphere(2, 3.0, Vec3(100, 0, 0)), cube_grid(16, 1.0));
  CHECK(vol.count() == 0);
}

TEST_CASE("nested meshes give nested labels") {
  auto g = cube_grid(48, 0.5);
  auto a = voxelize_oracle(make_icosphere(3, 5.0), g);
  auto b = voxelize_oracle(make_icosphere(3, 10.0), g);
  CHECK(a.count() > 0);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (a.data[i] && !b.data[i]) {
      FAIL("label in A but not in B at voxel ", i);
    }
  }
}

TEST_CASE("oracle is invariant under face order and vertex permutation") {
  ShellPhantomParams p;
  p.resolution = 28;
  auto m = make_shell_phantom(p);
  auto g = grid_covering(m, 2.0, 2.0);
  auto ref = voxelize_oracle(m, g);

  Rng rng(11);
  std::vector<int> perm(m.num_vertices());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  Points v(m.num_vertices(), 3);
  for (std::size_t i = 0; i < perm.size(); ++i) v.row(perm[i]) = m.vertices().row(static_cast<Eigen::Index>(i));
  std::vector<Face> faces;
  for (const Face& f : m.faces()) faces.push_back({perm[f[1]], perm[f[2]], perm[f[0]]});
  std::reverse(faces.begin(), faces.end());
  auto shuffled = voxelize_oracle(TriMesh(v, faces), g);
  CHECK(shuffled.data == ref.data);

  SUBCASE("point oracle matches the voxelization at the centers") {
    Points centers(static_cast<Eigen::Index>(g.num_voxels()), 3);
    for (int k = 0; k < g.dims[2]; ++k)
      for (int j = 0; j < g.dims[1]; ++j)
        for (int i = 0; i < g.dims[0]; ++i)
          centers.row(static_cast<Eigen::Index>(ref.index(i, j, k))) = g.center(i, j, k).transpose();
    CHECK(inside_oracle(m, centers) == ref.data);
  }
}

TEST_CASE("extract_slices") {
  GridSpec g;
  g.dims = {5, 4, 6};
  g.spacing = Vec3(0.5, 0.7, 1.3);
  g.origin = Vec3(-1, 2, 3);
  LabelVolume vol(g);
  Rng rng(3);
  for (auto& x : vol.data) x = rng.uniform() < 0.4;

  SUBCASE("all z indices reproduce the volume") {
    std::vector<int> idx(6);
    std::iota(idx.begin(), idx.end(), 0);
    auto stack = extract_slices(vol, Axis::z, idx);
    REQUIRE(stack.slices.size() == 6);
    for (int k = 0; k < 6; ++k)
      for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 5; ++i) CHECK(stack.slices[k].at(i, j) == vol.at(i, j, k));
  }

  SUBCASE("first, middle and last slice positions") {
    auto stack = extract_slices(vol, Axis::z, {0, 3, 5});
    REQUIRE(stack.slices.size() == 3);
    CHECK(stack.slices[0].origin.z() == doctest::Approx(3.0));
    CHECK(stack.slices[1].origin.z() == doctest::Approx(3.0 + 3 * 1.3));
    CHECK(stack.slices[2].origin.z() == doctest::Approx(3.0 + 5 * 1.3));
    CHECK(stack.slices[1].normal().isApprox(Vec3(0, 0, 1)));
  }

  SUBCASE("pixel poses coincide with voxel centers for every axis") {
    for (Axis ax : {Axis::x, Axis::y, Axis::z}) {
      const int a = static_cast<int>(ax);
      const int k = g.dims[a] / 2;
      auto stack = extract_slices(vol, ax, {k});
      const Slice& s = stack.slices[0];
      for (int j = 0; j < s.size[1]; ++j)
        for (int i = 0; i < s.size[0]; ++i) {
          const Vec3 p = s.pixel_center(i, j);
          CHECK(vol.label_at(p) == s.at(i, j));
          CHECK(std::abs(p(a) - (g.origin(a) + k * g.spacing(a))) < 1e-12);
        }
    }
  }

  SUBCASE("rejections") {
    CHECK_THROWS(extract_slices(vol, Axis::z, {}));
    CHECK_THROWS(extract_slices(vol, Axis::z, {6}));
    CHECK_THROWS(extract_slices(vol, Axis::x, {-1}));
  }
}

TEST_CASE("sample_points") {
  const auto vol = sphere_volume();
  SamplingOptions opt;
  opt.n_fg = 3000;
  opt.n_bg = 3000;
  opt.seed = 42;

  SUBCASE("deterministic under seed") {
    auto a = sample_points(vol, opt);
    auto b = sample_points(vol, opt);
    CHECK(a.positions == b.positions);
    CHECK(a.labels == b.labels);
    opt.seed = 43;
    auto c = sample_points(vol, opt);
    CHECK(c.positions != a.positions);
  }

  SUBCASE("no background requested") {
    opt.n_bg = 0;
    auto pts = sample_points(vol, opt);
    CHECK(pts.size() == 3000);
    CHECK(pts.count_label(1) == 3000);
  }

  SUBCASE("containment and label consistency") {
    auto pts = sample_points(vol, opt);
    CHECK(pts.count_label(1) == 3000);
    CHECK(pts.count_label(0) == 3000);
    CHECK_FALSE(pts.insufficient);
    const double diag = std::sqrt(3.0) * 0.5;
    const double band = 5.0 * 0.5;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 p = pts.positions.row(static_cast<Eigen::Index>(i)).transpose();
      CHECK(vol.label_at(p) == pts.labels[i]);
      if (pts.labels[i]) {
        CHECK(p.norm() <= 10.0 + diag);
      } else {
        CHECK(p.norm() <= 10.0 + band + diag);
      }
    }
  }

  SUBCASE("exact centers without jitter") {
    opt.jitter = false;
    auto pts = sample_points(vol, opt);
    for (Eigen::Index i = 0; i < pts.positions.rows(); ++i) {
      const Vec3 f = ((pts.positions.row(i).transpose() - vol.grid.origin) / 0.5);
      CHECK((f - f.array().round().matrix()).norm() < 1e-9);
    }
  }

  SUBCASE("insufficient candidates are flagged") {
    opt.n_fg = vol.count() + 10;
    auto pts = sample_points(vol, opt);
    CHECK(pts.insufficient);
    CHECK(pts.count_label(1) == vol.count());
  }

  SUBCASE("slice stacks") {
    auto stack = extract_slices(vol, Axis::z, {20, 32, 44});
    auto pts = sample_points(stack, opt);
    auto again = sample_points(stack, opt);
    CHECK(pts.positions == again.positions);
    CHECK(pts.count_label(1) > 0);
    CHECK(pts.count_label(0) > 0);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3 p = pts.positions.row(static_cast<Eigen::Index>(i)).transpose();
      CHECK(vol.label_at(p) == pts.labels[i]);
    }
  }
}

TEST_CASE("distance to foreground") {
  GridSpec g;
  g.dims = {7, 1, 1};
  g.spacing = Vec3(2.0, 1.0, 1.0);
  LabelVolume vol(g);
  vol.data[2] = 1;
  auto d2 = squared_distance_to_foreground(vol);
  CHECK(d2[2] == 0.0);
  CHECK(d2[0] == doctest::Approx(16.0));
  CHECK(d2[6] == doctest::Approx(64.0));
}

TEST_CASE("volume and slice file round trips") {
  const auto dir = testing::scratch_dir("volume_io");
  GridSpec g;
  g.dims = {6, 5, 4};
  g.spacing = Vec3(0.3, 0.45, 1.1);
  g.origin = Vec3(-12.125, 3.0 / 7.0, 1e-3);
  LabelVolume vol(g);
  Rng rng(5);
  for (auto& x : vol.data) x = rng.uniform() < 0.5;

  save_volume(vol, dir / "v.lvh.json");
  CHECK(std::filesystem::exists(dir / "v.lvr"));
  auto back = load_volume(dir / "v.lvh.json");
  CHECK(back.data == vol.data);
  CHECK(back.grid.dims == vol.grid.dims);
  CHECK((back.grid.spacing - vol.grid.spacing).norm() < 1e-9);
  CHECK((back.grid.origin - vol.grid.origin).norm() < 1e-9);

  SUBCASE("truncated payload") {
    std::filesystem::resize_file(dir / "v.lvr", vol.data.size() - 3);
    CHECK_THROWS_WITH_AS(load_volume(dir / "v.lvh.json"), doctest::Contains("size"), FormatError);
  }

  SUBCASE("slices") {
    auto stack = extract_slices(vol, Axis::y, {0, 2, 4});
    save_slices(stack, dir / "s.json");
    auto sb = load_slices(dir / "s.json");
    REQUIRE(sb.slices.size() == 3);
    for (std::size_t s = 0; s < 3; ++s) {
      CHECK(sb.slices[s].mask == stack.slices[s].mask);
      CHECK((sb.slices[s].origin - stack.slices[s].origin).norm() < 1e-9);
      CHECK((sb.slices[s].u - stack.slices[s].u).norm() < 1e-9);
    }
  }

  SUBCASE("non-unit slice axis") {
    auto stack = extract_slices(vol, Axis::z, {1});
    stack.slices[0].u *= 1.5;
    CHECK_THROWS_AS(stack.validate(), ValidationError);
    CHECK_THROWS(save_slices(stack, dir / "bad.json"));
    // write a valid stack then corrupt the manifest axis
    stack.slices[0].u /= 1.5;
    save_slices(stack, dir / "bad.json");
    std::ifstream in(dir / "bad.json");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    in.close();
    auto pos = text.find("\"u\"");
    REQUIRE(pos != std::string::npos);
    auto one = text.find("1", pos);
    text.replace(one, 1, "2");
    std::ofstream(dir / "bad.json") << text;
    CHECK_THROWS_AS(load_slices(dir / "bad.json"), FormatError);
  }
}
