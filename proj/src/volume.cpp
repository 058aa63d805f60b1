#include "ghd/volume.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "ghd/log.hpp"
#include "ghd/random.hpp"

namespace ghd {

using nlohmann::json;

void GridSpec::validate() const {
  for (int d = 0; d < 3; ++d) {
    if (dims[static_cast<std::size_t>(d)] <= 0) throw ValidationError("grid dims must be positive");
    if (!(spacing(d) > 0.0)) throw ValidationError("grid spacing must be positive");
  }
  if (!origin.allFinite()) throw ValidationError("grid origin must be finite");
}

GridSpec grid_covering(const Vec3& lo, const Vec3& hi, const Vec3& spacing, double margin) {
  GridSpec g;
  g.spacing = spacing;
  for (int d = 0; d < 3; ++d) {
    const double a = lo(d) - margin, b = hi(d) + margin;
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / spacing(d))) + 1);
    g.dims[static_cast<std::size_t>(d)] = n;
    // Center the grid on the box.
    g.origin(d) = 0.5 * (a + b) - 0.5 * (n - 1) * spacing(d);
  }
  return g;
}

GridSpec grid_covering(const TriMesh& mesh, double spacing, double margin) {
  auto [lo, hi] = mesh.bounding_box();
  return grid_covering(lo, hi, Vec3::Constant(spacing), margin);
}

std::size_t LabelVolume::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

std::uint8_t LabelVolume::label_at(const Vec3& p) const {
  std::array<int, 3> idx{};
  for (int d = 0; d < 3; ++d) {
    const long i = std::lround((p(d) - grid.origin(d)) / grid.spacing(d));
    if (i < 0 || i >= grid.dims[static_cast<std::size_t>(d)]) return 0;
    idx[static_cast<std::size_t>(d)] = static_cast<int>(i);
  }
  return at(idx[0], idx[1], idx[2]);
}

void LabelVolume::validate() const {
  grid.validate();
  if (data.size() != grid.num_voxels()) {
    throw ValidationError("volume data length " + std::to_string(data.size()) + " != dims product " +
                          std::to_string(grid.num_voxels()));
  }
  for (auto x : data) {
    if (x > 1) throw ValidationError("volume labels must be 0 or 1");
  }
}

std::size_t Slice::count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

void Slice::validate() const {
  constexpr double tol = 1e-9;
  if (std::abs(u.norm() - 1.0) > tol) throw ValidationError("slice u axis is not unit length");
  if (std::abs(v.norm() - 1.0) > tol) throw ValidationError("slice v axis is not unit length");
  if (std::abs(u.dot(v)) > tol) throw ValidationError("slice u and v axes are not orthogonal");
  if (size[0] <= 0 || size[1] <= 0) throw ValidationError("slice size must be positive");
  if (!(spacing[0] > 0.0 && spacing[1] > 0.0)) throw ValidationError("slice spacing must be positive");
  if (mask.size() != static_cast<std::size_t>(size[0]) * static_cast<std::size_t>(size[1])) {
    throw ValidationError("slice mask length does not match its size");
  }
  for (auto x : mask) {
    if (x > 1) throw ValidationError("slice labels must be 0 or 1");
  }
}

void SliceStack::validate() const {
  if (slices.empty()) throw ValidationError("slice stack is empty");
  for (std::size_t i = 0; i < slices.size(); ++i) {
    try {
      slices[i].validate();
    } catch (const ValidationError& e) {
      throw ValidationError("slice " + std::to_string(i) + ": " + e.what());
    }
  }
}

std::size_t LabeledPoints::count_label(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

Axis parse_axis(const std::string& name) {
  if (name == "x") return Axis::x;
  if (name == "y") return Axis::y;
  if (name == "z") return Axis::z;
  throw ValidationError("axis must be x, y or z, got '" + name + "'");
}

const char* axis_name(Axis axis) {
  switch (axis) {
    case Axis::x:
      return "x";
    case Axis::y:
      return "y";
    default:
      return "z";
  }
}

// ---------------------------------------------------------------------------
// Parity oracle

namespace {

/// In-plane coordinate pair for rays along `dir`: (dir+1, dir+2) cyclically.
constexpr std::array<std::array<int, 2>, 3> kPlaneAxes{{{1, 2}, {2, 0}, {0, 1}}};
/// Fixed ray-origin jitter fractions per direction.
constexpr std::array<std::array<double, 2>, 3> kJitter{{{0.7548776662, 0.5698402910},
                                                        {0.3819660113, 0.8632997401},
                                                        {0.6180339887, 0.2451223338}}};
constexpr double kJitterScale = 1e-7;

struct ProjectedFace {
  double a[3], b[3], depth[3];
  double amin, amax, bmin, bmax;
};

std::vector<ProjectedFace> project_faces(const TriMesh& mesh, int dir) {
  const int pa = kPlaneAxes[static_cast<std::size_t>(dir)][0];
  const int pb = kPlaneAxes[static_cast<std::size_t>(dir)][1];
  std::vector<ProjectedFace> out;
  out.reserve(mesh.num_faces());
  const Points& v = mesh.vertices();
  for (const Face& f : mesh.faces()) {
    ProjectedFace pf{};
    for (int k = 0; k < 3; ++k) {
      pf.a[k] = v(f[static_cast<std::size_t>(k)], pa);
      pf.b[k] = v(f[static_cast<std::size_t>(k)], pb);
      pf.depth[k] = v(f[static_cast<std::size_t>(k)], dir);
    }
    pf.amin = std::min({pf.a[0], pf.a[1], pf.a[2]});
    pf.amax = std::max({pf.a[0], pf.a[1], pf.a[2]});
    pf.bmin = std::min({pf.b[0], pf.b[1], pf.b[2]});
    pf.bmax = std::max({pf.b[0], pf.b[1], pf.b[2]});
    out.push_back(pf);
  }
  return out;
}

/// Depth at which the ray through (qa, qb) pierces the face's interior, or NaN.
inline double pierce_depth(const ProjectedFace& f, double qa, double qb) {
  const double e0 = (f.a[0] - qa) * (f.b[1] - qb) - (f.b[0] - qb) * (f.a[1] - qa);
  const double e1 = (f.a[1] - qa) * (f.b[2] - qb) - (f.b[1] - qb) * (f.a[2] - qa);
  const double e2 = (f.a[2] - qa) * (f.b[0] - qb) - (f.b[2] - qb) * (f.a[0] - qa);
  const bool pos = e0 > 0.0 && e1 > 0.0 && e2 > 0.0;
  const bool neg = e0 < 0.0 && e1 < 0.0 && e2 < 0.0;
  if (!pos && !neg) return std::numeric_limits<double>::quiet_NaN();
  const double sum = e0 + e1 + e2;
  // e1 is opposite vertex 0, e2 opposite vertex 1, e0 opposite vertex 2.
  return (e1 * f.depth[0] + e2 * f.depth[1] + e0 * f.depth[2]) / sum;
}

void warn_if_open(const TriMesh& mesh) {
  if (!mesh.is_closed()) log_warn("parity oracle: mesh is not closed; labels are best-effort");
}

}  // namespace

std::vector<std::uint8_t> inside_oracle(const TriMesh& mesh, const Points& points) {
  warn_if_open(mesh);
  const double jitter_len = kJitterScale * std::max(1e-3, mesh.bounding_box_diagonal() / 100.0);
  std::vector<std::uint8_t> votes(static_cast<std::size_t>(points.rows()), 0);
  for (int dir = 0; dir < 3; ++dir) {
    const auto faces = project_faces(mesh, dir);
    const int pa = kPlaneAxes[static_cast<std::size_t>(dir)][0];
    const int pb = kPlaneAxes[static_cast<std::size_t>(dir)][1];
    for (Eigen::Index p = 0; p < points.rows(); ++p) {
      const double qa = points(p, pa) + jitter_len * kJitter[static_cast<std::size_t>(dir)][0];
      const double qb = points(p, pb) + jitter_len * kJitter[static_cast<std::size_t>(dir)][1];
      const double qd = points(p, dir);
      int crossings = 0;
      for (const auto& f : faces) {
        if (qa < f.amin || qa > f.amax || qb < f.bmin || qb > f.bmax) continue;
        const double depth = pierce_depth(f, qa, qb);
        if (depth > qd) ++crossings;  // NaN compares false
      }
      votes[static_cast<std::size_t>(p)] += static_cast<std::uint8_t>(crossings & 1);
    }
  }
  for (auto& x : votes) x = x >= 2 ? 1 : 0;
  return votes;
}

LabelVolume voxelize_oracle(const TriMesh& mesh, const GridSpec& grid) {
  grid.validate();
  warn_if_open(mesh);
  LabelVolume out(grid);
  std::vector<std::uint8_t> votes(grid.num_voxels(), 0);
  for (int dir = 0; dir < 3; ++dir) {
    const auto faces = project_faces(mesh, dir);
    const int pa = kPlaneAxes[static_cast<std::size_t>(dir)][0];
    const int pb = kPlaneAxes[static_cast<std::size_t>(dir)][1];
    const int na = grid.dims[static_cast<std::size_t>(pa)];
    const int nb = grid.dims[static_cast<std::size_t>(pb)];
    const int nd = grid.dims[static_cast<std::size_t>(dir)];
    const double sa = grid.spacing(pa), sb = grid.spacing(pb), sd = grid.spacing(dir);
    const double ja = kJitterScale * sa * kJitter[static_cast<std::size_t>(dir)][0];
    const double jb = kJitterScale * sb * kJitter[static_cast<std::size_t>(dir)][1];
    const double oa = grid.origin(pa) + ja, ob = grid.origin(pb) + jb, od = grid.origin(dir);

    std::vector<std::vector<double>> columns(static_cast<std::size_t>(na) * static_cast<std::size_t>(nb));
    for (const auto& f : faces) {
      const int ia0 = std::max(0, static_cast<int>(std::ceil((f.amin - oa) / sa)));
      const int ia1 = std::min(na - 1, static_cast<int>(std::floor((f.amax - oa) / sa)));
      const int ib0 = std::max(0, static_cast<int>(std::ceil((f.bmin - ob) / sb)));
      const int ib1 = std::min(nb - 1, static_cast<int>(std::floor((f.bmax - ob) / sb)));
      for (int ib = ib0; ib <= ib1; ++ib) {
        for (int ia = ia0; ia <= ia1; ++ia) {
          const double depth = pierce_depth(f, oa + ia * sa, ob + ib * sb);
          if (!std::isnan(depth)) {
            columns[static_cast<std::size_t>(ia) + static_cast<std::size_t>(na) * static_cast<std::size_t>(ib)]
                .push_back(depth);
          }
        }
      }
    }
    std::array<int, 3> idx{};
    for (int ib = 0; ib < nb; ++ib) {
      for (int ia = 0; ia < na; ++ia) {
        auto& col = columns[static_cast<std::size_t>(ia) + static_cast<std::size_t>(na) * static_cast<std::size_t>(ib)];
        if (col.empty()) continue;
        std::sort(col.begin(), col.end());
        idx[static_cast<std::size_t>(pa)] = ia;
        idx[static_cast<std::size_t>(pb)] = ib;
        // Walk from the top: crossings above voxel k = entries with depth > center.
        std::size_t above = 0;
        auto it = col.end();
        for (int k = nd - 1; k >= 0; --k) {
          const double t = od + k * sd;
          while (it != col.begin() && *(it - 1) > t) {
            --it;
            ++above;
          }
          if (above & 1U) {
            idx[static_cast<std::size_t>(dir)] = k;
            ++votes[out.index(idx[0], idx[1], idx[2])];
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < votes.size(); ++i) out.data[i] = votes[i] >= 2 ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Slicing

SliceStack extract_slices(const LabelVolume& volume, Axis axis, const std::vector<int>& indices) {
  if (indices.empty()) throw ValidationError("extract_slices: index list is empty");
  const auto& g = volume.grid;
  const int d = static_cast<int>(axis);
  const int pa = kPlaneAxes[static_cast<std::size_t>(d)][0];
  const int pb = kPlaneAxes[static_cast<std::size_t>(d)][1];
  SliceStack stack;
  for (int index : indices) {
    if (index < 0 || index >= g.dims[static_cast<std::size_t>(d)]) {
      throw ValidationError("extract_slices: index " + std::to_string(index) + " outside [0, " +
                            std::to_string(g.dims[static_cast<std::size_t>(d)]) + ")");
    }
    Slice s;
    s.u = Vec3::Unit(pa);
    s.v = Vec3::Unit(pb);
    s.spacing = {g.spacing(pa), g.spacing(pb)};
    s.size = {g.dims[static_cast<std::size_t>(pa)], g.dims[static_cast<std::size_t>(pb)]};
    std::array<int, 3> idx{};
    idx[static_cast<std::size_t>(d)] = index;
    s.origin = g.center(idx[0], idx[1], idx[2]);
    s.mask.resize(static_cast<std::size_t>(s.size[0]) * static_cast<std::size_t>(s.size[1]));
    for (int b = 0; b < s.size[1]; ++b) {
      for (int a = 0; a < s.size[0]; ++a) {
        idx[static_cast<std::size_t>(pa)] = a;
        idx[static_cast<std::size_t>(pb)] = b;
        s.mask[static_cast<std::size_t>(a) + static_cast<std::size_t>(s.size[0]) * static_cast<std::size_t>(b)] =
            volume.at(idx[0], idx[1], idx[2]);
      }
    }
    stack.slices.push_back(std::move(s));
  }
  return stack;
}

// ---------------------------------------------------------------------------
// Distance transform and sampling

namespace {

constexpr double kFar = 1e30;

/// Felzenszwalb-Huttenlocher lower envelope of parabolas along one line of samples.
void distance_transform_1d(const double* f, double* out, int n, std::ptrdiff_t stride, double spacing,
                           std::vector<int>& v, std::vector<double>& z, std::vector<double>& buf) {
  buf.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = f[i * stride];
  v.resize(static_cast<std::size_t>(n));
  z.resize(static_cast<std::size_t>(n) + 1);
  auto pos = [spacing](int i) { return spacing * i; };
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (buf[static_cast<std::size_t>(q)] >= kFar) continue;
    while (true) {
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -std::numeric_limits<double>::infinity();
        z[1] = std::numeric_limits<double>::infinity();
        break;
      }
      const int vk = v[static_cast<std::size_t>(k)];
      const double s = ((buf[static_cast<std::size_t>(q)] + pos(q) * pos(q)) -
                        (buf[static_cast<std::size_t>(vk)] + pos(vk) * pos(vk))) /
                       (2.0 * (pos(q) - pos(vk)));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        continue;
      }
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
      z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
      break;
    }
  }
  if (k < 0) {
    for (int i = 0; i < n; ++i) out[i * stride] = kFar;
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(j) + 1] < pos(q)) ++j;
    const int vj = v[static_cast<std::size_t>(j)];
    const double d = pos(q) - pos(vj);
    out[q * stride] = d * d + buf[static_cast<std::size_t>(vj)];
  }
}

std::vector<double> squared_edt(const std::vector<std::uint8_t>& labels, const std::vector<int>& dims,
                                const std::vector<double>& spacing) {
  std::vector<double> f(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) f[i] = labels[i] ? 0.0 : kFar;
  std::vector<int> v;
  std::vector<double> z, buf;
  std::vector<std::ptrdiff_t> strides(dims.size(), 1);
  for (std::size_t d = 1; d < dims.size(); ++d) strides[d] = strides[d - 1] * dims[d - 1];
  const std::size_t total = labels.size();
  for (std::size_t d = 0; d < dims.size(); ++d) {
    const int n = dims[d];
    const std::ptrdiff_t stride = strides[d];
    for (std::size_t start = 0; start < total; ++start) {
      // Only process line starts (index component along d is zero).
      if ((static_cast<std::ptrdiff_t>(start) / stride) % n != 0) continue;
      distance_transform_1d(f.data() + start, f.data() + start, n, stride, spacing[d], v, z, buf);
    }
  }
  return f;
}

/// Picks min(n, candidates) distinct entries; sets `short_flag` when n exceeds the pool.
std::vector<std::size_t> choose(std::vector<std::size_t> candidates, std::size_t n, Rng& rng, bool& short_flag) {
  if (n >= candidates.size()) {
    if (n > candidates.size()) short_flag = true;
    return candidates;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(n);
  return candidates;
}

double jitter_offset(Rng& rng, bool enabled) {
  if (!enabled) return 0.0;
  return (rng.uniform() - 0.5) * (1.0 - 1e-9);
}

}  // namespace

std::vector<double> squared_distance_to_foreground(const LabelVolume& volume) {
  const auto& g = volume.grid;
  return squared_edt(volume.data, {g.dims[0], g.dims[1], g.dims[2]}, {g.spacing.x(), g.spacing.y(), g.spacing.z()});
}

LabeledPoints sample_points(const LabelVolume& volume, const SamplingOptions& opt) {
  volume.validate();
  const auto d2 = squared_distance_to_foreground(volume);
  const double band = opt.bg_band > 0 ? opt.bg_band : 5.0 * volume.grid.spacing.maxCoeff();
  const double band2 = band * band;
  std::vector<std::size_t> fg, bg;
  for (std::size_t i = 0; i < volume.data.size(); ++i) {
    if (volume.data[i]) {
      fg.push_back(i);
    } else if (d2[i] <= band2) {
      bg.push_back(i);
    }
  }
  if (fg.empty() && bg.empty()) throw ValidationError("sample_points: volume has no candidate voxels");
  Rng rng(opt.seed);
  LabeledPoints out;
  const auto chosen_fg = choose(std::move(fg), opt.n_fg, rng, out.insufficient);
  const auto chosen_bg = choose(std::move(bg), opt.n_bg, rng, out.insufficient);
  const auto total = static_cast<Eigen::Index>(chosen_fg.size() + chosen_bg.size());
  out.positions.resize(total, 3);
  out.labels.resize(static_cast<std::size_t>(total));
  const auto& g = volume.grid;
  const auto nx = static_cast<std::size_t>(g.dims[0]), ny = static_cast<std::size_t>(g.dims[1]);
  Eigen::Index row = 0;
  auto emit = [&](std::size_t flat, std::uint8_t label) {
    const int i = static_cast<int>(flat % nx);
    const int j = static_cast<int>((flat / nx) % ny);
    const int k = static_cast<int>(flat / (nx * ny));
    Vec3 p = g.center(i, j, k);
    for (int d = 0; d < 3; ++d) p(d) += jitter_offset(rng, opt.jitter) * g.spacing(d);
    out.positions.row(row) = p.transpose();
    out.labels[static_cast<std::size_t>(row)] = label;
    ++row;
  };
  for (auto idx : chosen_fg) emit(idx, 1);
  for (auto idx : chosen_bg) emit(idx, 0);
  if (out.insufficient) {
    log_warn("sample_points: requested ", opt.n_fg, "+", opt.n_bg, " points, returned ", chosen_fg.size(), "+",
             chosen_bg.size());
  }
  return out;
}

LabeledPoints sample_points(const SliceStack& stack, const SamplingOptions& opt) {
  stack.validate();
  double max_spacing = 0.0;
  for (const auto& sl : stack.slices) max_spacing = std::max({max_spacing, sl.spacing[0], sl.spacing[1]});
  const double band = opt.bg_band > 0 ? opt.bg_band : 5.0 * max_spacing;
  const double band2 = band * band;
  // Candidate = (slice, pixel) packed as slice * 2^32 + pixel.
  std::vector<std::size_t> fg, bg;
  for (std::size_t s = 0; s < stack.slices.size(); ++s) {
    const Slice& sl = stack.slices[s];
    const auto d2 = squared_edt(sl.mask, {sl.size[0], sl.size[1]}, {sl.spacing[0], sl.spacing[1]});
    for (std::size_t p = 0; p < sl.mask.size(); ++p) {
      const std::size_t key = (s << 32) | p;
      if (sl.mask[p]) {
        fg.push_back(key);
      } else if (d2[p] <= band2) {
        bg.push_back(key);
      }
    }
  }
  if (fg.empty() && bg.empty()) throw ValidationError("sample_points: slice stack has no candidate pixels");
  Rng rng(opt.seed);
  LabeledPoints out;
  const auto chosen_fg = choose(std::move(fg), opt.n_fg, rng, out.insufficient);
  const auto chosen_bg = choose(std::move(bg), opt.n_bg, rng, out.insufficient);
  const auto total = static_cast<Eigen::Index>(chosen_fg.size() + chosen_bg.size());
  out.positions.resize(total, 3);
  out.labels.resize(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  auto emit = [&](std::size_t key, std::uint8_t label) {
    const Slice& sl = stack.slices[key >> 32];
    const std::size_t p = key & 0xffffffffULL;
    const int i = static_cast<int>(p % static_cast<std::size_t>(sl.size[0]));
    const int j = static_cast<int>(p / static_cast<std::size_t>(sl.size[0]));
    const double du = jitter_offset(rng, opt.jitter);
    const double dv = jitter_offset(rng, opt.jitter);
    const Vec3 pos = sl.pixel_center(i, j) + du * sl.spacing[0] * sl.u + dv * sl.spacing[1] * sl.v;
    out.positions.row(row) = pos.transpose();
    out.labels[static_cast<std::size_t>(row)] = label;
    ++row;
  };
  for (auto key : chosen_fg) emit(key, 1);
  for (auto key : chosen_bg) emit(key, 0);
  if (out.insufficient) {
    log_warn("sample_points: requested ", opt.n_fg, "+", opt.n_bg, " points, returned ", chosen_fg.size(), "+",
             chosen_bg.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

constexpr const char* kVolumeFormat = "ghd-label-volume";
constexpr const char* kSliceFormat = "ghd-slice-stack";

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array() || j[field].size() != 3) {
    throw FormatError(std::string("field '") + field + "' must be a 3-element array");
  }
  return {j[field][0].get<double>(), j[field][1].get<double>(), j[field][2].get<double>()};
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::uint8_t> read_payload(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open payload " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() != expected) {
    throw FormatError("payload size mismatch in " + path.string() + ": header expects " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(data.size()));
  }
  for (auto x : data) {
    if (x > 1) throw FormatError("payload " + path.string() + " contains labels other than 0/1");
  }
  return data;
}

void write_payload(const std::vector<std::uint8_t>& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error("failed writing " + path.string());
}

std::string strip_suffix(std::string name, const std::string& suffix) {
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name.resize(name.size() - suffix.size());
  }
  return name;
}

template <typename Fn>
auto with_field_context(const std::filesystem::path& path, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::filesystem::path volume_payload_path(const std::filesystem::path& header_path) {
  std::string name = header_path.filename().string();
  name = strip_suffix(strip_suffix(name, ".json"), ".lvh");
  return header_path.parent_path() / (name + ".lvr");
}

void save_volume(const LabelVolume& volume, const std::filesystem::path& header_path) {
  volume.validate();
  const auto payload = volume_payload_path(header_path);
  json h;
  h["format"] = kVolumeFormat;
  h["version"] = 1;
  h["dims"] = volume.grid.dims;
  h["spacing"] = vec_json(volume.grid.spacing);
  h["origin"] = vec_json(volume.grid.origin);
  h["axis_order"] = "xyz";
  h["dtype"] = "u8";
  h["payload"] = payload.filename().string();
  write_json(h, header_path);
  write_payload(volume.data, payload);
}

LabelVolume load_volume(const std::filesystem::path& header_path) {
  const json h = read_json(header_path);
  return with_field_context(header_path, [&] {
    if (h.value("format", "") != kVolumeFormat) throw FormatError("not a label volume header");
    if (h.value("dtype", "") != "u8") throw FormatError("unsupported dtype (expected u8)");
    if (h.value("axis_order", "") != "xyz") throw FormatError("unsupported axis_order (expected xyz)");
    LabelVolume vol;
    vol.grid.dims = h.at("dims").get<std::array<int, 3>>();
    vol.grid.spacing = vec_from(h, "spacing");
    vol.grid.origin = vec_from(h, "origin");
    vol.grid.validate();
    const auto payload = header_path.parent_path() / h.at("payload").get<std::string>();
    vol.data = read_payload(payload, vol.grid.num_voxels());
    return vol;
  });
}

void save_slices(const SliceStack& stack, const std::filesystem::path& manifest_path) {
  stack.validate();
  const std::string stem = strip_suffix(manifest_path.filename().string(), ".json");
  json m;
  m["format"] = kSliceFormat;
  m["version"] = 1;
  m["slices"] = json::array();
  for (std::size_t i = 0; i < stack.slices.size(); ++i) {
    const Slice& s = stack.slices[i];
    char suffix[16];
    std::snprintf(suffix, sizeof(suffix), ".s%03zu.lvr", i);
    const std::string payload = stem + suffix;
    json js;
    js["origin"] = vec_json(s.origin);
    js["u"] = vec_json(s.u);
    js["v"] = vec_json(s.v);
    js["spacing"] = s.spacing;
    js["size"] = s.size;
    js["dtype"] = "u8";
    js["payload"] = payload;
    m["slices"].push_back(js);
    write_payload(s.mask, manifest_path.parent_path() / payload);
  }
  write_json(m, manifest_path);
}

SliceStack load_slices(const std::filesystem::path& manifest_path) {
  const json m = read_json(manifest_path);
  return with_field_context(manifest_path, [&] {
    if (m.value("format", "") != kSliceFormat) throw FormatError("not a slice stack manifest");
    SliceStack stack;
    for (const auto& js : m.at("slices")) {
      Slice s;
      s.origin = vec_from(js, "origin");
      s.u = vec_from(js, "u");
      s.v = vec_from(js, "v");
      s.spacing = js.at("spacing").get<std::array<double, 2>>();
      s.size = js.at("size").get<std::array<int, 2>>();
      if (js.value("dtype", "u8") != "u8") throw FormatError("unsupported slice dtype");
      if (s.size[0] <= 0 || s.size[1] <= 0) throw FormatError("slice size must be positive");
      s.mask = read_payload(manifest_path.parent_path() / js.at("payload").get<std::string>(),
                            static_cast<std::size_t>(s.size[0]) * static_cast<std::size_t>(s.size[1]));
      stack.slices.push_back(std::move(s));
    }
    stack.validate();
    return stack;
  });
}

}  // namespace ghd
