#include "ghd/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

namespace ghd {
namespace {

constexpr double kPi = std::numbers::pi;

/// Assembles ring-structured surfaces: closed vertex loops joined by triangle strips.
class RingBuilder {
 public:
  struct Ring {
    std::vector<std::int32_t> ids;
    double offset = 0.0;
  };
  using NormalFn = std::function<Vec3(const Vec3&)>;

  std::int32_t add_vertex(const Vec3& p) {
    verts_.push_back(p);
    return static_cast<std::int32_t>(verts_.size() - 1);
  }

  Ring add_ring(const std::function<Vec3(double)>& point, int count, double offset) {
    Ring r;
    r.offset = offset;
    for (int i = 0; i < count; ++i) r.ids.push_back(add_vertex(point(offset + 2.0 * kPi * i / count)));
    return r;
  }

  void fan(std::int32_t apex, const Ring& ring, const NormalFn& normal) {
    const auto n = ring.ids.size();
    for (std::size_t i = 0; i < n; ++i) add_triangle(apex, ring.ids[i], ring.ids[(i + 1) % n], normal);
  }

  /// Joins two loops by merging their vertices in angular order.
  void connect(const Ring& a, const Ring& b, const NormalFn& normal) {
    const long na = static_cast<long>(a.ids.size());
    const long nb = static_cast<long>(b.ids.size());
    auto ang_a = [&](long i) { return a.offset + 2.0 * kPi * static_cast<double>(i) / static_cast<double>(na); };
    auto ang_b = [&](long j) { return b.offset + 2.0 * kPi * static_cast<double>(j) / static_cast<double>(nb); };
    auto id_b = [&](long j) { return b.ids[static_cast<std::size_t>(((j % nb) + nb) % nb)]; };
    long j0 = -nb;
    for (long j = -nb; j <= nb; ++j) {
      if (std::abs(ang_b(j) - ang_a(0)) < std::abs(ang_b(j0) - ang_a(0))) j0 = j;
    }
    long i = 0, j = j0;
    while (i < na || j < j0 + nb) {
      bool advance_a;
      if (i == na) {
        advance_a = false;
      } else if (j == j0 + nb) {
        advance_a = true;
      } else {
        advance_a = ang_a(i + 1) <= ang_b(j + 1);
      }
      if (advance_a) {
        add_triangle(a.ids[static_cast<std::size_t>(i % na)], a.ids[static_cast<std::size_t>((i + 1) % na)], id_b(j),
                     normal);
        ++i;
      } else {
        add_triangle(a.ids[static_cast<std::size_t>(i % na)], id_b(j + 1), id_b(j), normal);
        ++j;
      }
    }
  }

  TriMesh build() const {
    Points v(static_cast<Eigen::Index>(verts_.size()), 3);
    for (std::size_t i = 0; i < verts_.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = verts_[i].transpose();
    return TriMesh(std::move(v), faces_);
  }

 private:
  void add_triangle(std::int32_t p, std::int32_t q, std::int32_t r, const NormalFn& normal) {
    const Vec3& a = verts_[static_cast<std::size_t>(p)];
    const Vec3& b = verts_[static_cast<std::size_t>(q)];
    const Vec3& c = verts_[static_cast<std::size_t>(r)];
    const Vec3 n = (b - a).cross(c - a);
    if (n.dot(normal((a + b + c) / 3.0)) < 0.0) std::swap(q, r);
    faces_.push_back({p, q, r});
  }

  std::vector<Vec3> verts_;
  std::vector<Face> faces_;
};

double ellipse_perimeter(double a, double b) {
  // Ramanujan's second approximation.
  const double h = (a - b) * (a - b) / ((a + b) * (a + b));
  return kPi * (a + b) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
}

int ring_count(double a, double b, double edge) {
  return std::max(6, static_cast<int>(std::lround(ellipse_perimeter(a, b) / edge)));
}

struct SpheroidSurface {
  Vec3 radii;
  Vec3 point(double theta, double phi) const {
    return {radii.x() * std::sin(theta) * std::cos(phi), radii.y() * std::sin(theta) * std::sin(phi),
            -radii.z() * std::cos(theta)};
  }
  Vec3 gradient(const Vec3& p) const {
    return {p.x() / (radii.x() * radii.x()), p.y() / (radii.y() * radii.y()), p.z() / (radii.z() * radii.z())};
  }
};

/// Meridian angles from the apex (theta = 0) to theta_end with roughly `edge` arc spacing;
/// the apex itself is excluded and theta_end is always the last entry.
std::vector<double> meridian_rings(const SpheroidSurface& s, double theta_end, double edge) {
  const double m = 0.5 * (s.radii.x() + s.radii.y());
  constexpr int kSteps = 4000;
  std::vector<double> arc(kSteps + 1, 0.0);
  auto speed = [&](double t) { return std::hypot(m * std::cos(t), s.radii.z() * std::sin(t)); };
  const double dt = theta_end / kSteps;
  for (int i = 1; i <= kSteps; ++i) arc[i] = arc[i - 1] + 0.5 * dt * (speed((i - 1) * dt) + speed(i * dt));
  const int n = std::max(2, static_cast<int>(std::lround(arc.back() / edge)));
  std::vector<double> thetas;
  for (int k = 1; k <= n; ++k) {
    const double target = arc.back() * k / n;
    auto it = std::lower_bound(arc.begin(), arc.end(), target);
    const auto idx = static_cast<int>(std::distance(arc.begin(), it));
    if (idx == 0) {
      thetas.push_back(0.0);
      continue;
    }
    const double frac = (target - arc[idx - 1]) / std::max(arc[idx] - arc[idx - 1], 1e-300);
    thetas.push_back(std::min(theta_end, (idx - 1 + frac) * dt));
  }
  thetas.back() = theta_end;
  return thetas;
}

/// Curved spheroid patch from the apex up to theta_end. Returns the rim ring.
RingBuilder::Ring build_spheroid_patch(RingBuilder& builder, const SpheroidSurface& s, double theta_end, double edge,
                                      const RingBuilder::NormalFn& normal) {
  const auto thetas = meridian_rings(s, theta_end, edge);
  const std::int32_t apex = builder.add_vertex(s.point(0.0, 0.0));
  RingBuilder::Ring prev;
  double offset = 0.0;
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    const double t = thetas[k];
    const int count = ring_count(s.radii.x() * std::sin(t), s.radii.y() * std::sin(t), edge);
    auto ring = builder.add_ring([&](double phi) { return s.point(t, phi); }, count, offset);
    if (k == 0) {
      builder.fan(apex, ring, normal);
    } else {
      builder.connect(prev, ring, normal);
    }
    offset += kPi / count;
    prev = std::move(ring);
  }
  return prev;
}

}  // namespace

TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  if (subdivisions < 0) throw ValidationError("icosphere subdivisions must be >= 0");
  if (!(radius > 0.0)) throw ValidationError("icosphere radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                             {11, 10, 2}, {10, 7, 6}, {7, 1, 8},   {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                             {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::int32_t, std::int32_t>, std::int32_t> midpoint;
    auto mid = [&](std::int32_t a, std::int32_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const auto id = static_cast<std::int32_t>(v.size() - 1);
      midpoint.emplace(key, id);
      return id;
    };
    std::vector<Face> next;
    next.reserve(faces.size() * 4);
    for (const Face& f : faces) {
      const auto ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  Points pts(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) pts.row(static_cast<Eigen::Index>(i)) = (center + radius * v[i]).transpose();
  return TriMesh(std::move(pts), std::move(faces));
}

double shell_cut_z(const ShellPhantomParams& p) { return -p.outer_radii.z() + 2.0 * p.outer_radii.z() * p.base_cut; }

TriMesh make_shell_phantom(const ShellPhantomParams& p) {
  const Vec3& outer = p.outer_radii;
  if (!(outer.minCoeff() > 0.0)) throw ValidationError("shell outer radii must be positive");
  if (!(p.wall > 0.0)) throw ValidationError("shell wall thickness must be positive");
  if (!(p.wall < outer.minCoeff())) {
    std::ostringstream os;
    os << "wall " << p.wall << " mm >= smallest outer radius " << outer.minCoeff()
       << " mm: inner surface would self-intersect";
    throw ValidationError(os.str());
  }
  if (!(p.base_cut > 0.0 && p.base_cut < 1.0)) throw ValidationError("base_cut must lie in (0, 1)");
  if (p.resolution < 8) throw ValidationError("shell resolution must be >= 8");
  const Vec3 inner = outer - Vec3::Constant(p.wall);
  const double cut = shell_cut_z(p);
  if (!(std::abs(cut) < inner.z())) {
    std::ostringstream os;
    os << "base plane z = " << cut << " mm misses the inner surface (|z| must be < " << inner.z()
       << " mm): inner surface would self-intersect the cap";
    throw ValidationError(os.str());
  }

  const double edge = ellipse_perimeter(outer.x(), outer.y()) / p.resolution;
  const SpheroidSurface so{outer};
  const SpheroidSurface si{inner};
  RingBuilder builder;

  auto outer_normal = [&](const Vec3& c) { return so.gradient(c); };
  auto inner_normal = [&](const Vec3& c) -> Vec3 { return -si.gradient(c); };
  auto cap_normal = [](const Vec3&) { return Vec3(0.0, 0.0, 1.0); };

  const double theta_o = std::acos(-cut / outer.z());
  const double theta_i = std::acos(-cut / inner.z());
  const auto outer_rim = build_spheroid_patch(builder, so, theta_o, edge, outer_normal);
  const auto inner_rim = build_spheroid_patch(builder, si, theta_i, edge, inner_normal);

  // Annular cap between the rims.
  const double ao = outer.x() * std::sin(theta_o), bo = outer.y() * std::sin(theta_o);
  const double ai = inner.x() * std::sin(theta_i), bi = inner.y() * std::sin(theta_i);
  const int intervals = std::max(1, static_cast<int>(std::lround((0.5 * (ao + bo) - 0.5 * (ai + bi)) / edge)));
  RingBuilder::Ring prev = outer_rim;
  double offset = outer_rim.offset + kPi / static_cast<double>(outer_rim.ids.size());
  for (int k = 1; k < intervals; ++k) {
    const double t = static_cast<double>(k) / intervals;
    const double ra = ao + (ai - ao) * t, rb = bo + (bi - bo) * t;
    const int count = ring_count(ra, rb, edge);
    auto ring = builder.add_ring([&](double phi) { return Vec3(ra * std::cos(phi), rb * std::sin(phi), cut); }, count,
                                 offset);
    builder.connect(prev, ring, cap_normal);
    offset += kPi / count;
    prev = std::move(ring);
  }
  builder.connect(prev, inner_rim, cap_normal);
  return builder.build();
}

TriMesh make_cavity_phantom(const CavityPhantomParams& p) {
  const Vec3& r = p.radii;
  if (!(r.minCoeff() > 0.0)) throw ValidationError("cavity radii must be positive");
  if (!(std::abs(p.cut_z) < r.z())) throw ValidationError("cavity cut plane must intersect the spheroid");
  if (p.resolution < 8) throw ValidationError("cavity resolution must be >= 8");
  const double edge = ellipse_perimeter(r.x(), r.y()) / p.resolution;
  const SpheroidSurface s{r};
  RingBuilder builder;
  const double theta = std::acos(-p.cut_z / r.z());
  const auto rim = build_spheroid_patch(builder, s, theta, edge, [&](const Vec3& c) { return s.gradient(c); });

  auto lid_normal = [](const Vec3&) { return Vec3(0.0, 0.0, 1.0); };
  const double ra = r.x() * std::sin(theta), rb = r.y() * std::sin(theta);
  const int intervals = std::max(1, static_cast<int>(std::lround(0.5 * (ra + rb) / edge)));
  RingBuilder::Ring prev = rim;
  double offset = rim.offset + kPi / static_cast<double>(rim.ids.size());
  for (int k = 1; k < intervals; ++k) {
    const double t = 1.0 - static_cast<double>(k) / intervals;
    const int count = ring_count(ra * t, rb * t, edge);
    auto ring = builder.add_ring(
        [&](double phi) { return Vec3(ra * t * std::cos(phi), rb * t * std::sin(phi), p.cut_z); }, count, offset);
    builder.connect(prev, ring, lid_normal);
    offset += kPi / count;
    prev = std::move(ring);
  }
  const auto center = builder.add_vertex(Vec3(0.0, 0.0, p.cut_z));
  builder.fan(center, prev, lid_normal);
  return builder.build();
}

double truncated_spheroid_volume(const Vec3& radii, double cut_z) {
  const double c = radii.z();
  const double z = std::clamp(cut_z, -c, c);
  return kPi * radii.x() * radii.y() * ((z + c) - (z * z * z + c * c * c) / (3.0 * c * c));
}

double shell_phantom_volume(const ShellPhantomParams& p) {
  const double cut = shell_cut_z(p);
  return truncated_spheroid_volume(p.outer_radii, cut) -
         truncated_spheroid_volume(p.outer_radii - Vec3::Constant(p.wall), cut);
}

}  // namespace ghd
