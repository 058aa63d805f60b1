#pragma once

#include "ghd/mesh.hpp"

namespace ghd {

/// Icosahedron refined by midpoint subdivision and projected onto the sphere.
/// subdivisions = s gives 20 * 4^s faces.
TriMesh make_icosphere(int subdivisions, double radius, const Vec3& center = Vec3::Zero());

/// Thick-walled truncated prolate spheroid, long axis along z, apex at -c.
///
/// The outer surface has semi-axes (a, b, c); the inner surface semi-axes are reduced by
/// `wall`. Both are cut by the plane z = -c + 2c * base_cut and joined by an annular cap.
struct ShellPhantomParams {
  Vec3 outer_radii{30.0, 30.0, 50.0};
  double wall = 8.0;
  double base_cut = 0.7;
  /// Segments around the outer equator; sets the target edge length.
  int resolution = 56;
};

TriMesh make_shell_phantom(const ShellPhantomParams& params);

/// Solid truncated spheroid (cavity): curved wall from the apex to the cut plane plus a flat lid.
struct CavityPhantomParams {
  Vec3 radii{22.0, 22.0, 42.0};
  /// Absolute z of the cut plane.
  double cut_z = 20.0;
  int resolution = 48;
};

TriMesh make_cavity_phantom(const CavityPhantomParams& params);

/// z coordinate of the shell's basal plane.
double shell_cut_z(const ShellPhantomParams& params);

/// Volume of { x^2/a^2 + y^2/b^2 + z^2/c^2 <= 1, z <= cut_z }.
double truncated_spheroid_volume(const Vec3& radii, double cut_z);

/// Closed-form volume enclosed by the shell phantom's smooth surfaces.
double shell_phantom_volume(const ShellPhantomParams& params);

}  // namespace ghd
