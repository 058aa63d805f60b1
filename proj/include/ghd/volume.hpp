#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "ghd/mesh.hpp"

namespace ghd {

/// Placement of an axis-aligned voxel grid. `origin` is the center of voxel (0, 0, 0).
struct GridSpec {
  std::array<int, 3> dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t num_voxels() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  Vec3 center(int i, int j, int k) const {
    return origin + Vec3(i * spacing.x(), j * spacing.y(), k * spacing.z());
  }
  void validate() const;
};

/// Grid of the given spacing covering the box [lo - margin, hi + margin].
GridSpec grid_covering(const Vec3& lo, const Vec3& hi, const Vec3& spacing, double margin);
GridSpec grid_covering(const TriMesh& mesh, double spacing, double margin);

/// Binary voxel labels, x fastest.
struct LabelVolume {
  GridSpec grid;
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  explicit LabelVolume(const GridSpec& g) : grid(g), data(g.num_voxels(), 0) {}

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(grid.dims[0]) *
               (static_cast<std::size_t>(j) + static_cast<std::size_t>(grid.dims[1]) * static_cast<std::size_t>(k));
  }
  std::uint8_t at(int i, int j, int k) const { return data[index(i, j, k)]; }
  Vec3 center(int i, int j, int k) const { return grid.center(i, j, k); }
  std::size_t count() const;
  /// Label of the voxel containing p; 0 outside the grid.
  std::uint8_t label_at(const Vec3& p) const;
  void validate() const;
};

/// One posed 2D label mask. Pixel (i, j) is centered at origin + i*su*u + j*sv*v; i fastest.
struct Slice {
  Vec3 origin{0.0, 0.0, 0.0};
  Vec3 u{1.0, 0.0, 0.0};
  Vec3 v{0.0, 1.0, 0.0};
  std::array<double, 2> spacing{1.0, 1.0};
  std::array<int, 2> size{0, 0};
  std::vector<std::uint8_t> mask;

  Vec3 normal() const { return u.cross(v); }
  Vec3 pixel_center(int i, int j) const { return origin + i * spacing[0] * u + j * spacing[1] * v; }
  std::uint8_t at(int i, int j) const {
    return mask[static_cast<std::size_t>(i) + static_cast<std::size_t>(size[0]) * static_cast<std::size_t>(j)];
  }
  std::size_t count() const;
  void validate() const;
};

struct SliceStack {
  std::vector<Slice> slices;
  void validate() const;
};

/// Sample points with binary inside labels.
struct LabeledPoints {
  Points positions;
  std::vector<std::uint8_t> labels;
  /// Fewer candidates than requested; all available ones were returned.
  bool insufficient = false;

  std::size_t size() const { return labels.size(); }
  std::size_t count_label(std::uint8_t label) const;
};

enum class Axis { x = 0, y = 1, z = 2 };
Axis parse_axis(const std::string& name);
const char* axis_name(Axis axis);

/// Ray-parity inside test against a triangle soup. Rays run along +x, +y and +z from slightly
/// jittered origins; a point is inside when at least two of the three parities are odd.
std::vector<std::uint8_t> inside_oracle(const TriMesh& mesh, const Points& points);

/// Voxel centers labeled by the same three-ray majority parity, evaluated column by column.
LabelVolume voxelize_oracle(const TriMesh& mesh, const GridSpec& grid);

/// Slices perpendicular to `axis` at the given voxel indices, copied without interpolation.
SliceStack extract_slices(const LabelVolume& volume, Axis axis, const std::vector<int>& indices);

struct SamplingOptions {
  std::size_t n_fg = 20000;
  std::size_t n_bg = 20000;
  /// Background candidates lie within this distance (mm) of a label-1 center.
  /// Zero or negative selects 5x the largest voxel/pixel spacing.
  double bg_band = 0.0;
  std::uint64_t seed = 0;
  /// Uniform jitter within the voxel/pixel; off returns exact centers.
  bool jitter = true;
};

LabeledPoints sample_points(const LabelVolume& volume, const SamplingOptions& options);
LabeledPoints sample_points(const SliceStack& stack, const SamplingOptions& options);

/// Squared Euclidean distance (mm^2) from each voxel center to the nearest label-1 center.
std::vector<double> squared_distance_to_foreground(const LabelVolume& volume);

/// `<stem>.lvh.json` header plus `<stem>.lvr` raw payload.
void save_volume(const LabelVolume& volume, const std::filesystem::path& header_path);
LabelVolume load_volume(const std::filesystem::path& header_path);

/// `<stem>.json` manifest plus one `<stem>.sNNN.lvr` payload per slice.
void save_slices(const SliceStack& stack, const std::filesystem::path& manifest_path);
SliceStack load_slices(const std::filesystem::path& manifest_path);

/// Path of the raw payload paired with a header: `a/b.lvh.json` -> `a/b.lvr`.
std::filesystem::path volume_payload_path(const std::filesystem::path& header_path);

}  // namespace ghd
