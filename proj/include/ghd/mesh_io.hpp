#pragma once

#include <filesystem>
#include <iosfwd>

#include "ghd/mesh.hpp"

namespace ghd {

/// Reads `v` and triangular `f` records of an ASCII OBJ file (1-based or negative indices).
/// Normals, texture coordinates, groups and materials are ignored.
TriMesh load_mesh(const std::filesystem::path& path);
TriMesh read_obj(std::istream& in);

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, std::ostream& out);

}  // namespace ghd
