#include "ghd/mesh_io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>

namespace ghd {
namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, int line) {
  try {
    std::size_t used = 0;
    double value = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return value;
  } catch (const std::exception&) {
    throw ParseError("invalid coordinate '" + tok + "'", line);
  }
}

std::int64_t parse_index(const std::string& tok, int line) {
  const std::string head = tok.substr(0, tok.find('/'));
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), value);
  if (ec != std::errc() || ptr != head.data() + head.size() || head.empty()) {
    throw ParseError("invalid face index '" + tok + "'", line);
  }
  return value;
}

}  // namespace

TriMesh read_obj(std::istream& in) {
  std::vector<Vec3> verts;
  std::vector<std::array<std::int64_t, 3>> raw_faces;
  std::vector<int> face_lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto toks = tokenize(line);
    if (toks.empty()) continue;
    if (toks[0] == "v") {
      if (toks.size() != 4 && toks.size() != 5) throw ParseError("vertex record needs 3 coordinates", lineno);
      verts.emplace_back(parse_double(toks[1], lineno), parse_double(toks[2], lineno), parse_double(toks[3], lineno));
    } else if (toks[0] == "f") {
      if (toks.size() != 4) {
        throw ParseError("face record has " + std::to_string(toks.size() - 1) + " vertices; only triangles are supported",
                         lineno);
      }
      std::array<std::int64_t, 3> f{};
      for (int k = 0; k < 3; ++k) {
        std::int64_t idx = parse_index(toks[static_cast<std::size_t>(k) + 1], lineno);
        const auto nv = static_cast<std::int64_t>(verts.size());
        if (idx < 0) idx = nv + idx + 1;  // relative reference
        if (idx < 1 || idx > nv) {
          throw ParseError("face index " + toks[static_cast<std::size_t>(k) + 1] + " out of range (1.." +
                               std::to_string(nv) + ")",
                           lineno);
        }
        f[static_cast<std::size_t>(k)] = idx - 1;
      }
      raw_faces.push_back(f);
      face_lines.push_back(lineno);
    } else if (toks[0] == "vn" || toks[0] == "vt" || toks[0] == "vp" || toks[0] == "o" || toks[0] == "g" ||
               toks[0] == "s" || toks[0] == "usemtl" || toks[0] == "mtllib") {
      continue;
    } else {
      throw ParseError("unsupported record '" + toks[0] + "'", lineno);
    }
  }
  Points v(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) v.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  std::vector<Face> faces;
  faces.reserve(raw_faces.size());
  for (std::size_t i = 0; i < raw_faces.size(); ++i) {
    const auto& rf = raw_faces[i];
    if (rf[0] == rf[1] || rf[1] == rf[2] || rf[0] == rf[2]) throw ParseError("face repeats a vertex", face_lines[i]);
    faces.push_back({static_cast<std::int32_t>(rf[0]), static_cast<std::int32_t>(rf[1]),
                     static_cast<std::int32_t>(rf[2])});
  }
  return TriMesh(std::move(v), std::move(faces));
}

TriMesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mesh file " + path.string());
  try {
    return read_obj(in);
  } catch (const ParseError& e) {
    throw ParseError(e.message(), e.line(), path.string());
  }
}

void write_obj(const TriMesh& mesh, std::ostream& out) {
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  const Points& v = mesh.vertices();
  for (Eigen::Index i = 0; i < v.rows(); ++i) out << "v " << v(i, 0) << ' ' << v(i, 1) << ' ' << v(i, 2) << '\n';
  for (const Face& f : mesh.faces()) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write mesh file " + path.string());
  write_obj(mesh, out);
  if (!out) throw Error("failed writing mesh file " + path.string());
}

}  // namespace ghd
