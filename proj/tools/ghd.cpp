// ghd command-line front end.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"

#include "ghd/fit.hpp"
#include "ghd/log.hpp"
#include "ghd/mesh_io.hpp"
#include "ghd/phantom.hpp"

using namespace ghd;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitNotConverged = 2;

struct Globals {
  std::optional<std::uint64_t> seed;
  int verbose = 0;
  bool quiet = false;
};

Vec3 parse_vec3(const std::string& s, const char* what) {
  Vec3 v;
  char c1 = 0, c2 = 0;
  std::istringstream in(s);
  if (!(in >> v.x() >> c1 >> v.y() >> c2 >> v.z()) || c1 != ',' || c2 != ',' || !(in >> std::ws).eof())
    throw ValidationError(std::string(what) + ": expected x,y,z but got '" + s + "'");
  return v;
}

void write_json(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out);
  if (!f) throw FormatError("cannot write " + out);
  f << text;
}

bool has_json_format(const std::filesystem::path& p, const char* format) {
  std::ifstream in(p);
  if (!in) throw FormatError("cannot open " + p.string());
  try {
    const json j = json::parse(in);
    return j.is_object() && j.value("format", "") == format;
  } catch (const json::parse_error&) {
    return false;
  }
}

bool is_volume(const std::filesystem::path& p) { return has_json_format(p, "ghd-label-volume"); }
bool is_slices(const std::filesystem::path& p) { return has_json_format(p, "ghd-slice-stack"); }

void require_file(const std::string& p) {
  if (!std::filesystem::exists(p)) throw FormatError("no such file: " + p);
}

/// Prints the summary line and writes the optional voxelization.
void finish_synth(const TriMesh& mesh, const std::string& out, double voxel, const std::string& volume_out) {
  save_mesh(mesh, out);
  json j{{"mesh", out},
         {"vertices", mesh.num_vertices()},
         {"faces", mesh.num_faces()},
         {"volume", enclosed_volume(mesh)},
         {"gar", good_angle_ratio(mesh)}};
  if (!volume_out.empty()) {
    if (!(voxel > 0)) throw ValidationError("--volume needs --voxelize <spacing>");
    const LabelVolume vol = voxelize_oracle(mesh, grid_covering(mesh, voxel, 2.0 * voxel));
    save_volume(vol, volume_out);
    j["volume_file"] = volume_out;
    j["voxels"] = vol.grid.num_voxels();
    j["foreground_voxels"] = vol.count();
  }
  write_json(j, "-");
}

Points read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
  const json& arr = j.is_object() ? j.at("points") : j;
  if (!arr.is_array()) throw FormatError(path + ": expected an array of [x, y, z]");
  Points p(static_cast<Eigen::Index>(arr.size()), 3);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_array() || arr[i].size() != 3)
      throw FormatError(path + ": point " + std::to_string(i) + " must have 3 coordinates");
    for (int d = 0; d < 3; ++d) p(static_cast<Eigen::Index>(i), d) = arr[i][static_cast<std::size_t>(d)].get<double>();
  }
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-harmonic shape fitting with differentiable voxel slicing"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Override every seed (config, sampling, surface metrics)");
  app.add_flag("-v,--verbose", g.verbose, "More logging (repeat for debug)");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a phantom mesh and optional oracle voxelization");
  synth->require_subcommand(1);
  std::string out, volume_out;
  double voxel = 0.0;
  auto add_outputs = [&](CLI::App* c) {
    c->add_option("-o,--out", out, "Output OBJ")->required();
    c->add_option("--voxelize", voxel, "Voxel spacing (mm) for --volume");
    c->add_option("--volume", volume_out, "Output label volume header (.lvh.json)");
  };
  auto* ico = synth->add_subcommand("icosphere", "Subdivided icosahedron sphere");
  int subdiv = 3;
  double radius = 10.0;
  std::string center = "0,0,0";
  ico->add_option("--subdiv", subdiv, "Subdivision level")->capture_default_str();
  ico->add_option("-r,--radius", radius, "Radius (mm)")->capture_default_str();
  ico->add_option("--center", center, "Center x,y,z")->capture_default_str();
  add_outputs(ico);

  auto* shell = synth->add_subcommand("shell", "Thick-walled truncated spheroid");
  ShellPhantomParams sp;
  std::string outer = "30,30,50";
  shell->add_option("--outer", outer, "Outer semi-axes a,b,c (mm)")->capture_default_str();
  shell->add_option("--wall", sp.wall, "Wall thickness (mm)")->capture_default_str();
  shell->add_option("--cut", sp.base_cut, "Base plane as a fraction of the long axis from the apex")
      ->capture_default_str();
  shell->add_option("--resolution", sp.resolution, "Segments around the equator")->capture_default_str();
  add_outputs(shell);

  auto* cavity = synth->add_subcommand("cavity", "Solid truncated spheroid");
  CavityPhantomParams cp;
  std::string radii = "22,22,42";
  cavity->add_option("--radii", radii, "Semi-axes a,b,c (mm)")->capture_default_str();
  cavity->add_option("--cut-z", cp.cut_z, "z of the cut plane (mm)")->capture_default_str();
  cavity->add_option("--resolution", cp.resolution, "Segments around the equator")->capture_default_str();
  add_outputs(cavity);

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a canonical mesh to a label volume or slice stack");
  std::string canonical_path, supervision_path, config_path, prefix;
  std::optional<int> iterations;
  bool allow_nonconverged = false;
  fit->add_option("canonical", canonical_path, "Canonical mesh (OBJ)")->required();
  fit->add_option("supervision", supervision_path, "Label volume header or slice manifest")->required();
  fit->add_option("-c,--config", config_path, "FitConfig JSON (every field required); defaults when omitted");
  fit->add_option("-o,--out", prefix, "Output prefix")->required();
  fit->add_option("--iterations", iterations, "Override the coefficient iteration budget");
  fit->add_flag("--allow-nonconverged", allow_nonconverged, "Exit 0 even when the convergence flag is false");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Compare a mesh with a reference mesh, volume or slices");
  std::string mesh_path, reference_path, metrics_out;
  double eval_spacing = 0.0;
  std::size_t surface_samples = kDefaultSurfaceSamples;
  metrics->add_option("mesh", mesh_path, "Mesh (OBJ)")->required();
  metrics->add_option("reference", reference_path, "Reference OBJ, label volume or slice manifest")->required();
  metrics->add_option("-o,--out", metrics_out, "Output JSON (default stdout)");
  metrics->add_option("--spacing", eval_spacing, "Grid spacing for mesh references (0 = auto)");
  metrics->add_option("--samples", surface_samples, "Surface samples for CD/HD")->capture_default_str();

  // slice
  auto* slice = app.add_subcommand("slice", "Extract axis-aligned slices from a label volume");
  std::string slice_volume, axis = "z", slice_out;
  std::vector<int> indices;
  slice->add_option("volume", slice_volume, "Label volume header")->required();
  slice->add_option("--axis", axis, "x, y or z")->capture_default_str();
  slice->add_option("--indices", indices, "Voxel indices along the axis")->required()->delimiter(',');
  slice->add_option("-o,--out", slice_out, "Output manifest (.json)")->required();

  // occupancy
  auto* occ = app.add_subcommand("occupancy", "Raw and smooth occupancy at given points");
  std::string occ_mesh, occ_points, occ_out, quadrature = "facet";
  double occ_beta = 1e3;
  occ->add_option("mesh", occ_mesh, "Mesh (OBJ)")->required();
  occ->add_option("points", occ_points, "JSON array of [x, y, z] or {\"points\": [...]}")->required();
  occ->add_option("--beta", occ_beta, "Relaxation sharpness")->capture_default_str();
  occ->add_option("--quadrature", quadrature, "facet or vertex")->capture_default_str();
  occ->add_option("-o,--out", occ_out, "Output JSON (default stdout)");

  // ef
  auto* ef = app.add_subcommand("ef", "Ejection fraction from two volumes");
  double v_ed = 0.0, v_es = 0.0;
  int ef_digits = 2;
  ef->add_option("v_ed", v_ed, "End-diastolic volume (mm^3)")->required();
  ef->add_option("v_es", v_es, "End-systolic volume (mm^3)")->required();
  ef->add_option("--digits", ef_digits, "Decimal places")->capture_default_str();

  // config
  auto* cfg_cmd = app.add_subcommand("config", "Print the default FitConfig JSON");
  std::string cfg_out;
  cfg_cmd->add_option("-o,--out", cfg_out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  set_log_level(g.quiet ? LogLevel::quiet : g.verbose >= 2 ? LogLevel::debug : g.verbose == 1 ? LogLevel::info
                                                                                                : LogLevel::warn);
  try {
    if (*synth) {
      if (*ico) {
        finish_synth(make_icosphere(subdiv, radius, parse_vec3(center, "--center")), out, voxel, volume_out);
      } else if (*shell) {
        sp.outer_radii = parse_vec3(outer, "--outer");
        finish_synth(make_shell_phantom(sp), out, voxel, volume_out);
      } else {
        cp.radii = parse_vec3(radii, "--radii");
        finish_synth(make_cavity_phantom(cp), out, voxel, volume_out);
      }
      return kExitOk;
    }

    if (*fit) {
      require_file(canonical_path);
      require_file(supervision_path);
      FitConfig cfg = config_path.empty() ? FitConfig{} : load_fit_config(config_path);
      if (g.seed) cfg.seed = *g.seed;
      if (iterations) cfg.iterations = *iterations;
      cfg.validate();
      const TriMesh canonical = load_mesh(canonical_path);
      FitResult r;
      if (is_volume(supervision_path)) {
        r = fit_ghd(canonical, load_volume(supervision_path), cfg);
      } else if (is_slices(supervision_path)) {
        r = fit_ghd(canonical, load_slices(supervision_path), cfg);
      } else {
        throw FormatError(supervision_path + ": neither a label volume header nor a slice manifest");
      }
      save_mesh(r.mesh, prefix + ".obj");
      write_json(coefficients_to_json(r.coefficients, cfg.parameterization), prefix + ".coefficients.json");
      write_json(to_json(r.report, cfg), prefix + ".report.json");
      write_trace_csv(r.report, prefix + ".trace.csv");
      const auto& m = r.report.metrics;
      std::cerr << "fit: " << r.report.iterations_run << " iterations, stop " << stop_reason_name(r.report.stop_reason)
                << ", dice " << (m.dice_3d ? *m.dice_3d : m.dice_slices.value_or(0.0)) << ", GAR "
                << r.report.gar_before << " -> " << r.report.gar_after << "\n";
      if (!r.report.converged && !allow_nonconverged) {
        std::cerr << "fit: not converged\n";
        return kExitNotConverged;
      }
      return kExitOk;
    }

    if (*metrics) {
      require_file(mesh_path);
      require_file(reference_path);
      const TriMesh mesh = load_mesh(mesh_path);
      EvalConfig ec;
      ec.spacing = eval_spacing;
      ec.surface_samples = surface_samples;
      Metrics m;
      std::string kind;
      if (is_volume(reference_path)) {
        m = evaluate(mesh, load_volume(reference_path), ec);
        kind = "volume";
      } else if (is_slices(reference_path)) {
        m = evaluate(mesh, load_slices(reference_path), ec);
        kind = "slices";
      } else {
        m = evaluate(mesh, load_mesh(reference_path), ec, g.seed.value_or(0));
        kind = "mesh";
      }
      json j = to_json(m);
      j["reference_kind"] = kind;
      write_json(j, metrics_out);
      return kExitOk;
    }

    if (*slice) {
      require_file(slice_volume);
      const SliceStack st = extract_slices(load_volume(slice_volume), parse_axis(axis), indices);
      save_slices(st, slice_out);
      write_json({{"manifest", slice_out}, {"slices", st.slices.size()}}, "-");
      return kExitOk;
    }

    if (*occ) {
      require_file(occ_mesh);
      require_file(occ_points);
      const Quadrature q = parse_quadrature(quadrature);
      const OccupancyResult r = occupancy(load_mesh(occ_mesh), read_points(occ_points), occ_beta, q);
      write_json({{"beta", occ_beta},
                  {"quadrature", quadrature_name(q)},
                  {"raw", std::vector<double>(r.raw.data(), r.raw.data() + r.raw.size())},
                  {"smooth", std::vector<double>(r.smooth.data(), r.smooth.data() + r.smooth.size())},
                  {"num_flagged", r.num_flagged}},
                 occ_out);
      return kExitOk;
    }

    if (*ef) {
      std::printf("%.*f\n", ef_digits, ejection_fraction(v_ed, v_es));
      return kExitOk;
    }

    if (*cfg_cmd) {
      FitConfig c;
      if (g.seed) c.seed = *g.seed;
      write_json(to_json(c), cfg_out);
      return kExitOk;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
