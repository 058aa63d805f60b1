#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ghd/dvs.hpp"
#include "ghd/losses.hpp"
#include "ghd/spectral.hpp"
#include "ghd/volume.hpp"

namespace ghd {

// ---------------------------------------------------------------------------
// Rigid pose

/// x -> s R (x - pivot) + pivot + t.
struct RigidPose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  Vec3 pivot = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * (rotation * (x - pivot)) + pivot + translation; }
  Points apply(const Points& x) const;
  TriMesh apply(const TriMesh& mesh) const;
  void validate() const;
};

/// Angle (radians) of the relative rotation between two unit quaternions.
double rotation_angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b);

// ---------------------------------------------------------------------------
// Adam

struct AdamParams {
  double learning_rate = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;
};

/// Advances the moments and returns the parameter step -lr m_hat / (sqrt(v_hat) + eps).
/// Throws NumericalError naming the iteration on a non-finite gradient.
Eigen::VectorXd adam_update(AdamState& state, const Eigen::VectorXd& gradient, const AdamParams& params);

// ---------------------------------------------------------------------------
// Configuration

enum class Parameterization { ghd, vertex };
const char* parameterization_name(Parameterization p);
Parameterization parse_parameterization(const std::string& s);

struct RigidConfig {
  bool enabled = true;
  int iterations = 150;
  double lr_translation = 0.5;
  double lr_rotation = 0.02;
  double lr_scale = 0.01;
  bool estimate_scale = false;
  int restarts = 8;
  std::size_t samples = 2000;
};

struct EvalConfig {
  double beta = 1e3;
  /// Grid spacing (mm) when the reference is a mesh; 0 picks the longest box side / 128.
  double spacing = 0.0;
  std::size_t surface_samples = kDefaultSurfaceSamples;
};

struct FitConfig {
  Eigen::Index modes = 36;
  int iterations = 400;
  AdamParams adam;
  double beta_start = 10.0;
  double beta_end = 1e3;
  int beta_ramp_iterations = 200;
  LossWeights weights;
  std::size_t n_fg = 20000;
  std::size_t n_bg = 20000;
  double bg_band = 0.0;
  std::uint64_t seed = 0;
  RigidConfig rigid;
  Quadrature quadrature = Quadrature::facet;
  bool frozen_geometry = false;
  LaplacianOptions laplacian;
  Parameterization parameterization = Parameterization::ghd;
  double tolerance = 1e-5;
  int tolerance_window = 20;
  /// Treat an exhausted iteration budget as non-convergence.
  bool strict_convergence = false;
  EvalConfig eval;

  void validate() const;
};

/// beta at a given iteration: geometric ramp from beta_start to beta_end, then constant.
double beta_at(const FitConfig& config, int iteration);

nlohmann::json to_json(const FitConfig& config);
/// Every field is required; a missing or mistyped one raises ValidationError naming its path.
FitConfig fit_config_from_json(const nlohmann::json& j);
FitConfig load_fit_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Rigid alignment

struct RigidResult {
  RigidPose pose;
  double loss = 0.0;  ///< one-sided mean squared distance, mm^2
  int restart = 0;
  bool diverged = false;
};

/// Foreground-only kernel of the rigid objective: mean squared distance from posed samples to the nearest target.
double rigid_objective(const Points& samples, const RigidPose& pose, const Points& targets);

RigidResult rigid_align(const TriMesh& canonical, const LabeledPoints& target, const RigidConfig& config,
                        std::uint64_t seed);

// ---------------------------------------------------------------------------
// Evaluation

struct Metrics {
  std::optional<double> dice_3d;
  std::vector<double> dice_per_slice;
  std::optional<double> dice_slices;  ///< pooled over all slice pixels
  std::optional<double> chamfer;
  std::optional<double> hausdorff;
  double gar = 0.0;
  double volume = 0.0;
};

/// Voxel centers inside the mesh box plus a margin, labeled by binarized occupancy; zero elsewhere.
LabelVolume binarize_occupancy(const TriMesh& mesh, const GridSpec& grid, double beta,
                               Quadrature q = Quadrature::facet);

double dice_binary(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b);

Metrics evaluate(const TriMesh& mesh, const LabelVolume& reference, const EvalConfig& config = {});
Metrics evaluate(const TriMesh& mesh, const SliceStack& reference, const EvalConfig& config = {});
Metrics evaluate(const TriMesh& mesh, const TriMesh& reference, const EvalConfig& config = {}, std::uint64_t seed = 0);

nlohmann::json to_json(const Metrics& m);

// ---------------------------------------------------------------------------
// Fitting

struct TraceRow {
  int iteration = 0;
  double beta = 0.0;
  double loss = 0.0;
  double dice = 0.0;
  double thickness = 0.0;
  double grad_norm = 0.0;
};

enum class StopReason { tolerance, budget, diverged };
const char* stop_reason_name(StopReason r);

struct FitReport {
  std::vector<TraceRow> trace;
  Metrics metrics;
  double gar_before = 0.0;
  double gar_after = 0.0;
  double volume = 0.0;
  int iterations_run = 0;
  StopReason stop_reason = StopReason::budget;
  bool converged = true;
  RigidResult rigid;
  std::size_t num_points = 0;
  bool sampling_insufficient = false;
  Parameterization parameterization = Parameterization::ghd;
  double seconds = 0.0;
  std::string timestamp;
};

struct FitResult {
  TriMesh mesh;
  TriMesh aligned;
  GhdCoefficients coefficients;
  FitReport report;
};

/// Core loop on prepared supervision points; the metrics of the report are left empty.
FitResult fit_points(const TriMesh& canonical, const LabeledPoints& points, const FitConfig& config);

FitResult fit_ghd(const TriMesh& canonical, const LabelVolume& supervision, const FitConfig& config);
FitResult fit_ghd(const TriMesh& canonical, const SliceStack& supervision, const FitConfig& config);

/// Report JSON. Wall-clock data sits under "timing" so the rest is reproducible byte for byte.
nlohmann::json to_json(const FitReport& report, const FitConfig& config);
void write_trace_csv(const FitReport& report, const std::filesystem::path& path);

nlohmann::json coefficients_to_json(const GhdCoefficients& c, Parameterization p);
GhdCoefficients coefficients_from_json(const nlohmann::json& j);

/// (v_ed - v_es) / v_ed. Throws for v_ed <= 0; warns outside 0 <= v_es <= v_ed.
double ejection_fraction(double v_ed, double v_es);

}  // namespace ghd
