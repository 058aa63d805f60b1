#include "ghd/fit.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ghd/kdtree.hpp"
#include "ghd/log.hpp"
#include "ghd/random.hpp"

namespace ghd {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Rigid pose

Points RigidPose::apply(const Points& x) const {
  const Mat3 A = scale * rotation.toRotationMatrix();
  Points out = (x.rowwise() - pivot.transpose()) * A.transpose();
  out.rowwise() += (pivot + translation).transpose();
  return out;
}

TriMesh RigidPose::apply(const TriMesh& mesh) const { return mesh.with_vertices(apply(mesh.vertices())); }

void RigidPose::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-9) throw ValidationError("RigidPose: rotation quaternion is not unit");
  if (!(scale > 0)) throw ValidationError("RigidPose: scale must be positive");
  if (!translation.allFinite() || !pivot.allFinite()) throw ValidationError("RigidPose: non-finite translation");
}

double rotation_angle_between(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return a.angularDistance(b);
}

// ---------------------------------------------------------------------------
// Adam

Eigen::VectorXd adam_update(AdamState& state, const Eigen::VectorXd& gradient, const AdamParams& p) {
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(gradient.size());
    state.v = Eigen::VectorXd::Zero(gradient.size());
  }
  if (state.m.size() != gradient.size()) throw ValidationError("adam_update: gradient size changed");
  if (!gradient.allFinite()) {
    throw NumericalError("adam_update: non-finite gradient at iteration " + std::to_string(state.t + 1));
  }
  ++state.t;
  state.m = p.beta1 * state.m + (1.0 - p.beta1) * gradient;
  state.v = p.beta2 * state.v + (1.0 - p.beta2) * gradient.cwiseAbs2();
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));
  return (-p.learning_rate * (state.m / c1).array() / ((state.v / c2).array().sqrt() + p.epsilon)).matrix();
}

// ---------------------------------------------------------------------------
// Configuration

const char* parameterization_name(Parameterization p) { return p == Parameterization::ghd ? "ghd" : "vertex"; }

Parameterization parse_parameterization(const std::string& s) {
  if (s == "ghd") return Parameterization::ghd;
  if (s == "vertex") return Parameterization::vertex;
  throw ValidationError("unknown parameterization '" + s + "' (expected ghd or vertex)");
}

void FitConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ValidationError(std::string("FitConfig: ") + what);
  };
  require(modes >= 1, "modes must be >= 1");
  require(iterations >= 0, "iterations must be >= 0");
  require(adam.learning_rate > 0, "learning_rate must be positive");
  require(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1, "Adam moments must be in [0, 1)");
  require(adam.epsilon > 0, "adam_epsilon must be positive");
  require(beta_start > 0 && beta_end > 0, "beta must be positive");
  require(beta_ramp_iterations >= 0, "beta_ramp_iterations must be >= 0");
  require(weights.lambda_th >= 0 && weights.lambda_vol >= 0 && weights.lambda_inc >= 0, "loss weights must be >= 0");
  require(weights.t_min > 0, "t_min must be positive");
  require(weights.lambda_n >= 0, "lambda_n must be >= 0");
  require(n_fg + n_bg > 0, "sampling budget is empty");
  require(rigid.iterations >= 0 && rigid.restarts >= 1, "rigid iterations >= 0 and restarts >= 1");
  require(rigid.lr_translation > 0 && rigid.lr_rotation > 0 && rigid.lr_scale > 0, "rigid rates must be positive");
  require(rigid.samples > 0, "rigid samples must be positive");
  require(tolerance >= 0 && tolerance_window >= 1, "tolerance >= 0 and tolerance_window >= 1");
  require(eval.beta > 0 && eval.spacing >= 0 && eval.surface_samples > 0, "eval settings out of range");
}

double beta_at(const FitConfig& c, int iteration) {
  if (c.beta_ramp_iterations <= 0 || iteration >= c.beta_ramp_iterations) return c.beta_end;
  const double f = static_cast<double>(iteration) / static_cast<double>(c.beta_ramp_iterations);
  return c.beta_start * std::pow(c.beta_end / c.beta_start, f);
}

json to_json(const FitConfig& c) {
  json j;
  j["modes"] = c.modes;
  j["iterations"] = c.iterations;
  j["learning_rate"] = c.adam.learning_rate;
  j["adam_beta1"] = c.adam.beta1;
  j["adam_beta2"] = c.adam.beta2;
  j["adam_epsilon"] = c.adam.epsilon;
  j["beta_start"] = c.beta_start;
  j["beta_end"] = c.beta_end;
  j["beta_ramp_iterations"] = c.beta_ramp_iterations;
  j["lambda_th"] = c.weights.lambda_th;
  j["t_min"] = c.weights.t_min;
  j["lambda_n"] = c.weights.lambda_n;
  j["lambda_vol"] = c.weights.lambda_vol;
  j["volume_target"] = c.weights.volume_target;
  j["lambda_inc"] = c.weights.lambda_inc;
  j["n_fg"] = c.n_fg;
  j["n_bg"] = c.n_bg;
  j["bg_band"] = c.bg_band;
  j["seed"] = c.seed;
  j["rigid"] = {{"enabled", c.rigid.enabled},
                {"iterations", c.rigid.iterations},
                {"lr_translation", c.rigid.lr_translation},
                {"lr_rotation", c.rigid.lr_rotation},
                {"lr_scale", c.rigid.lr_scale},
                {"estimate_scale", c.rigid.estimate_scale},
                {"restarts", c.rigid.restarts},
                {"samples", c.rigid.samples}};
  j["quadrature"] = quadrature_name(c.quadrature);
  j["frozen_geometry"] = c.frozen_geometry;
  j["laplacian"] = {{"kind", laplacian_kind_name(c.laplacian.kind)},
                    {"lambda_norm", c.laplacian.lambda_norm},
                    {"lambda_unw", c.laplacian.lambda_unw},
                    {"normalize_scale", c.laplacian.normalize_scale}};
  j["parameterization"] = parameterization_name(c.parameterization);
  j["tolerance"] = c.tolerance;
  j["tolerance_window"] = c.tolerance_window;
  j["strict_convergence"] = c.strict_convergence;
  j["eval"] = {{"beta", c.eval.beta}, {"spacing", c.eval.spacing}, {"surface_samples", c.eval.surface_samples}};
  return j;
}

namespace {

/// Strict field access with a dotted path in the error.
class Fields {
 public:
  Fields(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ValidationError("config: '" + where("") + "' must be an object");
  }

  template <class T>
  T get(const char* key) const {
    const auto it = j_.find(key);
    if (it == j_.end()) throw ValidationError("config: missing field '" + where(key) + "'");
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ValidationError("");
      } else if constexpr (std::is_arithmetic_v<T>) {
        if (!it->is_number()) throw ValidationError("");
        if constexpr (std::is_integral_v<T>) {
          if (!it->is_number_integer()) throw ValidationError("");
          if constexpr (std::is_unsigned_v<T>) {
            if (it->template get<long long>() < 0) throw ValidationError("");
          }
        }
      } else {
        if (!it->is_string()) throw ValidationError("");
      }
      return it->template get<T>();
    } catch (const std::exception&) {
      throw ValidationError("config: field '" + where(key) + "' has the wrong type");
    }
  }

  Fields sub(const char* key) const {
    const auto it = j_.find(key);
    if (it == j_.end()) throw ValidationError("config: missing field '" + where(key) + "'");
    return Fields(*it, where(key));
  }

  void reject_unknown(std::initializer_list<const char*> known) const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool ok = false;
      for (const char* k : known) ok = ok || it.key() == k;
      if (!ok) throw ValidationError("config: unknown field '" + where(it.key().c_str()) + "'");
    }
  }

 private:
  std::string where(const char* key) const {
    if (prefix_.empty()) return key;
    return *key ? prefix_ + "." + key : prefix_;
  }

  const json& j_;
  std::string prefix_;
};

}  // namespace

FitConfig fit_config_from_json(const json& j) {
  const Fields f(j, "");
  f.reject_unknown({"modes", "iterations", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon", "beta_start",
                    "beta_end", "beta_ramp_iterations", "lambda_th", "t_min", "lambda_n", "lambda_vol",
                    "volume_target", "lambda_inc", "n_fg", "n_bg", "bg_band", "seed", "rigid", "quadrature",
                    "frozen_geometry", "laplacian", "parameterization", "tolerance", "tolerance_window",
                    "strict_convergence", "eval"});
  FitConfig c;
  c.modes = f.get<Eigen::Index>("modes");
  c.iterations = f.get<int>("iterations");
  c.adam.learning_rate = f.get<double>("learning_rate");
  c.adam.beta1 = f.get<double>("adam_beta1");
  c.adam.beta2 = f.get<double>("adam_beta2");
  c.adam.epsilon = f.get<double>("adam_epsilon");
  c.beta_start = f.get<double>("beta_start");
  c.beta_end = f.get<double>("beta_end");
  c.beta_ramp_iterations = f.get<int>("beta_ramp_iterations");
  c.weights.lambda_th = f.get<double>("lambda_th");
  c.weights.t_min = f.get<double>("t_min");
  c.weights.lambda_n = f.get<double>("lambda_n");
  c.weights.lambda_vol = f.get<double>("lambda_vol");
  c.weights.volume_target = f.get<double>("volume_target");
  c.weights.lambda_inc = f.get<double>("lambda_inc");
  c.n_fg = f.get<std::size_t>("n_fg");
  c.n_bg = f.get<std::size_t>("n_bg");
  c.bg_band = f.get<double>("bg_band");
  c.seed = f.get<std::uint64_t>("seed");

  const Fields r = f.sub("rigid");
  r.reject_unknown(
      {"enabled", "iterations", "lr_translation", "lr_rotation", "lr_scale", "estimate_scale", "restarts", "samples"});
  c.rigid.enabled = r.get<bool>("enabled");
  c.rigid.iterations = r.get<int>("iterations");
  c.rigid.lr_translation = r.get<double>("lr_translation");
  c.rigid.lr_rotation = r.get<double>("lr_rotation");
  c.rigid.lr_scale = r.get<double>("lr_scale");
  c.rigid.estimate_scale = r.get<bool>("estimate_scale");
  c.rigid.restarts = r.get<int>("restarts");
  c.rigid.samples = r.get<std::size_t>("samples");

  c.quadrature = parse_quadrature(f.get<std::string>("quadrature"));
  c.frozen_geometry = f.get<bool>("frozen_geometry");

  const Fields l = f.sub("laplacian");
  l.reject_unknown({"kind", "lambda_norm", "lambda_unw", "normalize_scale"});
  c.laplacian.kind = parse_laplacian_kind(l.get<std::string>("kind"));
  c.laplacian.lambda_norm = l.get<double>("lambda_norm");
  c.laplacian.lambda_unw = l.get<double>("lambda_unw");
  c.laplacian.normalize_scale = l.get<bool>("normalize_scale");

  c.parameterization = parse_parameterization(f.get<std::string>("parameterization"));
  c.tolerance = f.get<double>("tolerance");
  c.tolerance_window = f.get<int>("tolerance_window");
  c.strict_convergence = f.get<bool>("strict_convergence");

  const Fields e = f.sub("eval");
  e.reject_unknown({"beta", "spacing", "surface_samples"});
  c.eval.beta = e.get<double>("beta");
  c.eval.spacing = e.get<double>("spacing");
  c.eval.surface_samples = e.get<std::size_t>("surface_samples");

  c.validate();
  return c;
}

FitConfig load_fit_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  try {
    return fit_config_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Rigid alignment

namespace {

Vec3 principal_axis(const Points& pts) {
  const Vec3 mean = pts.colwise().mean().transpose();
  const Points c = pts.rowwise() - mean.transpose();
  const Mat3 cov = c.transpose() * c;
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  Vec3 axis = es.eigenvectors().col(2);
  Eigen::Index at;
  axis.cwiseAbs().maxCoeff(&at);
  if (axis(at) < 0) axis = -axis;
  return axis;
}

struct RigidEval {
  double loss;
  Eigen::Matrix<double, 8, 1> grad;  // (w, x, y, z, tx, ty, tz, log s)
};

RigidEval rigid_eval(const Points& samples, const RigidPose& pose, const KdTree& tree, const Points& targets) {
  const Eigen::Index n = samples.rows();
  const Mat3 R = pose.rotation.toRotationMatrix();
  Vec3 gt = Vec3::Zero(), gw = Vec3::Zero();
  double gs = 0.0, loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 p = pose.scale * (R * (samples.row(i).transpose() - pose.pivot));
    const Vec3 y = p + pose.pivot + pose.translation;
    const auto hit = tree.nearest(y);
    const Vec3 r = y - targets.row(hit.index).transpose();
    loss += r.squaredNorm();
    const Vec3 g = 2.0 * r / static_cast<double>(n);
    gt += g;
    gw += p.cross(g);
    gs += g.dot(p);
  }
  RigidEval e;
  e.loss = loss / static_cast<double>(n);
  const double w = pose.rotation.w();
  const Vec3 v = pose.rotation.vec();
  e.grad(0) = -2.0 * gw.dot(v);
  e.grad.segment<3>(1) = 2.0 * (w * gw + gw.cross(v));
  e.grad.segment<3>(4) = gt;
  e.grad(7) = gs;
  return e;
}

Points foreground_positions(const LabeledPoints& pts) {
  const auto nfg = static_cast<Eigen::Index>(pts.count_label(1));
  Points fg(nfg, 3);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (pts.labels[i]) fg.row(k++) = pts.positions.row(static_cast<Eigen::Index>(i));
  return fg;
}

}  // namespace

double rigid_objective(const Points& samples, const RigidPose& pose, const Points& targets) {
  const KdTree tree(targets);
  return tree.nearest_squared_distances(pose.apply(samples)).mean();
}

RigidResult rigid_align(const TriMesh& canonical, const LabeledPoints& target, const RigidConfig& cfg,
                        std::uint64_t seed) {
  const Points fg = foreground_positions(target);
  if (fg.rows() == 0) throw ValidationError("rigid_align: target has no foreground points");
  const KdTree tree(fg);
  const Points samples = sample_surface(canonical, cfg.samples, seed);
  const Vec3 pivot = samples.colwise().mean().transpose();
  const Vec3 axis = principal_axis(samples);
  const Vec3 t0 = fg.colwise().mean().transpose() - pivot;

  Eigen::Matrix<double, 8, 1> rates;
  rates << Eigen::Vector4d::Constant(cfg.lr_rotation), Vec3::Constant(cfg.lr_translation), cfg.lr_scale;
  AdamParams unit;
  unit.learning_rate = 1.0;

  RigidResult best;
  best.loss = INFINITY;
  for (int k = 0; k < cfg.restarts; ++k) {
    RigidPose pose;
    pose.pivot = pivot;
    pose.translation = t0;
    pose.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(2.0 * M_PI * k / cfg.restarts, axis));
    double log_scale = 0.0;
    AdamState state;
    RigidPose run_best = pose;
    double run_best_loss = INFINITY, first_loss = INFINITY;
    bool diverged = false;
    for (int it = 0; it <= cfg.iterations; ++it) {
      const RigidEval e = rigid_eval(samples, pose, tree, fg);
      if (it == 0) first_loss = e.loss;
      if (!std::isfinite(e.loss) || e.loss > 10.0 * first_loss + 1e-12) {
        diverged = true;
        break;
      }
      if (e.loss < run_best_loss) {
        run_best_loss = e.loss;
        run_best = pose;
      }
      if (it == cfg.iterations) break;
      Eigen::Matrix<double, 8, 1> g = e.grad;
      if (!cfg.estimate_scale) g(7) = 0.0;
      Eigen::VectorXd step;
      try {
        step = adam_update(state, g, unit);
      } catch (const NumericalError&) {
        diverged = true;
        break;
      }
      step.array() *= rates.array();
      Eigen::Vector4d q(pose.rotation.w(), pose.rotation.x(), pose.rotation.y(), pose.rotation.z());
      q += step.head<4>();
      q.normalize();
      pose.rotation = Eigen::Quaterniond(q(0), q(1), q(2), q(3));
      pose.translation += step.segment<3>(4);
      if (cfg.estimate_scale) {
        log_scale += step(7);
        pose.scale = std::exp(log_scale);
      }
    }
    if (diverged) log_warn("rigid_align: restart ", k, " diverged; keeping its best pose (loss ", run_best_loss, ")");
    log_debug("rigid_align: restart ", k, " loss ", run_best_loss);
    if (run_best_loss < best.loss) {
      best.pose = run_best;
      best.loss = run_best_loss;
      best.restart = k;
      best.diverged = diverged;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Evaluation

LabelVolume binarize_occupancy(const TriMesh& mesh, const GridSpec& grid, double beta, Quadrature q) {
  grid.validate();
  LabelVolume out(grid);
  auto [lo, hi] = mesh.bounding_box();
  std::array<int, 3> a{}, b{};
  for (int d = 0; d < 3; ++d) {
    const double margin = 2.0 * grid.spacing(d);
    a[d] = std::max(0, static_cast<int>(std::floor((lo(d) - margin - grid.origin(d)) / grid.spacing(d))));
    b[d] = std::min(grid.dims[d] - 1, static_cast<int>(std::ceil((hi(d) + margin - grid.origin(d)) / grid.spacing(d))));
    if (a[d] > b[d]) return out;
  }
  const std::size_t count = static_cast<std::size_t>(b[0] - a[0] + 1) * static_cast<std::size_t>(b[1] - a[1] + 1) *
                            static_cast<std::size_t>(b[2] - a[2] + 1);
  Points centers(static_cast<Eigen::Index>(count), 3);
  std::vector<std::size_t> flat(count);
  std::size_t n = 0;
  for (int k = a[2]; k <= b[2]; ++k)
    for (int j = a[1]; j <= b[1]; ++j)
      for (int i = a[0]; i <= b[0]; ++i) {
        centers.row(static_cast<Eigen::Index>(n)) = grid.center(i, j, k).transpose();
        flat[n++] = out.index(i, j, k);
      }
  const Eigen::VectorXd raw = winding_occupancy(quadrature_sources(mesh, q), centers);
  for (std::size_t i = 0; i < n; ++i) out.data[flat[i]] = smooth_occupancy(raw(static_cast<Eigen::Index>(i)), beta) > 0.5;
  return out;
}

double dice_binary(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  if (a.size() != b.size()) throw ValidationError("dice_binary: size mismatch");
  std::size_t inter = 0, sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    sa += a[i] != 0;
    sb += b[i] != 0;
  }
  return sa + sb == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

Metrics evaluate(const TriMesh& mesh, const LabelVolume& reference, const EvalConfig& cfg) {
  Metrics m;
  m.dice_3d = dice_binary(binarize_occupancy(mesh, reference.grid, cfg.beta).data, reference.data);
  m.gar = good_angle_ratio(mesh);
  m.volume = enclosed_volume(mesh);
  return m;
}

Metrics evaluate(const TriMesh& mesh, const SliceStack& reference, const EvalConfig& cfg) {
  reference.validate();
  Metrics m;
  const auto src = quadrature_sources(mesh, Quadrature::facet);
  auto [lo, hi] = mesh.bounding_box();
  std::size_t inter = 0, total = 0;
  for (const Slice& s : reference.slices) {
    const double margin = 2.0 * std::max(s.spacing[0], s.spacing[1]);
    std::vector<std::size_t> idx;
    std::vector<Vec3> centers;
    for (int j = 0; j < s.size[1]; ++j)
      for (int i = 0; i < s.size[0]; ++i) {
        const Vec3 c = s.pixel_center(i, j);
        if ((c.array() >= lo.array() - margin).all() && (c.array() <= hi.array() + margin).all()) {
          idx.push_back(static_cast<std::size_t>(i) + static_cast<std::size_t>(s.size[0]) * static_cast<std::size_t>(j));
          centers.push_back(c);
        }
      }
    Points pts(static_cast<Eigen::Index>(centers.size()), 3);
    for (std::size_t k = 0; k < centers.size(); ++k) pts.row(static_cast<Eigen::Index>(k)) = centers[k].transpose();
    std::vector<std::uint8_t> pred(s.mask.size(), 0);
    if (pts.rows() > 0) {
      const Eigen::VectorXd raw = winding_occupancy(src, pts);
      for (std::size_t k = 0; k < idx.size(); ++k)
        pred[idx[k]] = smooth_occupancy(raw(static_cast<Eigen::Index>(k)), cfg.beta) > 0.5;
    }
    m.dice_per_slice.push_back(dice_binary(pred, s.mask));
    for (std::size_t k = 0; k < pred.size(); ++k) {
      inter += pred[k] && s.mask[k];
      total += (pred[k] != 0) + (s.mask[k] != 0);
    }
  }
  m.dice_slices = total == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(total);
  m.gar = good_angle_ratio(mesh);
  m.volume = enclosed_volume(mesh);
  return m;
}

Metrics evaluate(const TriMesh& mesh, const TriMesh& reference, const EvalConfig& cfg, std::uint64_t seed) {
  auto [lo1, hi1] = mesh.bounding_box();
  auto [lo2, hi2] = reference.bounding_box();
  const Vec3 lo = lo1.cwiseMin(lo2), hi = hi1.cwiseMax(hi2);
  const double spacing = cfg.spacing > 0 ? cfg.spacing : (hi - lo).maxCoeff() / 128.0;
  const GridSpec grid = grid_covering(lo, hi, Vec3::Constant(spacing), 2.0 * spacing);
  const LabelVolume ref = voxelize_oracle(reference, grid);
  Metrics m;
  m.dice_3d = dice_binary(binarize_occupancy(mesh, grid, cfg.beta).data, ref.data);
  const auto d = surface_distances(mesh, reference, cfg.surface_samples, seed);
  m.chamfer = d.chamfer;
  m.hausdorff = d.hausdorff;
  m.gar = good_angle_ratio(mesh);
  m.volume = enclosed_volume(mesh);
  return m;
}

json to_json(const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"dice_3d", opt(m.dice_3d)},   {"dice_per_slice", m.dice_per_slice}, {"dice_slices", opt(m.dice_slices)},
          {"chamfer", opt(m.chamfer)},   {"hausdorff", opt(m.hausdorff)},      {"gar", m.gar},
          {"volume", m.volume}};
}

// ---------------------------------------------------------------------------
// Fitting

const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::tolerance: return "tolerance";
    case StopReason::budget: return "budget";
    case StopReason::diverged: return "diverged";
  }
  return "?";
}

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

}  // namespace

FitResult fit_points(const TriMesh& canonical, const LabeledPoints& points, const FitConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  if (!canonical.is_closed()) log_warn("fit: canonical mesh is not closed");
  if (points.count_label(1) == 0) throw ValidationError("fit: supervision has no foreground points");

  FitResult res;
  FitReport& rep = res.report;
  rep.timestamp = utc_timestamp();
  rep.parameterization = cfg.parameterization;
  rep.num_points = points.size();
  rep.sampling_insufficient = points.insufficient;
  rep.gar_before = good_angle_ratio(canonical);

  if (cfg.rigid.enabled && cfg.rigid.iterations > 0) {
    rep.rigid = rigid_align(canonical, points, cfg.rigid, Rng::derive(cfg.seed, 1));
  } else {
    rep.rigid.pose.pivot = canonical.vertices().colwise().mean().transpose();
    rep.rigid.loss = rigid_objective(sample_surface(canonical, cfg.rigid.samples, Rng::derive(cfg.seed, 1)),
                                     rep.rigid.pose, foreground_positions(points));
  }
  res.aligned = rep.rigid.pose.apply(canonical);

  const auto nv = static_cast<Eigen::Index>(canonical.num_vertices());
  const Eigen::Index m = std::min(cfg.modes, nv);
  const bool ghd = cfg.parameterization == Parameterization::ghd;
  res.coefficients = GhdCoefficients::Zero(ghd ? m : 0, 3);
  GhdBasis basis;
  if (ghd && cfg.iterations > 0) basis = ghd_basis(build_laplacian(res.aligned, cfg.laplacian), m);
  const double kappa = std::sqrt(static_cast<double>(nv));

  // Optimizer variable: normalized coefficients (ghd) or displacements (vertex), column-major.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(ghd ? m * 3 : nv * 3);
  auto current_mesh = [&](const Eigen::VectorXd& th) {
    if (ghd) {
      const GhdCoefficients phi = kappa * Eigen::Map<const Eigen::MatrixXd>(th.data(), m, 3);
      return cfg.iterations > 0 ? apply_ghd(res.aligned, basis, phi) : res.aligned;
    }
    return res.aligned.with_vertices(res.aligned.vertices() + Eigen::Map<const Eigen::MatrixXd>(th.data(), nv, 3));
  };

  LossOptions lo;
  lo.weights = cfg.weights;
  lo.quadrature = cfg.quadrature;
  lo.frozen_geometry = cfg.frozen_geometry;
  lo.rate_reference = &res.aligned;

  AdamState adam;
  rep.stop_reason = StopReason::budget;
  for (int it = 0; it < cfg.iterations; ++it) {
    lo.beta = beta_at(cfg, it);
    const TriMesh mesh = current_mesh(theta);
    LossEvaluation e;
    try {
      e = combined_loss(mesh, points, lo);
    } catch (const NumericalError& err) {
      log_warn("fit: iteration ", it, ": ", err.what());
      rep.stop_reason = StopReason::diverged;
      break;
    }
    Eigen::VectorXd grad;
    if (ghd) {
      const GhdCoefficients gc = kappa * coefficient_gradient(basis, e.gradient);
      grad = Eigen::Map<const Eigen::VectorXd>(gc.data(), gc.size());
    } else {
      grad = Eigen::Map<const Eigen::VectorXd>(e.gradient.data(), e.gradient.size());
    }
    rep.trace.push_back({it, lo.beta, e.terms.total, e.terms.dice, e.terms.thickness, grad.norm()});

    const int w = cfg.tolerance_window;
    if (it >= cfg.beta_ramp_iterations + w) {
      const double prev = rep.trace[static_cast<std::size_t>(it - w)].loss;
      if (std::abs(e.terms.total - prev) <= cfg.tolerance * std::max(std::abs(prev), 1e-300)) {
        rep.stop_reason = StopReason::tolerance;
        break;
      }
    }
    try {
      theta += adam_update(adam, grad, cfg.adam);
    } catch (const NumericalError& err) {
      log_warn("fit: ", err.what());
      rep.stop_reason = StopReason::diverged;
      break;
    }
    rep.iterations_run = it + 1;
  }
  if (!theta.allFinite()) throw NumericalError("fit: parameters became non-finite");

  res.mesh = current_mesh(theta);
  if (ghd) res.coefficients = kappa * Eigen::Map<const Eigen::MatrixXd>(theta.data(), m, 3);
  rep.converged = rep.stop_reason == StopReason::tolerance ||
                  (rep.stop_reason == StopReason::budget && !cfg.strict_convergence);
  rep.gar_after = good_angle_ratio(res.mesh);
  rep.volume = enclosed_volume(res.mesh);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

namespace {

SamplingOptions sampling_options(const FitConfig& cfg) {
  SamplingOptions s;
  s.n_fg = cfg.n_fg;
  s.n_bg = cfg.n_bg;
  s.bg_band = cfg.bg_band;
  s.seed = Rng::derive(cfg.seed, 0);
  return s;
}

}  // namespace

FitResult fit_ghd(const TriMesh& canonical, const LabelVolume& supervision, const FitConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  FitResult res = fit_points(canonical, sample_points(supervision, sampling_options(cfg)), cfg);
  res.report.metrics = evaluate(res.mesh, supervision, cfg.eval);
  res.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

FitResult fit_ghd(const TriMesh& canonical, const SliceStack& supervision, const FitConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  FitResult res = fit_points(canonical, sample_points(supervision, sampling_options(cfg)), cfg);
  res.report.metrics = evaluate(res.mesh, supervision, cfg.eval);
  res.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

json to_json(const FitReport& r, const FitConfig& cfg) {
  json trace = json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iteration", t.iteration},
                     {"beta", t.beta},
                     {"loss", t.loss},
                     {"dice", t.dice},
                     {"thickness", t.thickness},
                     {"grad_norm", t.grad_norm}});
  }
  const auto& p = r.rigid.pose;
  json j;
  j["format"] = "ghd-fit-report";
  j["version"] = 1;
  j["parameterization"] = parameterization_name(r.parameterization);
  j["iterations_run"] = r.iterations_run;
  j["stop_reason"] = stop_reason_name(r.stop_reason);
  j["converged"] = r.converged;
  j["final_loss"] = r.trace.empty() ? json(nullptr) : json(r.trace.back().loss);
  j["num_points"] = r.num_points;
  j["sampling_insufficient"] = r.sampling_insufficient;
  j["rigid"] = {{"rotation_wxyz", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
                {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
                {"scale", p.scale},
                {"pivot", {p.pivot.x(), p.pivot.y(), p.pivot.z()}},
                {"loss", r.rigid.loss},
                {"restart", r.rigid.restart},
                {"diverged", r.rigid.diverged}};
  j["metrics"] = to_json(r.metrics);
  j["dice_3d"] = r.metrics.dice_3d ? json(*r.metrics.dice_3d) : json(nullptr);
  j["gar_before"] = r.gar_before;
  j["gar_after"] = r.gar_after;
  j["volume"] = r.volume;
  j["trace"] = trace;
  j["config"] = to_json(cfg);
  j["timing"] = {{"timestamp", r.timestamp}, {"seconds", r.seconds}};
  return j;
}

void write_trace_csv(const FitReport& r, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "iteration,beta,loss,dice,thickness,grad_norm\n";
  out << std::setprecision(17);
  for (const auto& t : r.trace) {
    out << t.iteration << ',' << t.beta << ',' << t.loss << ',' << t.dice << ',' << t.thickness << ',' << t.grad_norm
        << '\n';
  }
}

json coefficients_to_json(const GhdCoefficients& c, Parameterization p) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < c.rows(); ++i) rows.push_back({c(i, 0), c(i, 1), c(i, 2)});
  return {{"format", "ghd-coefficients"}, {"parameterization", parameterization_name(p)}, {"modes", c.rows()},
          {"coefficients", rows}};
}

GhdCoefficients coefficients_from_json(const json& j) {
  try {
    const auto& rows = j.at("coefficients");
    GhdCoefficients c(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != 3) throw FormatError("coefficient row " + std::to_string(i) + " must have 3 entries");
      for (int d = 0; d < 3; ++d) c(static_cast<Eigen::Index>(i), d) = rows[i][static_cast<std::size_t>(d)].get<double>();
    }
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("coefficients: ") + e.what());
  }
}

double ejection_fraction(double v_ed, double v_es) {
  if (!(v_ed > 0)) throw ValidationError("ejection_fraction: end-diastolic volume must be positive");
  if (v_es < 0 || v_es > v_ed) log_warn("ejection_fraction: end-systolic volume ", v_es, " outside [0, ", v_ed, "]");
  return (v_ed - v_es) / v_ed;
}

}  // namespace ghd
