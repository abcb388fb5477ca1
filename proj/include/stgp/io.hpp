#pragma once

// Config / measurement JSON, CSV exports and the binary posterior file.
//
// posterior.bin layout (little-endian, no padding):
//   char[8]  magic "STGPPOST"
//   u32      major version (1), u32 minor version (0)
//   u64      N, u64 K
//   f64[N]   s knots, f64[K] t knots
//   f64[36]  qs_psd, f64[36] qt_psd, f64[36] qst_psd, f64[576] p0   (column-major)
//   state    prior mean at (s0, t0)
//   state[N*K] node states, flattened index k*N + n
//   u8       1 if covariance blocks follow, else 0
//   f64[576] x N*K node marginals
//   u64      cell count; per cell: u64 m, u64[m] node indices, f64[(24m)^2] joint covariance
// where a state is 30 f64: rotation (9, column-major), translation (3), strain, velocity,
// strain_velocity (6 each).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "json.hpp"
#include "stgp/errors.hpp"
#include "stgp/query.hpp"
#include "stgp/sim.hpp"
#include "stgp/solver.hpp"

namespace stgp {

inline constexpr int kSchemaMajor = 1;

using Json = nlohmann::json;

namespace io_detail {

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const Json::exception& e) {
    throw InvalidArgument(std::string(what) + ": " + e.what());
  }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* key : keys) ok = ok || k == key;
    if (!ok) throw InvalidArgument(where + ": unknown key '" + k + "'");
  }
}

inline void check_major(const Json& j, const std::string& where) {
  if (!j.contains("schema_version")) throw InvalidArgument(where + ": missing schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != kSchemaMajor) throw InvalidArgument(where + ": unsupported schema_version " + std::to_string(v));
}

inline Json vec_json(const Eigen::Ref<const Eigen::VectorXd>& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::VectorXd vec_from(const Json& j, Eigen::Index dim, const std::string& where) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) {
    throw InvalidArgument(where + ": expected an array of " + std::to_string(dim) + " numbers");
  }
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

/// Scalar (times identity), diagonal, or full row-major matrix; chooses the shortest exact form.
inline Json mat_json(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  if (m.size() == 0) return Json::array();
  const Eigen::MatrixXd off = m - Eigen::MatrixXd(m.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() == 0.0) {
    if ((m.diagonal().array() == m(0, 0)).all()) return m(0, 0);
    return vec_json(m.diagonal());
  }
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec_json(m.row(r).transpose()));
  return rows;
}

inline Eigen::MatrixXd mat_from(const Json& j, Eigen::Index dim, const std::string& where) {
  if (j.is_number()) return j.get<double>() * Eigen::MatrixXd::Identity(dim, dim);
  if (j.is_array() && static_cast<Eigen::Index>(j.size()) == dim && (dim == 0 || j[0].is_number())) {
    return vec_from(j, dim, where).asDiagonal();
  }
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != dim) {
    throw InvalidArgument(where + ": expected a number, " + std::to_string(dim) + " diagonal entries or " +
                          std::to_string(dim) + " rows");
  }
  Eigen::MatrixXd m(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r) m.row(r) = vec_from(j[static_cast<std::size_t>(r)], dim, where).transpose();
  return m;
}

inline Json rotation_json(const Mat3& r) {
  Json rows = Json::array();
  for (int i = 0; i < 3; ++i) rows.push_back(vec_json(r.row(i).transpose()));
  return rows;
}

inline Mat3 rotation_from(const Json& j, const std::string& where) {
  Mat3 r;
  if (!j.is_array() || j.size() != 3) throw InvalidArgument(where + ": rotation must be 3 rows");
  for (int i = 0; i < 3; ++i) r.row(i) = vec_from(j[static_cast<std::size_t>(i)], 3, where).transpose();
  if (!is_rotation(r)) throw InvalidArgument(where + ": rotation is not orthonormal");
  return r;
}

inline Mat3 quaternion_rotation(const Json& j, const std::string& where) {
  const Eigen::VectorXd q = vec_from(j, 4, where);
  if (!(q.norm() > 0.0)) throw InvalidArgument(where + ": zero quaternion");
  return Eigen::Quaterniond(q(0), q(1), q(2), q(3)).normalized().toRotationMatrix();
}

inline Json state_json(const NodeState& x) {
  return {{"rotation", rotation_json(x.pose.rotation())},
          {"translation", vec_json(x.pose.translation())},
          {"strain", vec_json(x.strain)},
          {"velocity", vec_json(x.velocity)},
          {"strain_velocity", vec_json(x.strain_velocity)}};
}

inline NodeState state_from(const Json& j, const std::string& where) {
  reject_unknown(j, {"rotation", "quaternion", "translation", "strain", "velocity", "strain_velocity"}, where);
  NodeState x;
  Mat3 r = Mat3::Identity();
  Vec3 p = Vec3::Zero();
  if (j.contains("rotation") && j.contains("quaternion")) throw InvalidArgument(where + ": rotation and quaternion both given");
  if (j.contains("rotation")) r = rotation_from(j["rotation"], where + ".rotation");
  if (j.contains("quaternion")) r = quaternion_rotation(j["quaternion"], where + ".quaternion");
  if (j.contains("translation")) p = vec_from(j["translation"], 3, where + ".translation");
  x.pose = Pose(r, p);
  if (j.contains("strain")) x.strain = vec_from(j["strain"], 6, where + ".strain");
  if (j.contains("velocity")) x.velocity = vec_from(j["velocity"], 6, where + ".velocity");
  if (j.contains("strain_velocity")) x.strain_velocity = vec_from(j["strain_velocity"], 6, where + ".strain_velocity");
  return x;
}

inline Json mask_json(const std::array<bool, 6>& m) {
  Json a = Json::array();
  for (bool b : m) a.push_back(b);
  return a;
}

inline std::array<bool, 6> mask_from(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 6) throw InvalidArgument(where + ": mask must have 6 booleans");
  std::array<bool, 6> m{};
  for (std::size_t i = 0; i < 6; ++i) m[i] = j[i].get<bool>();
  return m;
}

inline std::size_t count_from(const Json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j[key].get<std::int64_t>();
  if (v < 1) throw InvalidArgument(std::string("config: ") + key + " must be >= 1");
  return static_cast<std::size_t>(v);
}

inline const char* init_name(InitMode m) { return m == InitMode::measurements ? "measurements" : "prior_mean"; }

inline InitMode init_from(const std::string& s) {
  if (s == "prior_mean") return InitMode::prior_mean;
  if (s == "measurements") return InitMode::measurements;
  throw InvalidArgument("config: unknown init '" + s + "'");
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Config

inline Json config_to_json(const ScenarioConfig& c) {
  using namespace io_detail;
  Json sensors = Json::array();
  for (const auto& s : c.sensors) {
    Json pts = Json::array();
    for (const auto& [ps, pt] : s.points) pts.push_back({ps, pt});
    sensors.push_back({{"kind", to_string(s.kind)},
                       {"noise_std", s.noise_std},
                       {"at_nodes", s.at_nodes},
                       {"rate_hz", s.rate_hz},
                       {"arclengths", s.arclengths},
                       {"points", pts},
                       {"mask", mask_json(s.mask)}});
  }
  return {{"schema_version", c.schema_version},
          {"length", c.length},
          {"n_space", c.n_space},
          {"n_time", c.n_time},
          {"duration", c.duration},
          {"seed", c.seed},
          {"refinement", c.refinement},
          {"init", init_name(c.init)},
          {"prior",
           {{"qs_psd", mat_json(c.prior.qs_psd)},
            {"qt_psd", mat_json(c.prior.qt_psd)},
            {"qst_psd", mat_json(c.prior.qst_psd)},
            {"p0", mat_json(c.prior.p0)},
            {"mean", state_json(c.prior.prior_mean_0)}}},
          {"truth",
           {{"kappa0", c.truth.kappa0},
            {"kappa_amp", c.truth.kappa_amp},
            {"period", c.truth.period},
            {"omega_x", c.truth.omega_x},
            {"omega_y", c.truth.omega_y}}},
          {"sensors", sensors},
          {"solver",
           {{"max_iters", c.solver.max_iters},
            {"tol", c.solver.tol},
            {"max_halvings", c.solver.max_halvings},
            {"compute_covariance", c.solver.compute_covariance}}}};
}

/// Missing keys keep their defaults; unknown keys and unsupported schema versions are rejected.
inline ScenarioConfig config_from_json(const Json& j) {
  using namespace io_detail;
  return guarded("config", [&] {
    reject_unknown(j, {"schema_version", "length", "n_space", "n_time", "duration", "seed", "refinement", "init",
                       "prior", "truth", "sensors", "solver"},
                   "config");
    check_major(j, "config");
    ScenarioConfig c;
    c.schema_version = j.at("schema_version").get<int>();
    c.length = j.value("length", c.length);
    c.n_space = count_from(j, "n_space", c.n_space);
    c.n_time = count_from(j, "n_time", c.n_time);
    c.duration = j.value("duration", c.duration);
    c.seed = j.value("seed", c.seed);
    c.refinement = j.value("refinement", c.refinement);
    if (j.contains("init")) c.init = init_from(j["init"].get<std::string>());
    if (j.contains("prior")) {
      const Json& p = j["prior"];
      reject_unknown(p, {"qs_psd", "qt_psd", "qst_psd", "p0", "mean"}, "config.prior");
      if (p.contains("qs_psd")) c.prior.qs_psd = mat_from(p["qs_psd"], 6, "config.prior.qs_psd");
      if (p.contains("qt_psd")) c.prior.qt_psd = mat_from(p["qt_psd"], 6, "config.prior.qt_psd");
      if (p.contains("qst_psd")) c.prior.qst_psd = mat_from(p["qst_psd"], 6, "config.prior.qst_psd");
      if (p.contains("p0")) c.prior.p0 = mat_from(p["p0"], 24, "config.prior.p0");
      if (p.contains("mean")) c.prior.prior_mean_0 = state_from(p["mean"], "config.prior.mean");
    }
    if (j.contains("truth")) {
      const Json& t = j["truth"];
      reject_unknown(t, {"kappa0", "kappa_amp", "period", "omega_x", "omega_y"}, "config.truth");
      c.truth.kappa0 = t.value("kappa0", c.truth.kappa0);
      c.truth.kappa_amp = t.value("kappa_amp", c.truth.kappa_amp);
      c.truth.period = t.value("period", c.truth.period);
      c.truth.omega_x = t.value("omega_x", c.truth.omega_x);
      c.truth.omega_y = t.value("omega_y", c.truth.omega_y);
    }
    if (j.contains("sensors")) {
      for (const Json& s : j["sensors"]) {
        reject_unknown(s, {"kind", "noise_std", "at_nodes", "rate_hz", "arclengths", "points", "mask"}, "config.sensors");
        SensorSpec spec;
        spec.kind = sensor_kind_from_string(s.at("kind").get<std::string>());
        spec.noise_std = s.value("noise_std", spec.noise_std);
        spec.at_nodes = s.value("at_nodes", spec.at_nodes);
        spec.rate_hz = s.value("rate_hz", spec.rate_hz);
        if (s.contains("arclengths")) spec.arclengths = s["arclengths"].get<std::vector<double>>();
        if (s.contains("points")) {
          for (const Json& pt : s["points"]) {
            if (!pt.is_array() || pt.size() != 2) throw InvalidArgument("config.sensors: points are [s, t] pairs");
            spec.points.emplace_back(pt[0].get<double>(), pt[1].get<double>());
          }
        }
        if (s.contains("mask")) spec.mask = mask_from(s["mask"], "config.sensors.mask");
        c.sensors.push_back(std::move(spec));
      }
    }
    if (j.contains("solver")) {
      const Json& s = j["solver"];
      reject_unknown(s, {"max_iters", "tol", "max_halvings", "compute_covariance"}, "config.solver");
      c.solver.max_iters = s.value("max_iters", c.solver.max_iters);
      c.solver.tol = s.value("tol", c.solver.tol);
      c.solver.max_halvings = s.value("max_halvings", c.solver.max_halvings);
      c.solver.compute_covariance = s.value("compute_covariance", c.solver.compute_covariance);
    }
    validate(c);
    return c;
  });
}

inline ScenarioConfig parse_config(const std::string& text) {
  return config_from_json(io_detail::guarded("config", [&] { return Json::parse(text); }));
}

// ---------------------------------------------------------------------------
// Measurements

inline Json measurements_to_json(const std::vector<Measurement>& meas) {
  using namespace io_detail;
  Json arr = Json::array();
  for (const auto& m : meas) {
    Json e = {{"kind", to_string(m.kind)}, {"s", m.s}, {"t", m.t}};
    if (m.kind == SensorKind::pose6) {
      e["rotation"] = rotation_json(m.pose.rotation());
      e["translation"] = vec_json(m.pose.translation());
    } else {
      e["value"] = vec_json(m.value);
    }
    if (m.kind == SensorKind::strain6) e["mask"] = mask_json(m.mask);
    e["noise_cov"] = mat_json(m.noise_cov);
    arr.push_back(std::move(e));
  }
  return {{"schema_version", kSchemaMajor}, {"measurements", arr}};
}

inline std::vector<Measurement> measurements_from_json(const Json& j) {
  using namespace io_detail;
  return guarded("measurements", [&] {
    reject_unknown(j, {"schema_version", "measurements"}, "measurements");
    check_major(j, "measurements");
    std::vector<Measurement> out;
    for (const Json& e : j.at("measurements")) {
      reject_unknown(e, {"kind", "s", "t", "value", "rotation", "translation", "mask", "noise_cov"}, "measurement");
      Measurement m;
      m.kind = sensor_kind_from_string(e.at("kind").get<std::string>());
      m.s = e.at("s").get<double>();
      m.t = e.at("t").get<double>();
      const int dim = sensor_dim(m.kind);
      if (m.kind == SensorKind::pose6) {
        m.pose = Pose(rotation_from(e.at("rotation"), "measurement.rotation"),
                      vec_from(e.at("translation"), 3, "measurement.translation"));
      } else {
        m.value = vec_from(e.at("value"), dim, "measurement.value");
      }
      if (e.contains("mask")) m.mask = mask_from(e["mask"], "measurement.mask");
      m.noise_cov = mat_from(e.at("noise_cov"), dim, "measurement.noise_cov");
      validate(m);
      out.push_back(std::move(m));
    }
    return out;
  });
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + p.string());
  return ss.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("cannot write " + p.string());
}

inline void ensure_directory(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

inline ScenarioConfig load_config(const std::filesystem::path& p) { return parse_config(read_text(p)); }

inline std::vector<Measurement> load_measurements(const std::filesystem::path& p) {
  const std::string text = read_text(p);
  return measurements_from_json(io_detail::guarded("measurements", [&] { return Json::parse(text); }));
}

inline void save_measurements(const std::filesystem::path& p, const std::vector<Measurement>& meas) {
  write_text(p, measurements_to_json(meas).dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// CSV

/// Unit quaternion (w, x, y, z) with w >= 0.
inline Eigen::Vector4d rotation_quaternion(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  Eigen::Vector4d out(q.w(), q.x(), q.y(), q.z());
  if (out(0) < 0.0) out = -out;
  return out;
}

inline std::string csv_header(bool with_std) {
  std::string h = "s,t,px,py,pz,qw,qx,qy,qz";
  for (const char* blk : {"eps", "vel", "psi"})
    for (int i = 0; i < 6; ++i) h += std::string(",") + blk + "_" + std::to_string(i);
  if (with_std)
    for (int i = 0; i < 24; ++i) h += ",std_" + std::to_string(i);
  return h;
}

inline std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
  return buf;
}

/// One row; `stddev` null writes only the state columns, NaN entries mean "not computed".
inline std::string csv_row(double s, double t, const NodeState& x, const Vec24* stddev) {
  std::string row = csv_number(s) + "," + csv_number(t);
  auto put = [&](const Eigen::Ref<const Eigen::VectorXd>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) row += "," + csv_number(v(i));
  };
  put(x.pose.translation());
  put(rotation_quaternion(x.pose.rotation()));
  put(x.strain);
  put(x.velocity);
  put(x.strain_velocity);
  if (stddev) put(*stddev);
  return row;
}

inline Vec24 marginal_std(const Mat24& cov) { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }

inline Vec24 missing_std() { return Vec24::Constant(std::numeric_limits<double>::quiet_NaN()); }

inline std::string estimate_csv(const Posterior& post) {
  const Grid& g = post.grid;
  std::string out = csv_header(true) + "\n";
  for (std::size_t k = 0; k < g.n_time(); ++k)
    for (std::size_t n = 0; n < g.n_space(); ++n) {
      const std::size_t i = g.index(n, k);
      const Vec24 sd = post.has_covariance() ? marginal_std(post.marginals[i]) : missing_std();
      out += csv_row(g.s_knots[n], g.t_knots[k], g.states[i], &sd) + "\n";
    }
  return out;
}

inline std::string grid_csv(const Grid& g) {
  std::string out = csv_header(false) + "\n";
  for (std::size_t k = 0; k < g.n_time(); ++k)
    for (std::size_t n = 0; n < g.n_space(); ++n) out += csv_row(g.s_knots[n], g.t_knots[k], g.at(n, k), nullptr) + "\n";
  return out;
}

inline std::string query_row(const Posterior& post, double s, double t) {
  const CellLocation loc = locate(post.grid, s, t);
  const NodeState x = query_mean(post, loc);
  const Vec24 sd = post.has_covariance() ? marginal_std(query_covariance(post, loc)) : missing_std();
  return csv_row(s, t, x, &sd);
}

// ---------------------------------------------------------------------------
// Report

inline Json report_json(const Posterior& post, std::size_t measurement_count, double total_seconds) {
  const ConvergenceReport& r = post.report;
  return {{"schema_version", kSchemaMajor},
          {"status", r.status},
          {"converged", r.converged},
          {"iterations", r.iterations},
          {"final_cost", r.final_cost},
          {"cost_trace", r.cost_trace},
          {"step_norms", r.step_norms},
          {"nodes", post.grid.size()},
          {"measurements", measurement_count},
          {"timing", {{"solve_seconds", r.seconds}, {"total_seconds", total_seconds}}}};
}

// ---------------------------------------------------------------------------
// posterior.bin

inline constexpr char kPosteriorMagic[8] = {'S', 'T', 'G', 'P', 'P', 'O', 'S', 'T'};
inline constexpr std::uint32_t kPosteriorMajor = 1;
inline constexpr std::uint32_t kPosteriorMinor = 0;

namespace io_detail {

class BinWriter {
 public:
  explicit BinWriter(std::ostream& os) : os_(os) {}
  template <typename T>
  void pod(const T& v) { os_.write(reinterpret_cast<const char*>(&v), sizeof(T)); }
  void doubles(const double* p, std::size_t n) { os_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double))); }
  template <typename M>
  void mat(const M& m) {
    const Eigen::MatrixXd d = m;
    doubles(d.data(), static_cast<std::size_t>(d.size()));
  }
  void state(const NodeState& x) {
    mat(x.pose.rotation());
    mat(x.pose.translation());
    mat(x.strain);
    mat(x.velocity);
    mat(x.strain_velocity);
  }

 private:
  std::ostream& os_;
};

class BinReader {
 public:
  BinReader(std::istream& is, std::string name) : is_(is), name_(std::move(name)) {}
  template <typename T>
  T pod() {
    T v{};
    read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
  }
  Eigen::MatrixXd mat(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    read(reinterpret_cast<char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
    return m;
  }
  NodeState state() {
    NodeState x;
    const Mat3 r = mat(3, 3);
    const Vec3 p = mat(3, 1);
    x.pose = Pose(r, p);
    x.strain = mat(6, 1);
    x.velocity = mat(6, 1);
    x.strain_velocity = mat(6, 1);
    return x;
  }
  std::uint64_t count(std::uint64_t limit, const char* what) {
    const auto v = pod<std::uint64_t>();
    if (v > limit) throw IoError(name_ + ": implausible " + what + " " + std::to_string(v));
    return v;
  }

 private:
  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw IoError(name_ + ": truncated file");
  }
  std::istream& is_;
  std::string name_;
};

}  // namespace io_detail

inline void save_posterior(const std::filesystem::path& p, const Posterior& post) {
  static_assert(std::endian::native == std::endian::little, "posterior.bin is little-endian");
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  io_detail::BinWriter w(os);
  const Grid& g = post.grid;
  os.write(kPosteriorMagic, sizeof kPosteriorMagic);
  w.pod(kPosteriorMajor);
  w.pod(kPosteriorMinor);
  w.pod(static_cast<std::uint64_t>(g.n_space()));
  w.pod(static_cast<std::uint64_t>(g.n_time()));
  w.doubles(g.s_knots.data(), g.s_knots.size());
  w.doubles(g.t_knots.data(), g.t_knots.size());
  w.mat(post.params.qs_psd);
  w.mat(post.params.qt_psd);
  w.mat(post.params.qst_psd);
  w.mat(post.params.p0);
  w.state(post.params.prior_mean_0);
  for (const auto& x : g.states) w.state(x);
  w.pod(static_cast<std::uint8_t>(post.has_covariance() ? 1 : 0));
  if (post.has_covariance()) {
    for (const auto& m : post.marginals) w.mat(m);
    w.pod(static_cast<std::uint64_t>(post.cell_joints.size()));
    for (const auto& cj : post.cell_joints) {
      w.pod(static_cast<std::uint64_t>(cj.nodes.size()));
      for (std::size_t n : cj.nodes) w.pod(static_cast<std::uint64_t>(n));
      w.mat(cj.covariance);
    }
  }
  os.flush();
  if (!os) throw IoError("cannot write " + p.string());
}

/// Throws IoError on a missing/truncated file, a wrong magic or an unsupported major version.
inline Posterior load_posterior(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string());
  const std::string name = p.string();
  io_detail::BinReader r(is, name);
  char magic[8];
  is.read(magic, sizeof magic);
  if (is.gcount() != sizeof magic || std::memcmp(magic, kPosteriorMagic, sizeof magic) != 0) {
    throw IoError(name + ": not a posterior file");
  }
  const auto major = r.pod<std::uint32_t>();
  r.pod<std::uint32_t>();
  if (major != kPosteriorMajor) throw IoError(name + ": unsupported major version " + std::to_string(major));
  constexpr std::uint64_t kMaxKnots = 1u << 24;
  const auto N = r.count(kMaxKnots, "knot count");
  const auto K = r.count(kMaxKnots, "knot count");
  if (N == 0 || K == 0 || N * K > kMaxKnots) throw IoError(name + ": implausible grid size");
  Posterior post;
  Grid& g = post.grid;
  g.s_knots.resize(N);
  g.t_knots.resize(K);
  for (auto& v : g.s_knots) v = r.pod<double>();
  for (auto& v : g.t_knots) v = r.pod<double>();
  post.params.qs_psd = r.mat(6, 6);
  post.params.qt_psd = r.mat(6, 6);
  post.params.qst_psd = r.mat(6, 6);
  post.params.p0 = r.mat(24, 24);
  post.params.prior_mean_0 = r.state();
  g.states.resize(N * K);
  for (auto& x : g.states) x = r.state();
  if (r.pod<std::uint8_t>()) {
    post.marginals.resize(N * K);
    for (auto& m : post.marginals) m = r.mat(24, 24);
    const auto cells = r.count(N * K, "cell count");
    post.cell_joints.resize(cells);
    for (auto& cj : post.cell_joints) {
      const auto m = r.count(4, "corner count");
      for (std::uint64_t a = 0; a < m; ++a) {
        const auto idx = r.count(N * K - 1, "node index");
        cj.nodes.push_back(static_cast<std::size_t>(idx));
      }
      cj.covariance = r.mat(static_cast<Eigen::Index>(24 * m), static_cast<Eigen::Index>(24 * m));
    }
  }
  try {
    validate_knots(g.s_knots, "s_knots");
    validate_knots(g.t_knots, "t_knots");
  } catch (const InvalidArgument& e) {
    throw IoError(name + ": " + e.what());
  }
  post.report.status = "loaded";
  return post;
}

}  // namespace stgp
