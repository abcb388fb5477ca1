#pragma once

// Ground truth for a planar-bending continuum robot with a time-varying curvature
// amplitude, and synthesis of noisy asynchronous sensor readings.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "stgp/errors.hpp"
#include "stgp/graph.hpp"
#include "stgp/liegroup.hpp"
#include "stgp/measurement.hpp"
#include "stgp/prior.hpp"
#include "stgp/sensors.hpp"
#include "stgp/solver.hpp"

namespace stgp {

/// Body strain field eps(s, t) = (1, 0, 0, omega_x, omega_y, kappa(s, t)) with
/// kappa = kappa0 + kappa_amp * sin(2 pi t / period) * s / L.
struct TruthParams {
  double kappa0 = 0.0;     // 1/m
  double kappa_amp = 0.0;  // 1/m
  double period = 1.0;     // s
  double omega_x = 0.0;    // 1/m, torsion
  double omega_y = 0.0;    // 1/m, out-of-plane bending
};

struct SensorSpec {
  SensorKind kind = SensorKind::position3;
  double noise_std = 0.0;
  // Schedule: every grid node, or rate-based at the listed arclengths, or explicit (s, t) points.
  bool at_nodes = false;
  double rate_hz = 0.0;
  std::vector<double> arclengths;
  std::vector<std::pair<double, double>> points;
  std::array<bool, 6> mask{true, true, true, true, true, true};

  bool operator==(const SensorSpec&) const = default;
};

enum class InitMode { prior_mean, measurements };

struct ScenarioConfig {
  int schema_version = 1;
  double length = 1.0;  // m
  std::size_t n_space = 2;
  std::size_t n_time = 2;
  double duration = 1.0;  // s
  PriorParams prior;
  TruthParams truth;
  std::vector<SensorSpec> sensors;
  std::uint64_t seed = 0;
  SolverOptions solver;
  int refinement = 8;
  InitMode init = InitMode::prior_mean;
};

inline void validate(const ScenarioConfig& c) {
  if (!(c.length > 0.0) || !std::isfinite(c.length)) throw InvalidArgument("config: length must be > 0");
  if (c.n_space < 1 || c.n_time < 1) throw InvalidArgument("config: grid sizes must be >= 1");
  if (!(c.duration > 0.0) && c.n_time > 1) throw InvalidArgument("config: duration must be > 0");
  if (c.duration < 0.0) throw InvalidArgument("config: duration must be >= 0");
  if (!(c.truth.period > 0.0)) throw InvalidArgument("config: truth period must be > 0");
  if (c.refinement < 1) throw InvalidArgument("config: refinement must be >= 1");
  if (c.solver.max_iters < 1 || !(c.solver.tol > 0.0) || c.solver.max_halvings < 0) {
    throw InvalidArgument("config: invalid solver options");
  }
  for (const auto& s : c.sensors) {
    if (!(s.noise_std >= 0.0)) throw InvalidArgument("config: sensor noise std must be >= 0");
    if (!s.at_nodes && s.points.empty() && !(s.rate_hz > 0.0)) {
      throw InvalidArgument("config: sensor needs at_nodes, explicit points, or a rate > 0");
    }
    if (s.rate_hz > 0.0 && s.arclengths.empty()) throw InvalidArgument("config: rate-based sensor needs arclengths");
    for (double a : s.arclengths)
      if (a < 0.0 || a > c.length) throw InvalidArgument("config: sensor arclength outside [0, L]");
    for (const auto& [ps, pt] : s.points)
      if (ps < 0.0 || ps > c.length || pt < 0.0 || pt > c.duration) {
        throw InvalidArgument("config: sensor point outside the hull");
      }
    if (s.kind == SensorKind::strain6 && std::none_of(s.mask.begin(), s.mask.end(), [](bool b) { return b; })) {
      throw InvalidArgument("config: strain sensor mask selects no component");
    }
  }
  validate(c.prior);
}

inline std::vector<double> uniform_knots(double length, std::size_t count) {
  std::vector<double> k(count);
  for (std::size_t i = 0; i < count; ++i) {
    k[i] = count == 1 ? 0.0 : (i + 1 == count ? length : length * static_cast<double>(i) / static_cast<double>(count - 1));
  }
  return k;
}

inline std::vector<double> s_knots(const ScenarioConfig& c) { return uniform_knots(c.length, c.n_space); }
inline std::vector<double> t_knots(const ScenarioConfig& c) { return uniform_knots(c.duration, c.n_time); }

inline Twist strain_field(double s, double t, const ScenarioConfig& c) {
  if (!(s >= 0.0 && s <= c.length)) throw InvalidArgument("strain_field: arclength out of range");
  const double kappa = c.truth.kappa0 + c.truth.kappa_amp * std::sin(2.0 * M_PI * t / c.truth.period) * (s / c.length);
  Twist e;
  e << 1.0, 0.0, 0.0, c.truth.omega_x, c.truth.omega_y, kappa;
  return e;
}

/// Pose at arclength s using `steps` fourth-order Magnus steps of the body strain
/// (two-point Gauss-Legendre nodes), base pose identity.
inline Pose integrate_pose_steps(const ScenarioConfig& c, double s, double t, std::size_t steps) {
  if (!(s >= 0.0 && s <= c.length)) throw InvalidArgument("integrate_pose: arclength out of range");
  Pose pose;
  if (s == 0.0) return pose;
  steps = std::max<std::size_t>(steps, 1);
  const double h = s / static_cast<double>(steps);
  const double c1 = 0.5 - std::sqrt(3.0) / 6.0;
  const double c2 = 0.5 + std::sqrt(3.0) / 6.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double s0 = h * static_cast<double>(i);
    const Twist a1 = strain_field(std::min(s0 + c1 * h, c.length), t, c);
    const Twist a2 = strain_field(std::min(s0 + c2 * h, c.length), t, c);
    const Twist omega = 0.5 * h * (a1 + a2) + (std::sqrt(3.0) / 12.0) * h * h * curlyhat<double>(a1) * a2;
    pose = pose * se3_exp(omega);
  }
  return pose;
}

inline double integration_step(const ScenarioConfig& c) {
  return c.length / (8.0 * static_cast<double>(std::max<std::size_t>(c.n_space, 1)) * c.refinement);
}

inline Pose integrate_pose(const ScenarioConfig& c, double s, double t) {
  const auto steps = static_cast<std::size_t>(std::ceil(s / integration_step(c) - 1e-9));
  return integrate_pose_steps(c, s, t, steps);
}

namespace sim_detail {

// Left-convention strain at (s, t).
inline Twist left_strain(const ScenarioConfig& c, const Pose& pose, double s, double t) {
  return adjoint(pose) * strain_field(s, t, c);
}

}  // namespace sim_detail

/// Full ground-truth node state. Velocity and strain-velocity are central differences in time
/// with step delta (default 1e-5 * period); second-order one-sided near the ends of [0, duration].
inline NodeState ground_truth_state(const ScenarioConfig& c, double s, double t, double delta = -1.0) {
  if (delta <= 0.0) delta = 1e-5 * c.truth.period;
  NodeState x;
  x.pose = integrate_pose(c, s, t);
  x.strain = sim_detail::left_strain(c, x.pose, s, t);
  auto pose_at = [&](double tt) { return integrate_pose(c, s, tt); };
  auto strain_at = [&](double tt, const Pose& p) { return sim_detail::left_strain(c, p, s, tt); };
  const bool fwd = t - delta < 0.0;
  const bool bwd = t + delta > c.duration;
  if (!fwd && !bwd) {
    const Pose tp = pose_at(t + delta);
    const Pose tm = pose_at(t - delta);
    x.velocity = se3_log(tp * tm.inverse()) / (2.0 * delta);
    x.strain_velocity = (strain_at(t + delta, tp) - strain_at(t - delta, tm)) / (2.0 * delta);
  } else {
    const double h = fwd ? delta : -delta;
    const Pose p1 = pose_at(t + h);
    const Pose p2 = pose_at(t + 2.0 * h);
    const Pose inv = x.pose.inverse();
    x.velocity = (4.0 * se3_log(p1 * inv) - se3_log(p2 * inv)) / (2.0 * h);
    x.strain_velocity = (-3.0 * x.strain + 4.0 * strain_at(t + h, p1) - strain_at(t + 2.0 * h, p2)) / (2.0 * h);
  }
  return x;
}

/// Ground truth realized on a lattice `refinement` times denser than the estimation grid.
inline Grid realize_ground_truth(const ScenarioConfig& c, int refinement) {
  const std::size_t ns = (c.n_space - 1) * static_cast<std::size_t>(refinement) + 1;
  const std::size_t nt = (c.n_time - 1) * static_cast<std::size_t>(refinement) + 1;
  return build_grid(uniform_knots(c.length, ns), uniform_knots(c.duration, nt),
                    [&](double s, double t) { return ground_truth_state(c, s, t); });
}

/// Ground truth at the estimation knots.
inline Grid ground_truth_grid(const ScenarioConfig& c) {
  return build_grid(s_knots(c), t_knots(c), [&](double s, double t) { return ground_truth_state(c, s, t); });
}

// ---------------------------------------------------------------------------

/// Sample times of a rate-based sensor: 0, 1/rate, ... up to duration inclusive.
inline std::vector<double> rate_schedule(double rate_hz, double duration) {
  const auto count = static_cast<std::size_t>(std::floor(duration * rate_hz + 1e-9)) + 1;
  std::vector<double> t(count);
  for (std::size_t i = 0; i < count; ++i) t[i] = std::min(duration, static_cast<double>(i) / rate_hz);
  return t;
}

inline std::vector<std::pair<double, double>> sensor_schedule(const ScenarioConfig& c, const SensorSpec& spec) {
  std::vector<std::pair<double, double>> pts;
  if (spec.at_nodes) {
    const auto sk = s_knots(c);
    const auto tk = t_knots(c);
    for (double t : tk)
      for (double s : sk) pts.emplace_back(s, t);
  }
  if (spec.rate_hz > 0.0) {
    for (double t : rate_schedule(spec.rate_hz, c.duration))
      for (double s : spec.arclengths) pts.emplace_back(s, t);
  }
  pts.insert(pts.end(), spec.points.begin(), spec.points.end());
  return pts;
}

/// Lower bound used for the stored covariance of noise-free sensors.
inline constexpr double kMinNoiseStd = 1e-6;

/// Deterministic for a fixed seed: a single mt19937_64 stream drawn in sensor-then-schedule order.
inline std::vector<Measurement> generate_measurements(const ScenarioConfig& c) {
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Measurement> out;
  for (const auto& spec : c.sensors) {
    const int dim = sensor_dim(spec.kind);
    const double cov_std = std::max(spec.noise_std, kMinNoiseStd);
    for (const auto& [s, t] : sensor_schedule(c, spec)) {
      Eigen::VectorXd noise(dim);
      for (int i = 0; i < dim; ++i) noise(i) = spec.noise_std * normal(rng);
      NodeState x;
      if (spec.kind == SensorKind::gyro3) {
        x = ground_truth_state(c, s, t);
      } else if (spec.kind != SensorKind::strain6) {
        x.pose = integrate_pose(c, s, t);
      }
      Measurement m;
      m.kind = spec.kind;
      m.s = s;
      m.t = t;
      m.mask = spec.mask;
      m.noise_cov = cov_std * cov_std * Eigen::MatrixXd::Identity(dim, dim);
      switch (spec.kind) {
        case SensorKind::strain6:
          m.value = strain_field(s, t, c) + noise;
          break;
        case SensorKind::gyro3:
          m.value = x.pose.rotation().transpose() * x.velocity.tail<3>() + noise;
          break;
        case SensorKind::position3:
          m.value = x.pose.translation() + noise;
          break;
        case SensorKind::pose6:
          m.pose = se3_exp(noise) * x.pose;
          break;
      }
      out.push_back(std::move(m));
    }
  }
  return out;
}

/// Builds the factor graph for `meas` on the configured grid and runs Gauss-Newton.
inline Posterior estimate(const ScenarioConfig& c, const std::vector<Measurement>& meas) {
  validate(c);
  Grid g = c.init == InitMode::measurements ? measurement_seeded_grid(s_knots(c), t_knots(c), meas, c.prior)
                                            : build_grid(s_knots(c), t_knots(c), c.prior);
  FactorSet fs = build_prior_factors(g, c.prior);
  add_measurements(fs, meas, g, c.prior);
  return gauss_newton(std::move(g), fs, c.prior, c.solver);
}

}  // namespace stgp
